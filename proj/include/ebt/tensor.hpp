#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebt {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One value in the recorded computation graph. Owned via shared_ptr by
// Tensor handles and by the backward closures that reference it.
struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // materialized on first contribution
  bool requires_grad = false;
  bool tracked = false;  // counted by memtrack
  std::function<void()> backward;

  Node(Shape s, std::vector<double> v, bool rg);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  void accum_grad_at(int64_t i, double g);
  std::vector<double>& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

// Value handle over a graph node. Copies are shallow and cheap.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->val.size()); }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->val; }
  std::vector<double>& mutable_values() { return node_->val; }
  double item() const;

  // Gradient of a leaf after backward(); zeros if never reached.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Records nodes in construction order; reverse traversal is a valid
// topological order for backward. RAII: construction installs the tape as
// the thread's active tape, destruction restores the previous one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();
  void record(NodePtr n) { nodes_.push_back(std::move(n)); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const std::vector<NodePtr>& nodes() const { return nodes_; }

 private:
  std::vector<NodePtr> nodes_;
  Tape* prev_ = nullptr;
};

// ---- differentiable ops ----------------------------------------------

enum class Unary { sigmoid, gelu, silu };

Tensor elementwise_unary(Unary kind, const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// [n,a] x [a,b] -> [n,b]; 1-D x is treated as a single row.
Tensor matmul(const Tensor& a, const Tensor& b);
// [n,a] x [m,a]^T -> [n,m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// x W + b with b broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor concat(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& x, int64_t offset, int64_t len);
Tensor slice_prefix(const Tensor& x, int64_t k);
// concat(a[0:min(k,d)], b[0:min(k,d)]) without materializing the slices.
Tensor concat_prefix(const Tensor& a, const Tensor& b, int64_t k);

Tensor softmax_masked(const Tensor& logits, const Tensor& mask);
Tensor log_softmax(const Tensor& logits);   // 1-D
Tensor softmax_vec(const Tensor& logits);   // 1-D
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor pick(const Tensor& v, int64_t index);  // 1-D -> scalar
Tensor row(const Tensor& x, int64_t i);       // [n,d] -> [d]
Tensor reshape(const Tensor& x, Shape shape);
Tensor stack_scalars(const std::vector<Tensor>& xs);  // k scalars -> [k]
Tensor stack_rows(const std::vector<Tensor>& xs);     // k [d] -> [k,d]

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);
Tensor gather_entries(const Tensor& table, const std::vector<int64_t>& ids,
                      Shape out_shape);

// sum_i weights[i] * items[i]; items share one shape.
Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights);

// x * scale where scale is a 1-element tensor.
Tensor scale_by(const Tensor& x, const Tensor& s);

// Row-wise x * scale + offset, scale/offset of length last-dim.
Tensor affine_rows(const Tensor& x, const Tensor& g, const Tensor& b);

// Forward: one-hot at `hard_index`; backward: identity into `soft`.
Tensor ste_hard(const Tensor& soft, int64_t hard_index);

// sigmoid(l)*cl + sigmoid(r)*cr + sigmoid(g)*h for gates = [l;r;g;h].
Tensor gated_combine(const Tensor& gates, const Tensor& cl, const Tensor& cr);

// GeLU(feat W1 + b1) W2 + b2 -> scalar, retaining only the hidden
// pre-activation besides the output.
Tensor mlp_score(const Tensor& feat, const Tensor& w1, const Tensor& b1,
                 const Tensor& w2, const Tensor& b2);

// Inverted dropout; call only in training mode.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

void backward(const Tensor& loss);

}  // namespace ebt
