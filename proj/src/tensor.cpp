#include "ebt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ebt/memtrack.hpp"

namespace ebt {

namespace {

thread_local Tape* g_tape = nullptr;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double sigmoid_v(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double gelu_v(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad_v(double x) {
  double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
double silu_v(double x) { return x * sigmoid_v(x); }
double silu_grad_v(double x) {
  double s = sigmoid_v(x);
  return s * (1.0 + x * (1.0 - s));
}

int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

int64_t lead_count(const Shape& s) {
  int64_t n = 1;
  for (size_t i = 0; i + 1 < s.size(); i++) n *= s[i];
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Creates the output node, registers it on the active tape when it carries
// gradient, and wires the given backward closure.
Tensor make_result(Shape shape, std::vector<double> val, bool any_rg,
                   std::function<void(Node&)> make_backward) {
  auto node = std::make_shared<Node>(std::move(shape), std::move(val),
                                     any_rg && g_tape != nullptr);
  if (node->requires_grad) {
    make_backward(*node);
    g_tape->record(node);
  }
  return Tensor(node);
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); i++) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Node::Node(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), val(std::move(v)), requires_grad(rg) {
  if (numel(shape) != static_cast<int64_t>(val.size()))
    throw shape_error("tensor: " + std::to_string(val.size()) +
                      " values do not fill shape " + shape_str(shape));
  if (memtrack::enabled()) {
    tracked = true;
    memtrack::on_alloc(static_cast<int64_t>(val.size()));
  }
}

Node::~Node() {
  if (tracked) memtrack::on_free(static_cast<int64_t>(val.size()));
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(val.size(), 0.0);
  return grad;
}

void Node::accum_grad_at(int64_t i, double g) { ensure_grad()[i] += g; }

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(std::make_shared<Node>(std::move(shape), std::move(values),
                                       requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(numel(shape), 0.0);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw contract_error("item(): tensor is not scalar");
  return node_->val[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->val.size(), 0.0);
  return node_->grad;
}

Tape::Tape() {
  prev_ = g_tape;
  g_tape = this;
}

Tape::~Tape() { g_tape = prev_; }

Tape* Tape::current() { return g_tape; }

// ---- elementwise -------------------------------------------------------

Tensor elementwise_unary(Unary kind, const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  switch (kind) {
    case Unary::sigmoid:
      for (size_t i = 0; i < xv.size(); i++) out[i] = sigmoid_v(xv[i]);
      break;
    case Unary::gelu:
      for (size_t i = 0; i < xv.size(); i++) out[i] = gelu_v(xv[i]);
      break;
    case Unary::silu:
      for (size_t i = 0; i < xv.size(); i++) out[i] = silu_v(xv[i]);
      break;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), x.requires_grad(),
                     [xn, kind](Node& n) {
    Node* np = &n;
    n.backward = [xn, np, kind]() {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); i++) {
        double d = 0;
        switch (kind) {
          case Unary::sigmoid: {
            double s = np->val[i];
            d = s * (1.0 - s);
            break;
          }
          case Unary::gelu:
            d = gelu_grad_v(xn->val[i]);
            break;
          case Unary::silu:
            d = silu_grad_v(xn->val[i]);
            break;
        }
        g[i] += d * np->grad[i];
      }
    };
  });
}

Tensor sigmoid(const Tensor& x) { return elementwise_unary(Unary::sigmoid, x); }
Tensor gelu(const Tensor& x) { return elementwise_unary(Unary::gelu, x); }
Tensor silu(const Tensor& x) { return elementwise_unary(Unary::silu, x); }

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); i++) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out),
                     a.requires_grad() || b.requires_grad(), [an, bn](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, np]() {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); i++) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out),
                     a.requires_grad() || b.requires_grad(), [an, bn](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, np]() {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] -= np->grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); i++) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out),
                     a.requires_grad() || b.requires_grad(), [an, bn](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, np]() {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] += bn->val[i] * np->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); i++) g[i] += an->val[i] * np->grad[i];
      }
    };
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); i++) out[i] = a.values()[i] * s;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), a.requires_grad(),
                     [an, s](Node& n) {
    Node* np = &n;
    n.backward = [an, s, np]() {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); i++) g[i] += s * np->grad[i];
    };
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ---- matmul ------------------------------------------------------------

namespace {

struct MatView {
  int64_t rows, cols;
};

MatView as_matrix(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw shape_error(std::string(op) + ": expected rank<=2, got " +
                    shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MatView av = as_matrix(a, "matmul"), bv = as_matrix(b, "matmul");
  if (av.cols != bv.rows)
    throw shape_error("matmul: inner dims disagree " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  std::vector<double> out(av.rows * bv.cols, 0.0);
  const auto& A = a.values();
  const auto& B = b.values();
  for (int64_t i = 0; i < av.rows; i++)
    for (int64_t k = 0; k < av.cols; k++) {
      double x = A[i * av.cols + k];
      if (x == 0.0) continue;
      const double* brow = B.data() + k * bv.cols;
      double* orow = out.data() + i * bv.cols;
      for (int64_t j = 0; j < bv.cols; j++) orow[j] += x * brow[j];
    }
  Shape oshape = a.rank() == 1 ? Shape{bv.cols} : Shape{av.rows, bv.cols};
  auto an = a.node(), bn = b.node();
  return make_result(std::move(oshape), std::move(out),
                     a.requires_grad() || b.requires_grad(),
                     [an, bn, av, bv](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, av, bv, np]() {
      const auto& G = np->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        // dA = G B^T
        for (int64_t i = 0; i < av.rows; i++)
          for (int64_t k = 0; k < av.cols; k++) {
            double s = 0;
            const double* grow = G.data() + i * bv.cols;
            const double* brow = bn->val.data() + k * bv.cols;
            for (int64_t j = 0; j < bv.cols; j++) s += grow[j] * brow[j];
            ga[i * av.cols + k] += s;
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        // dB = A^T G
        for (int64_t i = 0; i < av.rows; i++)
          for (int64_t k = 0; k < av.cols; k++) {
            double x = an->val[i * av.cols + k];
            if (x == 0.0) continue;
            const double* grow = G.data() + i * bv.cols;
            double* brow = gb.data() + k * bv.cols;
            for (int64_t j = 0; j < bv.cols; j++) brow[j] += x * grow[j];
          }
      }
    };
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  MatView av = as_matrix(a, "matmul_nt"), bv = as_matrix(b, "matmul_nt");
  if (av.cols != bv.cols)
    throw shape_error("matmul_nt: inner dims disagree " +
                      shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(av.rows * bv.rows, 0.0);
  const auto& A = a.values();
  const auto& B = b.values();
  for (int64_t i = 0; i < av.rows; i++)
    for (int64_t j = 0; j < bv.rows; j++) {
      double s = 0;
      const double* arow = A.data() + i * av.cols;
      const double* brow = B.data() + j * av.cols;
      for (int64_t k = 0; k < av.cols; k++) s += arow[k] * brow[k];
      out[i * bv.rows + j] = s;
    }
  auto an = a.node(), bn = b.node();
  return make_result({av.rows, bv.rows}, std::move(out),
                     a.requires_grad() || b.requires_grad(),
                     [an, bn, av, bv](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, av, bv, np]() {
      const auto& G = np->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (int64_t i = 0; i < av.rows; i++)
          for (int64_t j = 0; j < bv.rows; j++) {
            double g = G[i * bv.rows + j];
            if (g == 0.0) continue;
            const double* brow = bn->val.data() + j * av.cols;
            double* arow = ga.data() + i * av.cols;
            for (int64_t k = 0; k < av.cols; k++) arow[k] += g * brow[k];
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (int64_t i = 0; i < av.rows; i++)
          for (int64_t j = 0; j < bv.rows; j++) {
            double g = G[i * bv.rows + j];
            if (g == 0.0) continue;
            const double* arow = an->val.data() + i * av.cols;
            double* brow = gb.data() + j * av.cols;
            for (int64_t k = 0; k < av.cols; k++) brow[k] += g * arow[k];
          }
      }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  MatView xv = as_matrix(x, "linear"), wv = as_matrix(w, "linear");
  if (xv.cols != wv.rows || b.size() != wv.cols)
    throw shape_error("linear: incompatible shapes x=" + shape_str(x.shape()) +
                      " W=" + shape_str(w.shape()) + " b=" +
                      shape_str(b.shape()));
  std::vector<double> out(xv.rows * wv.cols);
  const auto& X = x.values();
  const auto& W = w.values();
  const auto& B = b.values();
  for (int64_t i = 0; i < xv.rows; i++) {
    double* orow = out.data() + i * wv.cols;
    for (int64_t j = 0; j < wv.cols; j++) orow[j] = B[j];
    for (int64_t k = 0; k < xv.cols; k++) {
      double xx = X[i * xv.cols + k];
      if (xx == 0.0) continue;
      const double* wrow = W.data() + k * wv.cols;
      for (int64_t j = 0; j < wv.cols; j++) orow[j] += xx * wrow[j];
    }
  }
  Shape oshape = x.rank() == 1 ? Shape{wv.cols} : Shape{xv.rows, wv.cols};
  auto xn = x.node(), wn = w.node(), bn = b.node();
  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return make_result(std::move(oshape), std::move(out), rg,
                     [xn, wn, bn, xv, wv](Node& n) {
    Node* np = &n;
    n.backward = [xn, wn, bn, xv, wv, np]() {
      const auto& G = np->grad;
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        for (int64_t i = 0; i < xv.rows; i++)
          for (int64_t k = 0; k < xv.cols; k++) {
            double s = 0;
            const double* grow = G.data() + i * wv.cols;
            const double* wrow = wn->val.data() + k * wv.cols;
            for (int64_t j = 0; j < wv.cols; j++) s += grow[j] * wrow[j];
            gx[i * xv.cols + k] += s;
          }
      }
      if (wn->requires_grad) {
        auto& gw = wn->ensure_grad();
        for (int64_t i = 0; i < xv.rows; i++)
          for (int64_t k = 0; k < xv.cols; k++) {
            double xx = xn->val[i * xv.cols + k];
            if (xx == 0.0) continue;
            const double* grow = G.data() + i * wv.cols;
            double* wrow = gw.data() + k * wv.cols;
            for (int64_t j = 0; j < wv.cols; j++) wrow[j] += xx * grow[j];
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (int64_t i = 0; i < xv.rows; i++)
          for (int64_t j = 0; j < wv.cols; j++) gb[j] += G[i * wv.cols + j];
      }
    };
  });
}

// ---- shape ops ---------------------------------------------------------

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank())
    throw shape_error("concat: rank mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  for (int i = 0; i + 1 < a.rank(); i++)
    if (a.dim(i) != b.dim(i))
      throw shape_error("concat: leading dims disagree " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int64_t rows = lead_count(a.shape());
  int64_t da = last_dim(a.shape()), db = last_dim(b.shape());
  Shape oshape = a.shape();
  oshape.back() = da + db;
  std::vector<double> out(rows * (da + db));
  for (int64_t i = 0; i < rows; i++) {
    std::copy_n(a.values().data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.values().data() + i * db, db,
                out.data() + i * (da + db) + da);
  }
  auto an = a.node(), bn = b.node();
  return make_result(std::move(oshape), std::move(out),
                     a.requires_grad() || b.requires_grad(),
                     [an, bn, rows, da, db](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, rows, da, db, np]() {
      const auto& G = np->grad;
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (int64_t i = 0; i < rows; i++)
          for (int64_t j = 0; j < da; j++)
            g[i * da + j] += G[i * (da + db) + j];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (int64_t i = 0; i < rows; i++)
          for (int64_t j = 0; j < db; j++)
            g[i * db + j] += G[i * (da + db) + da + j];
      }
    };
  });
}

Tensor slice_last(const Tensor& x, int64_t offset, int64_t len) {
  int64_t d = last_dim(x.shape());
  if (offset < 0 || len < 0 || offset + len > d)
    throw shape_error("slice_last: range [" + std::to_string(offset) + "," +
                      std::to_string(offset + len) + ") out of " +
                      shape_str(x.shape()));
  int64_t rows = lead_count(x.shape());
  Shape oshape = x.shape();
  oshape.back() = len;
  std::vector<double> out(rows * len);
  for (int64_t i = 0; i < rows; i++)
    std::copy_n(x.values().data() + i * d + offset, len, out.data() + i * len);
  auto xn = x.node();
  return make_result(std::move(oshape), std::move(out), x.requires_grad(),
                     [xn, rows, d, offset, len](Node& n) {
    Node* np = &n;
    n.backward = [xn, rows, d, offset, len, np]() {
      auto& g = xn->ensure_grad();
      for (int64_t i = 0; i < rows; i++)
        for (int64_t j = 0; j < len; j++)
          g[i * d + offset + j] += np->grad[i * len + j];
    };
  });
}

Tensor slice_prefix(const Tensor& x, int64_t k) {
  if (k < 1) throw contract_error("slice_prefix: k must be >= 1");
  return slice_last(x, 0, std::min<int64_t>(k, last_dim(x.shape())));
}

Tensor concat_prefix(const Tensor& a, const Tensor& b, int64_t k) {
  if (a.rank() != 1 || b.rank() != 1)
    throw shape_error("concat_prefix: expects vectors");
  int64_t ka = std::min<int64_t>(k, a.dim(0));
  int64_t kb = std::min<int64_t>(k, b.dim(0));
  std::vector<double> out(ka + kb);
  std::copy_n(a.values().data(), ka, out.data());
  std::copy_n(b.values().data(), kb, out.data() + ka);
  auto an = a.node(), bn = b.node();
  return make_result({ka + kb}, std::move(out),
                     a.requires_grad() || b.requires_grad(),
                     [an, bn, ka, kb](Node& n) {
    Node* np = &n;
    n.backward = [an, bn, ka, kb, np]() {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (int64_t j = 0; j < ka; j++) g[j] += np->grad[j];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (int64_t j = 0; j < kb; j++) g[j] += np->grad[ka + j];
      }
    };
  });
}

// ---- normalizers -------------------------------------------------------

Tensor softmax_masked(const Tensor& logits, const Tensor& mask) {
  check_same_shape("softmax_masked", logits, mask);
  int64_t rows = lead_count(logits.shape());
  int64_t m = last_dim(logits.shape());
  std::vector<double> out(logits.size(), 0.0);
  const auto& L = logits.values();
  const auto& M = mask.values();
  for (int64_t i = 0; i < rows; i++) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < m; j++)
      if (M[i * m + j] != 0.0) mx = std::max(mx, L[i * m + j]);
    if (!std::isfinite(mx)) continue;  // all masked: row stays zero
    double z = 0;
    for (int64_t j = 0; j < m; j++)
      if (M[i * m + j] != 0.0) {
        out[i * m + j] = std::exp(L[i * m + j] - mx);
        z += out[i * m + j];
      }
    for (int64_t j = 0; j < m; j++) out[i * m + j] /= z;
  }
  auto ln = logits.node();
  return make_result(logits.shape(), std::move(out), logits.requires_grad(),
                     [ln, rows, m](Node& n) {
    Node* np = &n;
    n.backward = [ln, rows, m, np]() {
      auto& g = ln->ensure_grad();
      for (int64_t i = 0; i < rows; i++) {
        double dot = 0;
        for (int64_t j = 0; j < m; j++)
          dot += np->val[i * m + j] * np->grad[i * m + j];
        for (int64_t j = 0; j < m; j++)
          g[i * m + j] += np->val[i * m + j] * (np->grad[i * m + j] - dot);
      }
    };
  });
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw shape_error("log_softmax: expects 1-D input");
  int64_t m = logits.dim(0);
  const auto& L = logits.values();
  double mx = *std::max_element(L.begin(), L.end());
  double z = 0;
  for (int64_t j = 0; j < m; j++) z += std::exp(L[j] - mx);
  double lz = mx + std::log(z);
  std::vector<double> out(m);
  for (int64_t j = 0; j < m; j++) out[j] = L[j] - lz;
  auto ln = logits.node();
  return make_result({m}, std::move(out), logits.requires_grad(),
                     [ln, m](Node& n) {
    Node* np = &n;
    n.backward = [ln, m, np]() {
      auto& g = ln->ensure_grad();
      double gs = 0;
      for (int64_t j = 0; j < m; j++) gs += np->grad[j];
      for (int64_t j = 0; j < m; j++)
        g[j] += np->grad[j] - std::exp(np->val[j]) * gs;
    };
  });
}

Tensor softmax_vec(const Tensor& logits) {
  if (logits.rank() != 1) throw shape_error("softmax_vec: expects 1-D input");
  int64_t m = logits.dim(0);
  const auto& L = logits.values();
  double mx = *std::max_element(L.begin(), L.end());
  std::vector<double> out(m);
  double z = 0;
  for (int64_t j = 0; j < m; j++) {
    out[j] = std::exp(L[j] - mx);
    z += out[j];
  }
  for (int64_t j = 0; j < m; j++) out[j] /= z;
  auto ln = logits.node();
  return make_result({m}, std::move(out), logits.requires_grad(),
                     [ln, m](Node& n) {
    Node* np = &n;
    n.backward = [ln, m, np]() {
      auto& g = ln->ensure_grad();
      double dot = 0;
      for (int64_t j = 0; j < m; j++) dot += np->val[j] * np->grad[j];
      for (int64_t j = 0; j < m; j++)
        g[j] += np->val[j] * (np->grad[j] - dot);
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  int64_t d = last_dim(x.shape());
  if (gain.size() != d || bias.size() != d)
    throw shape_error("layer_norm: gain/bias must match last dim " +
                      std::to_string(d));
  int64_t rows = lead_count(x.shape());
  const auto& X = x.values();
  const auto& Gn = gain.values();
  const auto& B = bias.values();
  std::vector<double> out(x.size());
  // per-row mean and inverse stddev, saved for backward
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  for (int64_t i = 0; i < rows; i++) {
    double mu = 0;
    for (int64_t j = 0; j < d; j++) mu += X[i * d + j];
    mu /= d;
    double var = 0;
    for (int64_t j = 0; j < d; j++) {
      double c = X[i * d + j] - mu;
      var += c * c;
    }
    var /= d;  // biased estimator
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * i] = mu;
    (*stats)[2 * i + 1] = inv;
    for (int64_t j = 0; j < d; j++)
      out[i * d + j] = (X[i * d + j] - mu) * inv * Gn[j] + B[j];
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return make_result(x.shape(), std::move(out), rg,
                     [xn, gn, bn, stats, rows, d](Node& n) {
    Node* np = &n;
    n.backward = [xn, gn, bn, stats, rows, d, np]() {
      const auto& G = np->grad;
      for (int64_t i = 0; i < rows; i++) {
        double mu = (*stats)[2 * i], inv = (*stats)[2 * i + 1];
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          double mean_dy = 0, mean_dyy = 0;
          for (int64_t j = 0; j < d; j++) {
            double y = (xn->val[i * d + j] - mu) * inv;
            double dy = G[i * d + j] * gn->val[j];
            mean_dy += dy;
            mean_dyy += dy * y;
          }
          mean_dy /= d;
          mean_dyy /= d;
          for (int64_t j = 0; j < d; j++) {
            double y = (xn->val[i * d + j] - mu) * inv;
            double dy = G[i * d + j] * gn->val[j];
            gx[i * d + j] += inv * (dy - mean_dy - y * mean_dyy);
          }
        }
        if (gn->requires_grad) {
          auto& gg = gn->ensure_grad();
          for (int64_t j = 0; j < d; j++)
            gg[j] += G[i * d + j] * (xn->val[i * d + j] - mu) * inv;
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int64_t j = 0; j < d; j++) gb[j] += G[i * d + j];
        }
      }
    };
  });
}

// ---- reductions & indexing --------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return make_result({1}, {s}, x.requires_grad(), [xn](Node& n) {
    Node* np = &n;
    n.backward = [xn, np]() {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[0];
    };
  });
}

Tensor pick(const Tensor& v, int64_t index) {
  if (index < 0 || index >= v.size())
    throw contract_error("pick: index " + std::to_string(index) +
                         " out of range " + std::to_string(v.size()));
  auto vn = v.node();
  return make_result({1}, {v.values()[index]}, v.requires_grad(),
                     [vn, index](Node& n) {
    Node* np = &n;
    n.backward = [vn, index, np]() { vn->accum_grad_at(index, np->grad[0]); };
  });
}

Tensor row(const Tensor& x, int64_t i) {
  if (x.rank() != 2) throw shape_error("row: expects matrix");
  int64_t nrows = x.dim(0), d = x.dim(1);
  if (i < 0 || i >= nrows)
    throw contract_error("row: index out of range");
  std::vector<double> out(x.values().begin() + i * d,
                          x.values().begin() + (i + 1) * d);
  auto xn = x.node();
  return make_result({d}, std::move(out), x.requires_grad(),
                     [xn, i, d](Node& n) {
    Node* np = &n;
    n.backward = [xn, i, d, np]() {
      auto& g = xn->ensure_grad();
      for (int64_t j = 0; j < d; j++) g[i * d + j] += np->grad[j];
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw shape_error("reshape: cannot view " + shape_str(x.shape()) +
                      " as " + shape_str(shape));
  auto xn = x.node();
  return make_result(std::move(shape), x.values(), x.requires_grad(),
                     [xn](Node& n) {
    Node* np = &n;
    n.backward = [xn, np]() {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[i];
    };
  });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw contract_error("stack_scalars: empty input");
  std::vector<double> out(xs.size());
  bool rg = false;
  for (size_t i = 0; i < xs.size(); i++) {
    if (xs[i].size() != 1) throw shape_error("stack_scalars: non-scalar item");
    out[i] = xs[i].values()[0];
    rg = rg || xs[i].requires_grad();
  }
  std::vector<NodePtr> nodes;
  nodes.reserve(xs.size());
  for (const auto& t : xs) nodes.push_back(t.node());
  return make_result({static_cast<int64_t>(xs.size())}, std::move(out), rg,
                     [nodes](Node& n) {
    Node* np = &n;
    n.backward = [nodes, np]() {
      for (size_t i = 0; i < nodes.size(); i++)
        if (nodes[i]->requires_grad) nodes[i]->accum_grad_at(0, np->grad[i]);
    };
  });
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw contract_error("stack_rows: empty input");
  int64_t d = xs[0].size();
  std::vector<double> out;
  out.reserve(xs.size() * d);
  bool rg = false;
  for (const auto& t : xs) {
    if (t.size() != d) throw shape_error("stack_rows: ragged rows");
    out.insert(out.end(), t.values().begin(), t.values().end());
    rg = rg || t.requires_grad();
  }
  std::vector<NodePtr> nodes;
  nodes.reserve(xs.size());
  for (const auto& t : xs) nodes.push_back(t.node());
  return make_result({static_cast<int64_t>(xs.size()), d}, std::move(out), rg,
                     [nodes, d](Node& n) {
    Node* np = &n;
    n.backward = [nodes, d, np]() {
      for (size_t i = 0; i < nodes.size(); i++) {
        if (!nodes[i]->requires_grad) continue;
        auto& g = nodes[i]->ensure_grad();
        for (int64_t j = 0; j < d; j++) g[j] += np->grad[i * d + j];
      }
    };
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
  if (table.rank() != 2) throw shape_error("gather_rows: expects matrix table");
  int64_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (size_t i = 0; i < ids.size(); i++) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw contract_error("gather_rows: id out of range");
    std::copy_n(table.values().data() + ids[i] * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  return make_result({static_cast<int64_t>(ids.size()), d}, std::move(out),
                     table.requires_grad(), [tn, ids, d](Node& n) {
    Node* np = &n;
    n.backward = [tn, ids, d, np]() {
      auto& g = tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); i++)
        for (int64_t j = 0; j < d; j++)
          g[ids[i] * d + j] += np->grad[i * d + j];
    };
  });
}

Tensor gather_entries(const Tensor& table, const std::vector<int64_t>& ids,
                      Shape out_shape) {
  if (numel(out_shape) != static_cast<int64_t>(ids.size()))
    throw shape_error("gather_entries: ids do not fill requested shape");
  std::vector<double> out(ids.size());
  for (size_t i = 0; i < ids.size(); i++) {
    if (ids[i] < 0 || ids[i] >= table.size())
      throw contract_error("gather_entries: id out of range");
    out[i] = table.values()[ids[i]];
  }
  auto tn = table.node();
  return make_result(std::move(out_shape), std::move(out),
                     table.requires_grad(), [tn, ids](Node& n) {
    Node* np = &n;
    n.backward = [tn, ids, np]() {
      auto& g = tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); i++) g[ids[i]] += np->grad[i];
    };
  });
}

Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights) {
  if (items.empty()) throw contract_error("weighted_sum: empty input");
  if (weights.size() != static_cast<int64_t>(items.size()))
    throw shape_error("weighted_sum: " + std::to_string(items.size()) +
                      " items vs " + std::to_string(weights.size()) +
                      " weights");
  int64_t sz = items[0].size();
  std::vector<double> out(sz, 0.0);
  bool rg = weights.requires_grad();
  for (size_t i = 0; i < items.size(); i++) {
    if (items[i].shape() != items[0].shape())
      throw shape_error("weighted_sum: ragged items");
    double w = weights.values()[i];
    for (int64_t j = 0; j < sz; j++) out[j] += w * items[i].values()[j];
    rg = rg || items[i].requires_grad();
  }
  std::vector<NodePtr> nodes;
  for (const auto& t : items) nodes.push_back(t.node());
  auto wn = weights.node();
  return make_result(items[0].shape(), std::move(out), rg,
                     [nodes, wn, sz](Node& n) {
    Node* np = &n;
    n.backward = [nodes, wn, sz, np]() {
      for (size_t i = 0; i < nodes.size(); i++) {
        if (nodes[i]->requires_grad) {
          auto& g = nodes[i]->ensure_grad();
          double w = wn->val[i];
          for (int64_t j = 0; j < sz; j++) g[j] += w * np->grad[j];
        }
        if (wn->requires_grad) {
          double s = 0;
          for (int64_t j = 0; j < sz; j++)
            s += nodes[i]->val[j] * np->grad[j];
          wn->accum_grad_at(i, s);
        }
      }
    };
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw shape_error("scale_by: scale must be scalar");
  double sv = s.values()[0];
  std::vector<double> out(x.size());
  for (int64_t i = 0; i < x.size(); i++) out[i] = x.values()[i] * sv;
  auto xn = x.node(), sn = s.node();
  return make_result(x.shape(), std::move(out),
                     x.requires_grad() || s.requires_grad(),
                     [xn, sn](Node& n) {
    Node* np = &n;
    n.backward = [xn, sn, np]() {
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < g.size(); i++)
          g[i] += sn->val[0] * np->grad[i];
      }
      if (sn->requires_grad) {
        double acc = 0;
        for (size_t i = 0; i < xn->val.size(); i++)
          acc += xn->val[i] * np->grad[i];
        sn->accum_grad_at(0, acc);
      }
    };
  });
}

Tensor affine_rows(const Tensor& x, const Tensor& g, const Tensor& b) {
  int64_t d = last_dim(x.shape());
  if (g.size() != d || b.size() != d)
    throw shape_error("affine_rows: scale/offset must match last dim");
  int64_t rows = lead_count(x.shape());
  std::vector<double> out(x.size());
  for (int64_t i = 0; i < rows; i++)
    for (int64_t j = 0; j < d; j++)
      out[i * d + j] = x.values()[i * d + j] * g.values()[j] + b.values()[j];
  auto xn = x.node(), gn = g.node(), bn = b.node();
  bool rg = x.requires_grad() || g.requires_grad() || b.requires_grad();
  return make_result(x.shape(), std::move(out), rg,
                     [xn, gn, bn, rows, d](Node& n) {
    Node* np = &n;
    n.backward = [xn, gn, bn, rows, d, np]() {
      for (int64_t i = 0; i < rows; i++)
        for (int64_t j = 0; j < d; j++) {
          double go = np->grad[i * d + j];
          if (xn->requires_grad)
            xn->ensure_grad()[i * d + j] += go * gn->val[j];
          if (gn->requires_grad)
            gn->ensure_grad()[j] += go * xn->val[i * d + j];
          if (bn->requires_grad) bn->ensure_grad()[j] += go;
        }
    };
  });
}

Tensor ste_hard(const Tensor& soft, int64_t hard_index) {
  if (soft.rank() != 1) throw shape_error("ste_hard: expects 1-D input");
  std::vector<double> out(soft.size(), 0.0);
  if (hard_index < 0 || hard_index >= soft.size())
    throw contract_error("ste_hard: index out of range");
  out[hard_index] = 1.0;
  auto sn = soft.node();
  return make_result(soft.shape(), std::move(out), soft.requires_grad(),
                     [sn](Node& n) {
    Node* np = &n;
    n.backward = [sn, np]() {
      auto& g = sn->ensure_grad();
      for (size_t i = 0; i < g.size(); i++) g[i] += np->grad[i];
    };
  });
}

Tensor gated_combine(const Tensor& gates, const Tensor& cl, const Tensor& cr) {
  int64_t d = cl.size();
  if (cr.size() != d || gates.size() != 4 * d)
    throw shape_error("gated_combine: gates " + shape_str(gates.shape()) +
                      " vs children of dim " + std::to_string(d));
  const auto& A = gates.values();
  std::vector<double> out(d);
  for (int64_t j = 0; j < d; j++)
    out[j] = sigmoid_v(A[j]) * cl.values()[j] +
             sigmoid_v(A[d + j]) * cr.values()[j] +
             sigmoid_v(A[2 * d + j]) * A[3 * d + j];
  auto an = gates.node(), ln = cl.node(), rn = cr.node();
  bool rg = gates.requires_grad() || cl.requires_grad() || cr.requires_grad();
  return make_result({d}, std::move(out), rg, [an, ln, rn, d](Node& n) {
    Node* np = &n;
    n.backward = [an, ln, rn, d, np]() {
      for (int64_t j = 0; j < d; j++) {
        double go = np->grad[j];
        double sl = sigmoid_v(an->val[j]);
        double sr = sigmoid_v(an->val[d + j]);
        double sg = sigmoid_v(an->val[2 * d + j]);
        double h = an->val[3 * d + j];
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          g[j] += go * ln->val[j] * sl * (1 - sl);
          g[d + j] += go * rn->val[j] * sr * (1 - sr);
          g[2 * d + j] += go * h * sg * (1 - sg);
          g[3 * d + j] += go * sg;
        }
        if (ln->requires_grad) ln->ensure_grad()[j] += go * sl;
        if (rn->requires_grad) rn->ensure_grad()[j] += go * sr;
      }
    };
  });
}

Tensor mlp_score(const Tensor& feat, const Tensor& w1, const Tensor& b1,
                 const Tensor& w2, const Tensor& b2) {
  int64_t f = feat.size();
  if (w1.rank() != 2 || w1.dim(0) != f)
    throw shape_error("mlp_score: feat " + shape_str(feat.shape()) +
                      " vs W1 " + shape_str(w1.shape()));
  int64_t hdim = w1.dim(1);
  if (b1.size() != hdim || w2.dim(0) != hdim || w2.size() != hdim ||
      b2.size() != 1)
    throw shape_error("mlp_score: inconsistent head shapes");
  // hidden pre-activation is the only retained intermediate
  Tensor hpre = Tensor::zeros({hdim});
  auto& H = hpre.mutable_values();
  for (int64_t j = 0; j < hdim; j++) H[j] = b1.values()[j];
  for (int64_t i = 0; i < f; i++) {
    double x = feat.values()[i];
    if (x == 0.0) continue;
    const double* wrow = w1.values().data() + i * hdim;
    for (int64_t j = 0; j < hdim; j++) H[j] += x * wrow[j];
  }
  double out = b2.values()[0];
  for (int64_t j = 0; j < hdim; j++) out += gelu_v(H[j]) * w2.values()[j];
  auto fn = feat.node(), w1n = w1.node(), b1n = b1.node(), w2n = w2.node(),
       b2n = b2.node();
  auto hn = hpre.node();
  bool rg = feat.requires_grad() || w1.requires_grad() || b1.requires_grad() ||
            w2.requires_grad() || b2.requires_grad();
  return make_result({1}, {out}, rg,
                     [fn, w1n, b1n, w2n, b2n, hn, f, hdim](Node& n) {
    Node* np = &n;
    n.backward = [fn, w1n, b1n, w2n, b2n, hn, f, hdim, np]() {
      double go = np->grad[0];
      if (b2n->requires_grad) b2n->accum_grad_at(0, go);
      std::vector<double> dh(hdim);
      for (int64_t j = 0; j < hdim; j++) {
        double act = gelu_v(hn->val[j]);
        if (w2n->requires_grad) w2n->accum_grad_at(j, go * act);
        dh[j] = go * w2n->val[j] * gelu_grad_v(hn->val[j]);
      }
      if (b1n->requires_grad) {
        auto& g = b1n->ensure_grad();
        for (int64_t j = 0; j < hdim; j++) g[j] += dh[j];
      }
      if (w1n->requires_grad) {
        auto& g = w1n->ensure_grad();
        for (int64_t i = 0; i < f; i++) {
          double x = fn->val[i];
          if (x == 0.0) continue;
          for (int64_t j = 0; j < hdim; j++) g[i * hdim + j] += x * dh[j];
        }
      }
      if (fn->requires_grad) {
        auto& g = fn->ensure_grad();
        for (int64_t i = 0; i < f; i++) {
          double s = 0;
          const double* wrow = w1n->val.data() + i * hdim;
          for (int64_t j = 0; j < hdim; j++) s += wrow[j] * dh[j];
          g[i] += s;
        }
      }
    };
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw contract_error("dropout: rate must be < 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto keep = std::make_shared<std::vector<uint8_t>>(x.size());
  double inv = 1.0 / (1.0 - rate);
  std::vector<double> out(x.size());
  for (int64_t i = 0; i < x.size(); i++) {
    (*keep)[i] = u(rng) >= rate ? 1 : 0;
    out[i] = (*keep)[i] ? x.values()[i] * inv : 0.0;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), x.requires_grad(),
                     [xn, keep, inv](Node& n) {
    Node* np = &n;
    n.backward = [xn, keep, inv, np]() {
      auto& g = xn->ensure_grad();
      for (size_t i = 0; i < g.size(); i++)
        if ((*keep)[i]) g[i] += inv * np->grad[i];
    };
  });
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw contract_error("backward: loss must be scalar, got " +
                         shape_str(loss.shape()));
  Tape* tape = Tape::current();
  if (tape == nullptr || !loss.requires_grad())
    throw contract_error("backward: loss was not recorded on an active tape");
  loss.node()->ensure_grad()[0] = 1.0;
  const auto& nodes = tape->nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

}  // namespace ebt
