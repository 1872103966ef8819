#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ebt/rvnn.hpp"
#include "ebt/tensor.hpp"

namespace ebt {

struct trace_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Induced-tree structure for one beam: non-terminal vectors in creation
// order, terminal->ancestor adjacency, and structural node heights
// (terminals sit at height 0, a parent is 1 + max child height).
struct TreeRecord {
  std::vector<Tensor> nonterminals;            // l vectors of dim d
  std::vector<std::vector<uint8_t>> adjacency;  // n rows x l cols
  std::vector<int> heights;                     // l entries

  int64_t n() const { return static_cast<int64_t>(adjacency.size()); }
  int64_t l() const { return static_cast<int64_t>(nonterminals.size()); }
};

// Replays a merge trace over the terminals, recording every composed node,
// its height, and the leaf-descendant sets that fill the adjacency mask.
TreeRecord record_tree(const std::vector<int>& trace,
                       const std::vector<Tensor>& terminals,
                       const GRCParams& cell);

// bias[i][j] = table[min(k_heights[j] - q_heights[i], max_dist)], one
// learned scalar per clipped distance. Positions permitted by `adjacency`
// must have distance >= 1; masked positions read table[0].
Tensor relative_height_bias(const std::vector<int>& q_heights,
                            const std::vector<int>& k_heights,
                            const Tensor& table, int max_dist,
                            const std::vector<std::vector<uint8_t>>* adjacency);

struct GAUParams {
  int d = 0;
  int d_h = 128;
  int max_dist = 10;
  double dropout = 0.1;
  Tensor w_init, b_init;    // d x d, d
  Tensor w_u, b_u;          // d x 2d, 2d
  Tensor w_v, b_v;          // d x 2d, 2d
  Tensor w_z, b_z;          // d x d_h, d_h
  Tensor z_q, zb_q;         // d_h
  Tensor z_k, zb_k;         // d_h
  Tensor w_o, b_o;          // 2d x d, d
  Tensor w_gate, b_gate;    // 2d x d, d
  Tensor pos_table;         // max_dist + 1

  static GAUParams init(int d, int d_h, int max_dist, std::mt19937_64& rng);
};

// Gated attention unit: terminals x attend over nodes p
// under mask G with additive position bias, gated residual output.
// rng drives dropout and may be null when training=false.
Tensor gau_block(const Tensor& x, const Tensor& p, const Tensor& mask,
                 const GAUParams& params, const Tensor& pos,
                 bool training = false, std::mt19937_64* rng = nullptr);

// Per-beam weight-shared parent attention followed by score-softmax
// marginalization across beams. Output has the terminals' shape.
Tensor contextualize_tokens(const Tensor& terminals,
                            const std::vector<TreeRecord>& beam_records,
                            const std::vector<Tensor>& beam_scores,
                            const GAUParams& params, int iterations = 2,
                            bool training = false,
                            std::mt19937_64* rng = nullptr);

// alpha = softmax(GELU(r W1 + b1) W2 + b2); returns sum_i alpha_i r_i.
Tensor attention_pool(const Tensor& r, const Tensor& w1, const Tensor& b1,
                      const Tensor& w2, const Tensor& b2);

}  // namespace ebt
