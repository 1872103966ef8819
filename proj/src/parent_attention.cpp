#include "ebt/parent_attention.hpp"

#include <algorithm>
#include <cmath>

namespace ebt {

TreeRecord record_tree(const std::vector<int>& trace,
                       const std::vector<Tensor>& terminals,
                       const GRCParams& cell) {
  int n = static_cast<int>(terminals.size());
  if (static_cast<int>(trace.size()) != n - 1)
    throw trace_error("record_tree: trace length " +
                      std::to_string(trace.size()) + " for n=" +
                      std::to_string(n));
  struct Entry {
    Tensor vec;
    int height = 0;
    std::vector<int> leaves;
  };
  std::vector<Entry> work;
  work.reserve(n);
  for (int i = 0; i < n; i++) work.push_back(Entry{terminals[i], 0, {i}});

  TreeRecord rec;
  rec.adjacency.assign(n, {});
  for (int step = 0; step < n - 1; step++) {
    int j = trace[step];
    if (j < 0 || j + 1 >= static_cast<int>(work.size()))
      throw trace_error("record_tree: merge index " + std::to_string(j) +
                        " invalid at length " + std::to_string(work.size()));
    Entry& left = work[j];
    Entry& right = work[j + 1];
    Entry parent;
    parent.vec = grc_compose(left.vec, right.vec, cell);
    parent.height = 1 + std::max(left.height, right.height);
    parent.leaves = left.leaves;
    parent.leaves.insert(parent.leaves.end(), right.leaves.begin(),
                         right.leaves.end());
    rec.nonterminals.push_back(parent.vec);
    rec.heights.push_back(parent.height);
    int col = static_cast<int>(rec.nonterminals.size()) - 1;
    for (auto& adj_row : rec.adjacency) adj_row.resize(col + 1, 0);
    for (int leaf : parent.leaves) rec.adjacency[leaf][col] = 1;
    work[j] = std::move(parent);
    work.erase(work.begin() + j + 1);
  }
  return rec;
}

Tensor relative_height_bias(const std::vector<int>& q_heights,
                            const std::vector<int>& k_heights,
                            const Tensor& table, int max_dist,
                            const std::vector<std::vector<uint8_t>>* adjacency) {
  if (table.size() != max_dist + 1)
    throw shape_error("relative_height_bias: table needs max_dist+1 entries");
  int64_t n = static_cast<int64_t>(q_heights.size());
  int64_t l = static_cast<int64_t>(k_heights.size());
  std::vector<int64_t> ids(n * l);
  for (int64_t i = 0; i < n; i++)
    for (int64_t j = 0; j < l; j++) {
      int dist = k_heights[j] - q_heights[i];
      bool allowed = adjacency != nullptr && (*adjacency)[i][j] != 0;
      if (allowed && dist < 1)
        throw contract_error(
            "relative_height_bias: non-positive height distance at an "
            "unmasked position (" +
            std::to_string(i) + "," + std::to_string(j) + ")");
      ids[i * l + j] = allowed || adjacency == nullptr
                           ? std::min(std::max(dist, 0), max_dist)
                           : 0;
    }
  return gather_entries(table, ids, {n, l});
}

GAUParams GAUParams::init(int d, int d_h, int max_dist,
                          std::mt19937_64& rng) {
  GAUParams p;
  p.d = d;
  p.d_h = d_h;
  p.max_dist = max_dist;
  p.w_init = kaiming_uniform(d, {d, d}, rng);
  p.b_init = Tensor::zeros({d}, true);
  p.w_u = kaiming_uniform(d, {d, 2 * d}, rng);
  p.b_u = Tensor::zeros({2 * d}, true);
  p.w_v = kaiming_uniform(d, {d, 2 * d}, rng);
  p.b_v = Tensor::zeros({2 * d}, true);
  p.w_z = kaiming_uniform(d, {d, d_h}, rng);
  p.b_z = Tensor::zeros({d_h}, true);
  p.z_q = Tensor::full({d_h}, 1.0, true);
  p.zb_q = Tensor::zeros({d_h}, true);
  p.z_k = Tensor::full({d_h}, 1.0, true);
  p.zb_k = Tensor::zeros({d_h}, true);
  p.w_o = kaiming_uniform(2 * d, {2 * d, d}, rng);
  p.b_o = Tensor::zeros({d}, true);
  p.w_gate = kaiming_uniform(2 * d, {2 * d, d}, rng);
  p.b_gate = Tensor::zeros({d}, true);
  p.pos_table = Tensor::zeros({max_dist + 1}, true);
  return p;
}

Tensor gau_block(const Tensor& x, const Tensor& p, const Tensor& mask,
                 const GAUParams& params, const Tensor& pos, bool training,
                 std::mt19937_64* rng) {
  // Shared-LN init projection for queries and keys/values. The layer norm
  // here is the plain standardization without a learned affine, matching
  // LN(xW+b) with unit gain.
  Tensor ones = Tensor::full({params.d}, 1.0);
  Tensor zeros = Tensor::zeros({params.d});
  Tensor xp = layer_norm(linear(x, params.w_init, params.b_init), ones, zeros);
  Tensor pp = layer_norm(linear(p, params.w_init, params.b_init), ones, zeros);

  Tensor u = silu(linear(xp, params.w_u, params.b_u));
  Tensor v = silu(linear(pp, params.w_v, params.b_v));
  Tensor q = affine_rows(silu(linear(xp, params.w_z, params.b_z)), params.z_q,
                         params.zb_q);
  Tensor k = affine_rows(silu(linear(pp, params.w_z, params.b_z)), params.z_k,
                         params.zb_k);

  Tensor logits =
      scale(add(matmul_nt(q, k), pos), 1.0 / std::sqrt(2.0 * params.d));
  Tensor attn = softmax_masked(logits, mask);
  Tensor vprime = matmul(attn, v);
  Tensor o = linear(mul(u, vprime), params.w_o, params.b_o);
  if (training && params.dropout > 0.0) {
    if (rng == nullptr)
      throw contract_error("gau_block: training dropout needs an rng");
    o = dropout(o, params.dropout, *rng);
  }
  Tensor g = sigmoid(linear(concat(o, x), params.w_gate, params.b_gate));
  // g*o + (1-g)*x
  return add(x, mul(g, sub(o, x)));
}

Tensor contextualize_tokens(const Tensor& terminals,
                            const std::vector<TreeRecord>& beam_records,
                            const std::vector<Tensor>& beam_scores,
                            const GAUParams& params, int iterations,
                            bool training, std::mt19937_64* rng) {
  if (beam_records.empty() || beam_records.size() != beam_scores.size())
    throw contract_error("contextualize_tokens: need matching beams/scores");
  if (iterations < 1)
    throw contract_error("contextualize_tokens: iterations must be >= 1");
  int64_t n = terminals.dim(0);
  std::vector<Tensor> per_beam;
  per_beam.reserve(beam_records.size());
  std::vector<int> q_heights(n, 0);
  for (const auto& rec : beam_records) {
    if (rec.n() != n)
      throw contract_error("contextualize_tokens: record/terminal mismatch");
    Tensor p = stack_rows(rec.nonterminals);
    std::vector<double> mask_vals(n * rec.l());
    for (int64_t i = 0; i < n; i++)
      for (int64_t j = 0; j < rec.l(); j++)
        mask_vals[i * rec.l() + j] = rec.adjacency[i][j];
    Tensor mask = Tensor::from({n, rec.l()}, std::move(mask_vals));
    Tensor pos = relative_height_bias(q_heights, rec.heights, params.pos_table,
                                      params.max_dist, &rec.adjacency);
    Tensor ctx = terminals;
    for (int it = 0; it < iterations; it++)
      ctx = gau_block(ctx, p, mask, params, pos, training, rng);
    per_beam.push_back(ctx);
  }
  Tensor w = softmax_vec(stack_scalars(beam_scores));
  return weighted_sum(per_beam, w);
}

Tensor attention_pool(const Tensor& r, const Tensor& w1, const Tensor& b1,
                      const Tensor& w2, const Tensor& b2) {
  if (r.rank() != 2 || r.dim(0) < 1)
    throw contract_error("attention_pool: expects a non-empty n x d matrix");
  int64_t n = r.dim(0);
  Tensor logits = linear(gelu(linear(r, w1, b1)), w2, b2);  // n x 1
  Tensor alpha = softmax_vec(reshape(logits, {n}));
  return matmul(alpha, r);  // 1-D weights row -> [d]
}

}  // namespace ebt
