#include "ebt/rvnn.hpp"

#include <cmath>

namespace ebt {

namespace {
thread_local CellCounters g_counters;
}

CellCounters& counters() { return g_counters; }

Tensor kaiming_uniform(int64_t fan_in, Shape shape, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), /*requires_grad=*/true);
}

GRCParams GRCParams::init(int d, int d_cell, std::mt19937_64& rng) {
  GRCParams p;
  p.d = d;
  p.d_cell = d_cell;
  p.w1 = kaiming_uniform(2 * d, {2 * d, d_cell}, rng);
  p.b1 = Tensor::zeros({d_cell}, true);
  p.w2 = kaiming_uniform(d_cell, {d_cell, 4 * d}, rng);
  p.b2 = Tensor::zeros({4 * d}, true);
  p.ln_gain = Tensor::full({d}, 1.0, true);
  p.ln_bias = Tensor::zeros({d}, true);
  return p;
}

int64_t GRCParams::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + ln_gain.size() +
         ln_bias.size();
}

ScorerParams ScorerParams::init(int d, int d_s, bool slice,
                                std::mt19937_64& rng) {
  ScorerParams s;
  s.d = d;
  s.d_s = d_s;
  s.slice = slice;
  int64_t in = 2 * s.input_width();
  s.legacy_wv = kaiming_uniform(d, {d, 1}, rng);
  s.ws1 = kaiming_uniform(in, {in, d_s}, rng);
  s.bs1 = Tensor::zeros({d_s}, true);
  s.ws2 = kaiming_uniform(d_s, {d_s, 1}, rng);
  s.bs2 = Tensor::zeros({1}, true);
  return s;
}

int64_t ScorerParams::scorer_param_count() const {
  return ws1.size() + bs1.size() + ws2.size() + bs2.size();
}

InitTransform InitTransform::init(int d_in, int d, std::mt19937_64& rng) {
  InitTransform t;
  t.d_in = d_in;
  t.d = d;
  t.w = kaiming_uniform(d_in, {d_in, d}, rng);
  t.b = Tensor::zeros({d}, true);
  t.ln_gain = Tensor::full({d}, 1.0, true);
  t.ln_bias = Tensor::zeros({d}, true);
  return t;
}

Tensor init_transform(const Tensor& tokens, const InitTransform& p) {
  if (tokens.dim(tokens.rank() - 1) != p.d_in)
    throw shape_error("init_transform: token dim " + shape_str(tokens.shape()) +
                      " vs d_emb " + std::to_string(p.d_in));
  return layer_norm(linear(tokens, p.w, p.b), p.ln_gain, p.ln_bias);
}

Tensor grc_compose(const Tensor& child_l, const Tensor& child_r,
                   const GRCParams& p) {
  if (child_l.size() != p.d || child_r.size() != p.d)
    throw shape_error("grc_compose: children " + shape_str(child_l.shape()) +
                      "," + shape_str(child_r.shape()) + " vs d=" +
                      std::to_string(p.d));
  g_counters.grc_compose++;
  Tensor cat = concat(child_l, child_r);
  Tensor hidden = gelu(linear(cat, p.w1, p.b1));
  Tensor gates = linear(hidden, p.w2, p.b2);
  Tensor combined = gated_combine(gates, child_l, child_r);
  return layer_norm(combined, p.ln_gain, p.ln_bias);
}

Tensor legacy_score(const Tensor& p_vec, const ScorerParams& s) {
  if (p_vec.size() != s.d)
    throw shape_error("legacy_score: input " + shape_str(p_vec.shape()) +
                      " vs d=" + std::to_string(s.d));
  g_counters.legacy_score++;
  return reshape(matmul(reshape(p_vec, {1, s.d}), s.legacy_wv), {1});
}

Tensor disentangled_score(const Tensor& h_i, const Tensor& h_j,
                          const ScorerParams& s) {
  if (h_i.size() != s.d || h_j.size() != s.d)
    throw shape_error("disentangled_score: inputs " +
                      shape_str(h_i.shape()) + "," + shape_str(h_j.shape()) +
                      " vs d=" + std::to_string(s.d));
  g_counters.disentangled_score++;
  Tensor feat = s.slice ? concat_prefix(h_i, h_j, s.d_s) : concat(h_i, h_j);
  return mlp_score(feat, s.ws1, s.bs1, s.ws2, s.bs2);
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> entangled_candidate_scores(
    const std::vector<Tensor>& h, const GRCParams& cell,
    const ScorerParams& s) {
  if (h.size() < 2)
    throw contract_error("entangled_candidate_scores: need n >= 2, got " +
                         std::to_string(h.size()));
  std::vector<Tensor> parents, scores;
  parents.reserve(h.size() - 1);
  scores.reserve(h.size() - 1);
  for (size_t i = 0; i + 1 < h.size(); i++) {
    parents.push_back(grc_compose(h[i], h[i + 1], cell));
    scores.push_back(legacy_score(parents.back(), s));
  }
  return {std::move(parents), std::move(scores)};
}

}  // namespace ebt
