#include "ebt/tree_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ebt {

namespace {

double gumbel_noise(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(
      std::numeric_limits<double>::min(), 1.0);
  return -std::log(-std::log(u(rng)));
}

int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); i++)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

struct ScoredPairs {
  std::vector<Tensor> parents;  // entangled mode only
  Tensor log_probs;             // [m-1]
};

ScoredPairs score_pairs(const std::vector<Tensor>& h, const GRCParams& cell,
                        const ScorerParams& scorer, ScoreMode mode) {
  ScoredPairs out;
  if (mode == ScoreMode::entangled) {
    auto [parents, scores] = entangled_candidate_scores(h, cell, scorer);
    out.parents = std::move(parents);
    out.log_probs = log_softmax(stack_scalars(scores));
  } else {
    std::vector<Tensor> scores;
    scores.reserve(h.size() - 1);
    for (size_t i = 0; i + 1 < h.size(); i++)
      scores.push_back(disentangled_score(h[i], h[i + 1], scorer));
    out.log_probs = log_softmax(stack_scalars(scores));
  }
  return out;
}

}  // namespace

std::vector<double> EncodeResult::score_values() const {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(s.item());
  return out;
}

std::vector<int> stochastic_topk(const std::vector<double>& log_probs, int k,
                                 bool noise, std::mt19937_64& rng) {
  if (k < 1) throw contract_error("stochastic_topk: k must be >= 1");
  int m = static_cast<int>(log_probs.size());
  std::vector<std::pair<double, int>> keyed(m);
  for (int i = 0; i < m; i++) {
    double key = log_probs[i];
    if (noise) key += gumbel_noise(rng);
    keyed[i] = {key, i};
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int take = std::min(k, m);
  std::vector<int> out(take);
  for (int i = 0; i < take; i++) out[i] = keyed[i].second;
  return out;
}

Tensor gumbel_ste_select(const Tensor& scores, double temperature, bool noise,
                         std::mt19937_64& rng) {
  if (scores.rank() != 1 || scores.size() < 1)
    throw contract_error("gumbel_ste_select: expects a non-empty vector");
  if (temperature <= 0)
    throw contract_error("gumbel_ste_select: temperature must be > 0");
  Tensor shifted = scores;
  if (noise) {
    std::vector<double> g(scores.size());
    for (auto& v : g) v = gumbel_noise(rng);
    shifted = add(scores, Tensor::from(scores.shape(), std::move(g)));
  }
  Tensor soft = softmax_vec(scale(shifted, 1.0 / temperature));
  return ste_hard(soft, argmax_lowest(soft.values()));
}

std::vector<Tensor> greedy_reduce_step(const std::vector<Tensor>& h,
                                       const GRCParams& cell,
                                       const ScorerParams& scorer,
                                       ScoreMode mode, const SteOptions* ste,
                                       int* chosen) {
  if (h.size() < 2)
    throw contract_error("greedy_reduce_step: need n >= 2, got " +
                         std::to_string(h.size()));
  ScoredPairs sp = score_pairs(h, cell, scorer, mode);
  int m = static_cast<int>(h.size()) - 1;

  Tensor merged;
  int j;
  if (ste != nullptr) {
    Tensor one_hot =
        gumbel_ste_select(sp.log_probs, ste->temperature, ste->noise,
                          *ste->rng);
    j = argmax_lowest(one_hot.values());
    if (mode == ScoreMode::entangled) {
      merged = matmul(one_hot, stack_rows(sp.parents));
    } else {
      // The selected pair is the only one composed; the STE gate forwards
      // exactly 1 and routes score gradient through the soft weights.
      Tensor parent = grc_compose(h[j], h[j + 1], cell);
      merged = scale_by(parent, pick(one_hot, j));
    }
  } else {
    j = argmax_lowest(sp.log_probs.values());
    merged = mode == ScoreMode::entangled
                 ? sp.parents[j]
                 : grc_compose(h[j], h[j + 1], cell);
  }
  if (chosen != nullptr) *chosen = j;
  (void)m;

  std::vector<Tensor> next;
  next.reserve(h.size() - 1);
  for (int i = 0; i < static_cast<int>(h.size()); i++) {
    if (i == j) {
      next.push_back(merged);
    } else if (i != j + 1) {
      next.push_back(h[i]);
    }
  }
  return next;
}

EncodeResult beam_encode(const std::vector<Tensor>& x, int k,
                         const GRCParams& cell, const ScorerParams& scorer,
                         ScoreMode mode, bool noise, std::mt19937_64& rng) {
  if (x.empty()) throw contract_error("beam_encode: empty input");
  if (k < 1) throw contract_error("beam_encode: beam size must be >= 1");

  std::vector<Beam> beams;
  beams.push_back(Beam{x, Tensor::scalar(0.0), 0.0, {}});

  while (beams[0].seq.size() > 2) {
    struct Cand {
      int beam = 0;
      int j = 0;
      double score_val = 0.0;
    };
    std::vector<Cand> pool;
    std::vector<Tensor> beam_lp(beams.size());
    std::vector<std::vector<Tensor>> beam_parents(beams.size());
    int m = static_cast<int>(beams[0].seq.size()) - 1;

    for (size_t b = 0; b < beams.size(); b++) {
      ScoredPairs sp = score_pairs(beams[b].seq, cell, scorer, mode);
      beam_lp[b] = sp.log_probs;
      beam_parents[b] = std::move(sp.parents);
      std::vector<int> picks =
          stochastic_topk(sp.log_probs.values(), std::min(k, m), noise, rng);
      for (int j : picks)
        pool.push_back(Cand{static_cast<int>(b), j,
                            beams[b].score_val + sp.log_probs.values()[j]});
    }

    // Global prune on accumulated scores; deterministic even when the
    // within-beam stage was noisy. Ties resolve by trace lexicographic
    // order.
    std::sort(pool.begin(), pool.end(), [&](const Cand& a, const Cand& b) {
      if (a.score_val != b.score_val) return a.score_val > b.score_val;
      const auto& ta = beams[a.beam].trace;
      const auto& tb = beams[b.beam].trace;
      if (ta != tb) return ta < tb;
      return a.j < b.j;
    });
    int keep = std::min<int>(k, static_cast<int>(pool.size()));

    std::vector<Beam> next;
    next.reserve(keep);
    for (int c = 0; c < keep; c++) {
      const Cand& cand = pool[c];
      const Beam& src = beams[cand.beam];
      Beam nb;
      nb.seq = src.seq;
      Tensor merged =
          mode == ScoreMode::entangled
              ? beam_parents[cand.beam][cand.j]
              : grc_compose(nb.seq[cand.j], nb.seq[cand.j + 1], cell);
      nb.seq[cand.j] = merged;
      nb.seq.erase(nb.seq.begin() + cand.j + 1);
      nb.score = add(src.score, pick(beam_lp[cand.beam], cand.j));
      nb.score_val = cand.score_val;
      nb.trace = src.trace;
      nb.trace.push_back(cand.j);
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  if (beams[0].seq.size() == 2) {
    for (auto& b : beams) {
      b.seq = {grc_compose(b.seq[0], b.seq[1], cell)};
      b.trace.push_back(0);
    }
  }

  EncodeResult out;
  for (auto& b : beams) {
    out.roots.push_back(b.seq[0]);
    out.scores.push_back(b.score);
    out.traces.push_back(std::move(b.trace));
  }
  return out;
}

Tensor marginalize_roots(const std::vector<Tensor>& roots,
                         const std::vector<Tensor>& scores) {
  if (roots.empty() || roots.size() != scores.size())
    throw contract_error("marginalize_roots: need matching roots and scores");
  Tensor w = softmax_vec(stack_scalars(scores));
  return weighted_sum(roots, w);
}

namespace {

void oracle_recurse(const std::vector<Tensor>& seq, double score,
                    std::vector<int>& trace, const GRCParams& cell,
                    const ScorerParams& scorer, ScoreMode mode,
                    std::vector<OracleEntry>& out) {
  if (seq.size() == 1) {
    out.push_back(OracleEntry{score, seq[0], trace});
    return;
  }
  ScoredPairs sp = score_pairs(seq, cell, scorer, mode);
  const auto& lp = sp.log_probs.values();
  for (size_t j = 0; j + 1 < seq.size(); j++) {
    std::vector<Tensor> next = seq;
    next[j] = mode == ScoreMode::entangled
                  ? sp.parents[j]
                  : grc_compose(seq[j], seq[j + 1], cell);
    next.erase(next.begin() + j + 1);
    trace.push_back(static_cast<int>(j));
    oracle_recurse(next, score + lp[j], trace, cell, scorer, mode, out);
    trace.pop_back();
  }
}

}  // namespace

std::vector<OracleEntry> exhaustive_merge_oracle(const std::vector<Tensor>& x,
                                                 const GRCParams& cell,
                                                 const ScorerParams& scorer,
                                                 ScoreMode mode) {
  if (x.empty()) throw contract_error("exhaustive_merge_oracle: empty input");
  if (x.size() > 6)
    throw contract_error(
        "exhaustive_merge_oracle: refusing n > 6 (factorial blowup), got n=" +
        std::to_string(x.size()));
  std::vector<OracleEntry> out;
  std::vector<int> trace;
  oracle_recurse(x, 0.0, trace, cell, scorer, mode, out);
  return out;
}

}  // namespace ebt
