#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "ebt/tensor.hpp"

namespace ebt {

// Gated Recursive Cell parameters. The 4d projection splits into
// [l; r; g; h] in that order.
struct GRCParams {
  int d = 0;
  int d_cell = 0;
  Tensor w1;       // 2d x d_cell
  Tensor b1;       // d_cell
  Tensor w2;       // d_cell x 4d
  Tensor b2;       // 4d
  Tensor ln_gain;  // d
  Tensor ln_bias;  // d

  static GRCParams init(int d, int d_cell, std::mt19937_64& rng);
  int64_t param_count() const;
};

// Legacy one-matrix scorer plus the disentangled sliced 2-layer MLP scorer.
// With slice disabled the MLP consumes full 2d-wide concatenations.
struct ScorerParams {
  int d = 0;
  int d_s = 64;
  bool slice = true;
  Tensor legacy_wv;  // d x 1
  Tensor ws1;        // 2*min(d_s,d) x d_s  (2d x d_s when slice is off)
  Tensor bs1;        // d_s
  Tensor ws2;        // d_s x 1
  Tensor bs2;        // 1

  static ScorerParams init(int d, int d_s, bool slice, std::mt19937_64& rng);
  int64_t input_width() const { return slice ? std::min(d_s, d) : d; }
  int64_t scorer_param_count() const;
};

struct InitTransform {
  int d_in = 0;
  int d = 0;
  Tensor w;        // d_in x d
  Tensor b;        // d
  Tensor ln_gain;  // d
  Tensor ln_bias;  // d

  static InitTransform init(int d_in, int d, std::mt19937_64& rng);
};

// Per-thread invocation counters used by the search and training contracts.
struct CellCounters {
  int64_t grc_compose = 0;
  int64_t legacy_score = 0;
  int64_t disentangled_score = 0;
  void reset() { *this = CellCounters{}; }
};
CellCounters& counters();

Tensor init_transform(const Tensor& tokens, const InitTransform& p);
Tensor grc_compose(const Tensor& child_l, const Tensor& child_r,
                   const GRCParams& p);
Tensor legacy_score(const Tensor& p_vec, const ScorerParams& s);
Tensor disentangled_score(const Tensor& h_i, const Tensor& h_j,
                          const ScorerParams& s);

// Composes all n-1 adjacent pairs and scores each with the legacy scorer.
// This is the memory-bottleneck path kept as the BT/GT baseline.
std::pair<std::vector<Tensor>, std::vector<Tensor>> entangled_candidate_scores(
    const std::vector<Tensor>& h, const GRCParams& cell,
    const ScorerParams& s);

// Kaiming-style uniform fan-in init used for all weight matrices.
Tensor kaiming_uniform(int64_t fan_in, Shape shape, std::mt19937_64& rng);

}  // namespace ebt
