#pragma once

#include <optional>
#include <random>
#include <vector>

#include "ebt/rvnn.hpp"
#include "ebt/tensor.hpp"

namespace ebt {

enum class ScoreMode { entangled, disentangled };

// One beam hypothesis: current node sequence, accumulated log-softmax
// score (a tensor so gradients flow into the scorer), and the merge trace.
struct Beam {
  std::vector<Tensor> seq;
  Tensor score;      // scalar, sum of per-step log-softmax picks, <= 0
  double score_val = 0.0;
  std::vector<int> trace;
};

struct EncodeResult {
  std::vector<Tensor> roots;   // K vectors of dim d
  std::vector<Tensor> scores;  // K scalar tensors
  std::vector<std::vector<int>> traces;
  std::vector<double> score_values() const;
};

// Scores candidate pairs with independent Gumbel(0,1) perturbations and
// returns the top-k perturbed indices (Plackett-Luce sampling without
// replacement). noise=false degrades to a plain deterministic top-k.
// Ties break toward the lower index; k > m returns all m indices.
std::vector<int> stochastic_topk(const std::vector<double>& log_probs, int k,
                                 bool noise, std::mt19937_64& rng);

// Hard one-hot forward at argmax((scores+gumbel)/temperature), soft
// softmax weights on the backward pass.
Tensor gumbel_ste_select(const Tensor& scores, double temperature, bool noise,
                         std::mt19937_64& rng);

struct SteOptions {
  double temperature = 1.0;
  bool noise = true;
  std::mt19937_64* rng = nullptr;
};

// Single easy-first reduction. Returns the n-1 vector sequence; the chosen
// merge index is written to *chosen when given. ste drives training-mode
// straight-through selection; without it the argmax is hard (ties to the
// lowest index).
std::vector<Tensor> greedy_reduce_step(const std::vector<Tensor>& h,
                                       const GRCParams& cell,
                                       const ScorerParams& scorer,
                                       ScoreMode mode,
                                       const SteOptions* ste = nullptr,
                                       int* chosen = nullptr);

EncodeResult beam_encode(const std::vector<Tensor>& x, int k,
                         const GRCParams& cell, const ScorerParams& scorer,
                         ScoreMode mode, bool noise, std::mt19937_64& rng);

Tensor marginalize_roots(const std::vector<Tensor>& roots,
                         const std::vector<Tensor>& scores);

struct OracleEntry {
  double score = 0.0;
  Tensor root;
  std::vector<int> trace;
};

// Enumerates all (n-1)! merge orders; refuses n > 6.
std::vector<OracleEntry> exhaustive_merge_oracle(const std::vector<Tensor>& x,
                                                 const GRCParams& cell,
                                                 const ScorerParams& scorer,
                                                 ScoreMode mode);

}  // namespace ebt
