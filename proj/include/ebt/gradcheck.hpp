#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ebt/tensor.hpp"

namespace ebt {

// Central-difference gradient check. `f` must be a deterministic scalar
// function of the given parameters. Returns the max relative error over
// all parameter entries, with denominator max(|analytic|, |numeric|, 1e-6).
// Default step h = 1e-5 (64-bit mode).
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h = 1e-5);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

// Finite-difference checks for every differentiable op and the composed
// blocks built on them. Straight-through selection is excluded: its
// backward is a surrogate by design, not the forward's derivative.
std::vector<GradCheckEntry> gradcheck_suite(uint64_t seed = 0);

}  // namespace ebt
