#include "ebt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ebt {

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h) {
  std::vector<std::vector<double>> analytic;
  for (auto p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    backward(loss);
    for (const auto& p : params) analytic.push_back(p.grad());
  }
  for (auto p : params) p.zero_grad();

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); pi++) {
    Tensor p = params[pi];
    for (int64_t i = 0; i < p.size(); i++) {
      double orig = p.values()[i];
      p.mutable_values()[i] = orig + h;
      double fp = f().item();
      p.mutable_values()[i] = orig - h;
      double fm = f().item();
      p.mutable_values()[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[pi][i];
      // Central differences with step h carry O(eps / h) absolute noise, so
      // relative error is meaningless for gradients much smaller than that;
      // the floor keeps such entries from dominating the reported error.
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ebt
