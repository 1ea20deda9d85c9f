#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>

#include "fusionlab/autodiff.hpp"

namespace fusionlab {

struct GradCheckResult {
  // Largest per-coordinate |a - n| / max(1e-8, |a| + |n|), and where it occurs.
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // ||a - n||_2 / max(1e-8, ||a||_2 + ||n||_2), for diagnosis.
  double norm_rel_error = 0.0;
};

// Central differences are taken either in the float32 forward itself or in
// its float64 instantiation. The analytic side is always the float32 graph.
enum class NumericPrecision { Float32, Float64 };

// `f` is a generic callable usable with both BasicVar<float> and
// BasicVar<double> and must return a single-element result. The numeric
// derivative is the fourth-order central stencil
//   (-f(x+2e) + 8 f(x+e) - 8 f(x-e) + f(x-2e)) / 12e,
// whose O(e^4) truncation error stays below the float32 analytic error even
// for coordinates with very small gradients. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|); the maximum over
// coordinates is reported.
template <typename F>
  requires std::invocable<F&, const BasicVar<float>&> &&
           std::invocable<F&, const BasicVar<double>&>
GradCheckResult gradient_check_detailed(F&& f, const Tensor& x, float eps,
                                        NumericPrecision precision = NumericPrecision::Float64) {
  if (!(eps > 0.0f)) throw ContractError("gradient_check: eps must be positive");
  Var xv = parameter(x);
  Var y = f(xv);
  if (y.value().size() != 1) {
    throw ContractError("gradient_check: function must be scalar-valued, got shape " +
                        shape_str(y.shape()));
  }
  backward(y);
  const Tensor analytic = xv.grad();

  GradCheckResult result;
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  const auto central = [&]<typename S>(BasicTensor<S> probe, std::size_t i) {
    const S orig = probe[i];
    const auto at = [&](double k) {
      probe[i] = static_cast<S>(orig + k * static_cast<double>(eps));
      return static_cast<double>(f(constant(probe)).value().item());
    };
    // Step actually taken after rounding to S.
    const double h = (static_cast<double>(static_cast<S>(orig + static_cast<double>(eps))) -
                      static_cast<double>(static_cast<S>(orig - static_cast<double>(eps)))) /
                     2.0;
    return (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
  };
  const BasicTensor<double> x64 = x.cast<double>();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double numeric =
        precision == NumericPrecision::Float64 ? central(x64, i) : central(x, i);
    const double a = analytic[i];
    diff_sq += (a - numeric) * (a - numeric);
    a_sq += a * a;
    n_sq += numeric * numeric;
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  }
  result.norm_rel_error = std::sqrt(diff_sq) / std::max(1e-8, std::sqrt(a_sq) + std::sqrt(n_sq));
  return result;
}

template <typename F>
double gradient_check(F&& f, const Tensor& x, float eps,
                      NumericPrecision precision = NumericPrecision::Float64) {
  return gradient_check_detailed(std::forward<F>(f), x, eps, precision).max_rel_error;
}

}  // namespace fusionlab
