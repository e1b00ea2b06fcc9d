#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tfm/tensor.hpp"

namespace tfm {

/// Central difference formulas: (f(x+h) - f(x-h)) / 2h, or the fourth-order
/// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h.
enum class Stencil { three_point, five_point };

struct GradCheckReport {
  /// max over components of |analytic - numeric| / max(floor, |analytic| + |numeric|)
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t components = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, one component at a time. `floor` keeps components whose true
/// gradient sits below the differencing noise from dominating the ratio.
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double eps, Stencil stencil = Stencil::three_point,
                           double floor = 1e-8);

/// Same check over several leaf tensors captured by `f` (e.g. model parameters).
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double eps,
                           Stencil stencil = Stencil::three_point, double floor = 1e-8);

}  // namespace tfm
