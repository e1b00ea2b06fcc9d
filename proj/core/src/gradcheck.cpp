#include "tfm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tfm/error.hpp"

namespace tfm {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double eps, Stencil stencil,
                           double floor) {
  if (!(eps > 0.0)) {
    throw ValueError("grad_check: eps must be positive");
  }
  if (!(floor > 0.0)) {
    throw ValueError("grad_check: floor must be positive");
  }
  for (Tensor<double>& input : inputs) {
    input.set_requires_grad(true);
    input.zero_grad();
  }
  backward(f());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor<double>& input : inputs) {
    analytic.push_back(input.grad_or_zeros());
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double h) {
        values[i] = saved + h;
        return f().item();
      };
      double numeric = 0.0;
      if (stencil == Stencil::three_point) {
        numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      } else {
        numeric = (-at(2.0 * eps) + 8.0 * at(eps) - 8.0 * at(-eps) + at(-2.0 * eps)) / (12.0 * eps);
      }
      values[i] = saved;

      const double exact = analytic[t][i];
      const double rel = std::abs(exact - numeric) / std::max(floor, std::abs(exact) + std::abs(numeric));
      report.max_relative_error = std::max(report.max_relative_error, rel);
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(exact));
      report.max_abs_numeric = std::max(report.max_abs_numeric, std::abs(numeric));
      ++report.components;
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double eps, Stencil stencil, double floor) {
  return grad_check([&f, x] { return f(x); }, {x}, eps, stencil, floor);
}

}  // namespace tfm
