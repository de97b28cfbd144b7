#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gmae/tensor.hpp"

namespace gmae {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // Smallest gradient the central difference can see: f is a long reduction,
  // so allow a few rounding units of f, divided by h. Entries far below it
  // have no meaningful relative error.
  double resolution = 0.0;
  // Relative error with the denominator floored at resolution / tolerance.
  double max_resolved_error = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares tape gradients of a scalar function against central differences,
/// perturbing every coordinate of every tensor in `inputs` by +-h.
/// `tolerance` only sets the floor used by max_resolved_error.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-6,
                                  double tolerance = 1e-4) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = f();
  }
  tape.backward(y);

  GradCheckResult result;
  result.resolution = 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(y.item())) / h;
  const double floor = std::max(1e-8, result.resolution / tolerance);
  NoGradScope no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = inputs[t];
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = f().item();
      x[i] = saved - h;
      const double down = f().item();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = relative_error(a, numeric);
      result.max_resolved_error = std::max(
          result.max_resolved_error, std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric)));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

/// Single-input form: max relative error of d f(x) / dx.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-6) {
  return grad_check([&] { return f(x); }, {x}, h).max_rel_error;
}

}  // namespace gmae
