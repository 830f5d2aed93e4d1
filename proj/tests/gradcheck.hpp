#pragma once

// Central finite-difference oracle for reverse-mode gradients. Lives in test
// code only; independent of the tape it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "parot/nn.hpp"
#include "parot/tensor.hpp"

namespace parot::testing {

// Relative error between an analytic and a finite-difference gradient of one
// coordinate, guarded against both being tiny.
inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Checks d(loss)/d(param[i]) for every coordinate of `param` against central
/// finite differences of `eval` (which must rebuild the forward pass from the
/// current parameter values). Returns the max relative error.
///
/// The denominator floor scales with |loss|: a central difference carries
/// roundoff noise of about |loss|*eps/step, so gradients far below that level
/// can only be checked absolutely, not relatively.
inline double gradcheck_param(parot::num::Tensor<double>& param,
                              const std::function<double()>& eval,
                              const std::vector<double>& analytic_grad,
                              double step = 3e-6) {
  double worst = 0;
  const double floor = std::max(1e-6, std::abs(eval()) * 1e-6);
  auto& data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    double saved = data[i];
    data[i] = saved + step;
    double up = eval();
    data[i] = saved - step;
    double down = eval();
    data[i] = saved;
    double fd = (up - down) / (2 * step);
    double denom = std::max({std::abs(analytic_grad[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(analytic_grad[i] - fd) / denom);
  }
  return worst;
}

}  // namespace parot::testing
