#pragma once

#include <functional>
#include <string>

#include "capsan/tensor.hpp"

namespace capsan {

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string message;
};

// Central-difference check of d f(x) / dx against the autodiff gradient.
// f must return a scalar tensor and x must be a leaf with requires_grad set.
// Relative error uses max(1, |analytic|, |numeric|) as denominator so near-zero
// gradients are compared absolutely.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                           double step = 1e-5, double tol = 1e-4);

}  // namespace capsan
