#pragma once

#include <functional>

#include "drnn/tensor.hpp"

namespace drnn {

/// Central differences (f(x+he_i) - f(x-he_i)) / 2h for every coordinate of x.
/// Throws std::invalid_argument when step <= 0 and NonFiniteError when f
/// returns NaN/Inf.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step);

/// |a - b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from being judged on rounding noise alone.
double relative_error(double analytic, double numeric, double floor = 1e-4);

}  // namespace drnn
