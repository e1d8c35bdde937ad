#include "drnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace drnn {

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor probe = x;
  Tensor grad = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite difference: non-finite function value");
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace drnn
