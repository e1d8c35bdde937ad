#pragma once

#include <cstddef>
#include <cstring>

namespace drnn::kernels {

// Four partial sums s_j = sum a[4k+j] b[4k+j], combined as (s0+s1)+(s2+s3).
// The two 2-lane vectors hold exactly those sums, so results match the scalar
// form bit for bit.
inline double dot(const double* a, const double* b, std::size_t n) {
  typedef double v2d __attribute__((vector_size(16)));
  v2d lo = {0.0, 0.0}, hi = {0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    v2d a0, a1, b0, b1;
    std::memcpy(&a0, a + i, sizeof a0);
    std::memcpy(&a1, a + i + 2, sizeof a1);
    std::memcpy(&b0, b + i, sizeof b0);
    std::memcpy(&b1, b + i + 2, sizeof b1);
    lo += a0 * b0;
    hi += a1 * b1;
  }
  double s0 = lo[0];
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + lo[1]) + (hi[0] + hi[1]);
}

// y += a * x
inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// y = M x, M is rows x cols row-major.
inline void matvec(const double* m, const double* x, double* y, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(m + r * cols, x, cols);
}

}  // namespace drnn::kernels
