#include "kernels_impl.hpp"

namespace bvsem::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double weighted_dot(const double* a, const double* b, const double* w, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void subtract_combination(double* y, std::size_t n, const double* const* cols,
                          const double* coeffs, std::size_t l) {
  for (std::size_t k = 0; k < l; ++k) {
    const double c = coeffs[k];
    const double* x = cols[k];
    for (std::size_t i = 0; i < n; ++i) y[i] -= c * x[i];
  }
}

}  // namespace bvsem::kernels::scalar
