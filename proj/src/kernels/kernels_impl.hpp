#pragma once

#include <cstddef>

// Raw-pointer kernel signatures shared by the backend translation units.

#define BVSEM_DECLARE_KERNELS(ns)                                                       \
  namespace bvsem::kernels::ns {                                                        \
  double dot(const double* a, const double* b, std::size_t n);                          \
  double weighted_dot(const double* a, const double* b, const double* w, std::size_t n); \
  void axpy(double alpha, const double* x, double* y, std::size_t n);                   \
  void subtract_combination(double* y, std::size_t n, const double* const* cols,        \
                            const double* coeffs, std::size_t l);                       \
  }

BVSEM_DECLARE_KERNELS(scalar)

#if defined(BVSEM_HAVE_AVX2)
BVSEM_DECLARE_KERNELS(avx2)
#endif

#if defined(BVSEM_HAVE_NEON)
BVSEM_DECLARE_KERNELS(neon)
#endif
