#pragma once

// Data-parallel inner loops used by the posterior and EM code.
//
// Every kernel has a scalar reference implementation and, where the build and
// the CPU allow it, a vectorized variant (AVX2+FMA on x86-64, NEON on
// aarch64). The active backend is chosen once at startup from CPU feature
// detection; BVSEM_FORCE_SCALAR=1 in the environment pins the scalar path.
// Vectorized reductions use a different summation order than the scalar
// loops, so results agree to rounding, not bit-for-bit.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace bvsem::kernels {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend b);

/// Backend used by the dispatching entry points below.
Backend active_backend();

/// Backends compiled into this binary that the running CPU can execute.
std::vector<Backend> available_backends();

/// Overrides the active backend; throws std::invalid_argument if `b` is not
/// available. Intended for tests and benchmarks.
void set_backend(Backend b);

/// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

/// sum_i w[i] * a[i] * b[i]
double weighted_dot(std::span<const double> a, std::span<const double> b,
                    std::span<const double> w);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// y -= sum_k coeffs[k] * cols[k]; each cols[k] has y.size() entries.
/// This is one column of a rank-l downdate V -= H G^T.
void subtract_combination(std::span<double> y, std::span<const double* const> cols,
                          std::span<const double> coeffs);

// Per-backend entry points, exposed so tests can compare implementations.
// Calling a backend that is not in available_backends() is undefined.
struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*weighted_dot)(const double*, const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*subtract_combination)(double*, std::size_t, const double* const*,
                               const double*, std::size_t);
};

const KernelTable& table_for(Backend b);

}  // namespace bvsem::kernels
