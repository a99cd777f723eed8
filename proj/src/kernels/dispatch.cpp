#include "bvsem/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace bvsem::kernels {

namespace {

constexpr KernelTable kScalar{&scalar::dot, &scalar::weighted_dot, &scalar::axpy,
                              &scalar::subtract_combination};
#if defined(BVSEM_HAVE_AVX2)
constexpr KernelTable kAvx2{&avx2::dot, &avx2::weighted_dot, &avx2::axpy,
                            &avx2::subtract_combination};
#endif
#if defined(BVSEM_HAVE_NEON)
constexpr KernelTable kNeon{&neon::dot, &neon::weighted_dot, &neon::axpy,
                            &neon::subtract_combination};
#endif

bool cpu_has(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(BVSEM_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(BVSEM_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend detect() {
  if (const char* env = std::getenv("BVSEM_FORCE_SCALAR"); env && std::string(env) == "1") {
    return Backend::scalar;
  }
  if (cpu_has(Backend::avx2)) return Backend::avx2;
  if (cpu_has(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> b{detect()};
  return b;
}

inline const KernelTable& current() { return table_for(active().load(std::memory_order_relaxed)); }

void check_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("kernel operands differ in length");
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

Backend active_backend() { return active().load(); }

std::vector<Backend> available_backends() {
  std::vector<Backend> out;
  for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
    if (cpu_has(b)) out.push_back(b);
  }
  return out;
}

void set_backend(Backend b) {
  if (!cpu_has(b)) {
    throw std::invalid_argument("kernel backend not available: " + std::string(backend_name(b)));
  }
  active().store(b);
}

const KernelTable& table_for(Backend b) {
  switch (b) {
#if defined(BVSEM_HAVE_AVX2)
    case Backend::avx2: return kAvx2;
#endif
#if defined(BVSEM_HAVE_NEON)
    case Backend::neon: return kNeon;
#endif
    default: return kScalar;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size());
  return current().dot(a.data(), b.data(), a.size());
}

double weighted_dot(std::span<const double> a, std::span<const double> b,
                    std::span<const double> w) {
  check_same_size(a.size(), b.size());
  check_same_size(a.size(), w.size());
  return current().weighted_dot(a.data(), b.data(), w.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size());
  current().axpy(alpha, x.data(), y.data(), y.size());
}

void subtract_combination(std::span<double> y, std::span<const double* const> cols,
                          std::span<const double> coeffs) {
  check_same_size(cols.size(), coeffs.size());
  current().subtract_combination(y.data(), y.size(), cols.data(), coeffs.data(), cols.size());
}

}  // namespace bvsem::kernels
