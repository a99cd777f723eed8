#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace bvsem {

inline constexpr const char* kVersion = "0.1.0";

/// Bad input data or configuration supplied by the caller.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or solve failed; never silently patched.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Named random sub-streams. All randomness in the library is drawn from a
/// stream keyed by (seed, purpose, index) so results do not depend on the
/// order in which independent units execute.
enum class Stream : std::uint32_t {
  simulate = 1,
  bootstrap_replicate = 2,
  cv_folds = 3,
  experiment_replicate = 4,
  em_init = 5,
  bench = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Work is handed
/// out by index, so callers that write results into slot i get the same
/// output for every schedule. The first exception thrown is rethrown.
void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& body);

}  // namespace bvsem
