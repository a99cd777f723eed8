#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bvsem/data.hpp"
#include "bvsem/posterior.hpp"

namespace bvsem {

/// Spike-and-slab prior configuration. beta_j | gamma_j ~ N(0, sigma^2 d_j),
/// gamma_j ~ Bern(theta), theta ~ Beta(a0, b0), sigma^2 ~ IG(nu/2, nu*lambda/2).
struct HyperParams {
  double v0 = 0.01;
  double v1 = 100.0;
  double a0 = 1.1;
  double b0 = 1.1;
  double nu = 1.0;
  double lambda = 1.0;

  /// Throws InputError unless v1 > v0 > 0 and a0, b0, nu, lambda > 0.
  void validate() const;
};

enum class GammaInit { all_ones, all_zeros, explicit_vector };

struct EmConfig {
  int max_iter = 100;
  int k0 = 3;  // stop once the last k0 gamma vectors agree
  double theta_init = 0.5;
  double sigma2_init = 1.0;
  GammaInit gamma_init = GammaInit::all_zeros;
  Indicator gamma_explicit;  // used when gamma_init == explicit_vector
  std::uint64_t seed = 0;    // reserved for randomized starts
  bool track_log_posterior = true;

  void validate(Eigen::Index p) const;
};

struct EmState {
  Indicator gamma;
  double sigma2 = 1.0;
  double theta = 0.5;
  int iter = 0;
};

struct IterationRecord {
  int iter = 0;
  int flips = 0;
  double sigma2 = 0.0;
  double theta = 0.0;
  double log_posterior = 0.0;  // NaN when tracking is off
  Refresh refresh = Refresh::direct;
};

struct EmResult {
  Indicator gamma;
  Eigen::VectorXd m;  // posterior mean under the returned gamma
  EmState state;
  bool converged = false;
  std::vector<IterationRecord> trace;  // entry 0 is the initial state
};

/// Inclusion threshold on E[beta_j^2]:
///   r = sigma^2 (log(v1/v0) - 2 log(theta/(1-theta))) / (1/v0 - 1/v1).
/// May be negative, in which case every variable is included.
double threshold_r(const EmState& state, const HyperParams& hp);

/// gamma_j = 1 iff e2_j > r (ties exclude).
Indicator update_gamma(const Eigen::VectorXd& e2, double r);

/// (erss + sum_j e2_j / d_j + nu*lambda) / (n + p + nu), with d from the new gamma.
double update_sigma2(double erss, const Eigen::VectorXd& e2, const PrecisionDiag& prec_new,
                     Eigen::Index n, Eigen::Index p, const HyperParams& hp);

/// Smallest and largest theta the update may return.
inline constexpr double kThetaFloor = 1e-12;

/// (|gamma| + a0 - 1) / (p + a0 + b0 - 2), clamped into [1e-12, 1 - 1e-12].
double update_theta(const Indicator& gamma, const HyperParams& hp, Eigen::Index p);

/// Observed-data log-posterior log pi(gamma, sigma^2, theta | y) up to an
/// additive constant, with beta integrated out:
///   y~ ~ N(0, sigma^2 (X~ D X~^T + I)) times the gamma, theta and sigma^2
/// priors. The sigma^2 prior enters as a density in log sigma^2, the
/// parameterization under which the sigma^2 update above is the exact
/// conditional maximizer. `moments` must be built for state.gamma.
double log_posterior(const Design& design, const PosteriorMoments& moments, const EmState& state,
                     const HyperParams& hp);

/// Same, maximized in closed form over sigma^2 and theta for a fixed gamma.
double profile_log_posterior(const Design& design, const PosteriorMoments& moments, const Indicator& gamma,
                             const HyperParams& hp);

/// Alternating E/M iterations for the MAP model indicator. Weights, when
/// given, turn every likelihood term into its observation-weighted version.
EmResult run_em(const Dataset& data, const HyperParams& hp, const EmConfig& cfg,
                std::optional<std::span<const double>> weights = std::nullopt);

/// Same as run_em on a prepared design; lets callers reuse the Gram cache.
EmResult run_em(const Design& design, const HyperParams& hp, const EmConfig& cfg);

int count_selected(const Indicator& gamma);

}  // namespace bvsem
