#include "bvsem/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "bvsem/common.hpp"

namespace bvsem {

void HyperParams::validate() const {
  if (!(v0 > 0.0)) throw InputError("v0 must be positive");
  if (!(v0 < v1)) throw InputError("v0 must be < v1");
  if (!(a0 > 0.0) || !(b0 > 0.0)) throw InputError("a0 and b0 must be positive");
  if (!(nu > 0.0) || !(lambda > 0.0)) throw InputError("nu and lambda must be positive");
}

void EmConfig::validate(Eigen::Index p) const {
  if (max_iter < 1) throw InputError("max_iter must be positive");
  if (k0 < 1) throw InputError("k0 must be positive");
  if (k0 > max_iter) throw InputError("k0 must not exceed max_iter");
  if (!(theta_init > 0.0 && theta_init < 1.0)) throw InputError("theta_init must lie in (0, 1)");
  if (!(sigma2_init > 0.0)) throw InputError("sigma2_init must be positive");
  if (gamma_init == GammaInit::explicit_vector && static_cast<Eigen::Index>(gamma_explicit.size()) != p) {
    throw InputError("explicit gamma_init has length " + std::to_string(gamma_explicit.size()) +
                     ", expected " + std::to_string(p));
  }
}

int count_selected(const Indicator& gamma) {
  return static_cast<int>(std::count(gamma.begin(), gamma.end(), std::uint8_t{1}));
}

double threshold_r(const EmState& state, const HyperParams& hp) {
  const double log_odds = std::log(state.theta / (1.0 - state.theta));
  return state.sigma2 * (std::log(hp.v1 / hp.v0) - 2.0 * log_odds) / (1.0 / hp.v0 - 1.0 / hp.v1);
}

Indicator update_gamma(const Eigen::VectorXd& e2, double r) {
  Indicator g(static_cast<std::size_t>(e2.size()));
  for (Eigen::Index j = 0; j < e2.size(); ++j) g[static_cast<std::size_t>(j)] = e2[j] > r ? 1 : 0;
  return g;
}

double update_sigma2(double erss, const Eigen::VectorXd& e2, const PrecisionDiag& prec_new,
                     Eigen::Index n, Eigen::Index p, const HyperParams& hp) {
  const double scaled = (e2.array() / prec_new.d.array()).sum();
  return (erss + scaled + hp.nu * hp.lambda) / (static_cast<double>(n + p) + hp.nu);
}

double update_theta(const Indicator& gamma, const HyperParams& hp, Eigen::Index p) {
  const double theta = (count_selected(gamma) + hp.a0 - 1.0) / (static_cast<double>(p) + hp.a0 + hp.b0 - 2.0);
  return std::clamp(theta, kThetaFloor, 1.0 - kThetaFloor);
}

namespace {

// Marginal log-likelihood of y~ given (gamma, sigma^2) without the 2*pi term,
// plus the log-sigma^2 prior. Returns the pieces that do not involve theta.
double sigma_terms(const Design& design, const PosteriorMoments& moments, double sigma2, const HyperParams& hp) {
  const double n = static_cast<double>(design.n());
  const double quad = std::max(design.yty() - design.xty().dot(moments.m), 0.0);
  const double log_det_marginal = moments.prec.d.array().log().sum() - moments.log_det_v;
  return -0.5 * (n + hp.nu) * std::log(sigma2) - 0.5 * log_det_marginal -
         (quad + hp.nu * hp.lambda) / (2.0 * sigma2);
}

double theta_terms(const Indicator& gamma, double theta, const HyperParams& hp) {
  const double k = count_selected(gamma);
  const double p = static_cast<double>(gamma.size());
  return (k + hp.a0 - 1.0) * std::log(theta) + (p - k + hp.b0 - 1.0) * std::log1p(-theta);
}

Indicator initial_gamma(const EmConfig& cfg, Eigen::Index p) {
  switch (cfg.gamma_init) {
    case GammaInit::all_ones: return Indicator(static_cast<std::size_t>(p), 1);
    case GammaInit::all_zeros: return Indicator(static_cast<std::size_t>(p), 0);
    case GammaInit::explicit_vector: {
      Indicator g = cfg.gamma_explicit;
      for (auto& v : g) v = v ? 1 : 0;
      return g;
    }
  }
  return Indicator(static_cast<std::size_t>(p), 0);
}

}  // namespace

double log_posterior(const Design& design, const PosteriorMoments& moments, const EmState& state,
                     const HyperParams& hp) {
  return sigma_terms(design, moments, state.sigma2, hp) + theta_terms(state.gamma, state.theta, hp);
}

double profile_log_posterior(const Design& design, const PosteriorMoments& moments, const Indicator& gamma,
                             const HyperParams& hp) {
  const double quad = std::max(design.yty() - design.xty().dot(moments.m), 0.0);
  const double sigma2 = (quad + hp.nu * hp.lambda) / (static_cast<double>(design.n()) + hp.nu);
  const double theta = update_theta(gamma, hp, static_cast<Eigen::Index>(gamma.size()));
  return sigma_terms(design, moments, sigma2, hp) + theta_terms(gamma, theta, hp);
}

EmResult run_em(const Design& design, const HyperParams& hp, const EmConfig& cfg) {
  hp.validate();
  cfg.validate(design.p());
  const Eigen::Index n = design.n();
  const Eigen::Index p = design.p();
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  EmState state{initial_gamma(cfg, p), cfg.sigma2_init, cfg.theta_init, 0};
  PosteriorMoments moments = build_posterior(design, PrecisionDiag::from_gamma(state.gamma, hp.v0, hp.v1));

  EmResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.max_iter) + 1);
  auto record = [&](int flips) {
    const double lp = cfg.track_log_posterior ? log_posterior(design, moments, state, hp) : kNaN;
    result.trace.push_back({state.iter, flips, state.sigma2, state.theta, lp, moments.last_refresh});
  };
  record(0);

  int stable = 1;  // length of the current run of identical gamma vectors
  for (int t = 1; t <= cfg.max_iter; ++t) {
    // M-step against the expectations of the current E-step.
    const Eigen::VectorXd e2 = second_moments(moments, state.sigma2);
    const double erss = expected_rss_gram(design, moments, state.sigma2);
    Indicator gamma = update_gamma(e2, threshold_r(state, hp));
    PrecisionDiag prec = PrecisionDiag::from_gamma(gamma, hp.v0, hp.v1);
    const double sigma2 = update_sigma2(erss, e2, prec, n, p, hp);
    const double theta = update_theta(gamma, hp, p);

    // E-step for the new gamma.
    const std::vector<Flip> flips = diff_flips(moments.prec, prec);
    moments = update_posterior(std::move(moments), flips, design);
    state = EmState{std::move(gamma), sigma2, theta, t};
    record(static_cast<int>(flips.size()));

    stable = flips.empty() ? stable + 1 : 1;
    if (stable >= cfg.k0) {
      result.converged = true;
      break;
    }
  }

  result.gamma = state.gamma;
  result.m = moments.m;
  result.state = std::move(state);
  return result;
}

EmResult run_em(const Dataset& data, const HyperParams& hp, const EmConfig& cfg,
                std::optional<std::span<const double>> weights) {
  return run_em(Design(data, weights), hp, cfg);
}

}  // namespace bvsem
