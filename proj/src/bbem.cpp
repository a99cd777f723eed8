#include "bvsem/bbem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bvsem/kernels.hpp"

namespace bvsem {

std::string to_string(WeightScale s) { return s == WeightScale::sum_to_n ? "sum_to_n" : "sum_to_1"; }

WeightScale weight_scale_from_string(const std::string& s) {
  if (s == "sum_to_n") return WeightScale::sum_to_n;
  if (s == "sum_to_1") return WeightScale::sum_to_1;
  throw InputError("unknown weight scale '" + s + "' (expected sum_to_n|sum_to_1)");
}

int BootstrapConfig::resolved_L(Eigen::Index n, Eigen::Index p) const {
  if (L > 0) return L;
  return static_cast<int>(std::min<Eigen::Index>(p, (n + 1) / 2));
}

void BootstrapConfig::validate(Eigen::Index p) const {
  if (K < 1) throw InputError("K must be at least 1");
  if (L < 0) throw InputError("L must be positive");
  if (L > p) throw InputError("L must not exceed p");
}

Eigen::VectorXd marginal_weights(const Dataset& data) {
  data.validate();
  Eigen::VectorXd pi(data.p());
  const std::span<const double> y{data.y.data(), static_cast<std::size_t>(data.n())};
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    const std::span<const double> x{data.X.col(j).data(), static_cast<std::size_t>(data.n())};
    const double norm2 = kernels::dot(x, x);
    if (!(norm2 > 0.0)) throw InputError("column " + std::to_string(j) + " has zero norm");
    pi[j] = std::abs(kernels::dot(x, y)) / norm2;
  }
  const double total = pi.sum();
  if (total > 0.0) {
    pi /= total;
  } else {
    pi.setConstant(1.0 / static_cast<double>(pi.size()));  // y == 0: no marginal information
  }
  return pi;
}

Eigen::VectorXd draw_dirichlet_weights(Eigen::Index n, Rng& rng) {
  if (n < 1) throw InputError("n must be positive");
  std::exponential_distribution<double> expo(1.0);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double e = expo(rng);
    while (!(e > 0.0)) e = expo(rng);
    w[i] = e;
  }
  return w / w.sum();
}

std::vector<Eigen::Index> sample_subset(const Eigen::VectorXd& pi, int L, Rng& rng) {
  const Eigen::Index p = pi.size();
  if (L < 1 || L > p) throw InputError("subset size must lie in [1, p]");
  std::vector<Eigen::Index> chosen;
  chosen.reserve(static_cast<std::size_t>(L));
  if (L == p) {
    chosen.resize(static_cast<std::size_t>(p));
    std::iota(chosen.begin(), chosen.end(), Eigen::Index{0});
    return chosen;
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(pi[j] >= 0.0) || !std::isfinite(pi[j])) throw InputError("sampling weights must be finite and >= 0");
  }
  if ((pi.array() > 0.0).count() < L) throw InputError("fewer than L variables have nonzero sampling weight");

  Eigen::VectorXd remaining = pi;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int draw = 0; draw < L; ++draw) {
    const double total = remaining.sum();
    const double u = unif(rng) * total;
    double acc = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (remaining[j] <= 0.0) continue;
      acc += remaining[j];
      pick = j;
      if (u < acc) break;
    }
    chosen.push_back(pick);
    remaining[pick] = 0.0;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<ReplicateRecord> run_replicates(const Dataset& data, const HyperParams& hp, const EmConfig& em_cfg,
                                            const BootstrapConfig& cfg, int first, int count) {
  hp.validate();
  cfg.validate(data.p());
  const Eigen::Index n = data.n();
  const Eigen::Index p = data.p();
  const int L = cfg.resolved_L(n, p);
  const Eigen::VectorXd pi = marginal_weights(data);

  std::vector<ReplicateRecord> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), cfg.jobs, [&](std::size_t slot) {
    const auto k = static_cast<std::uint64_t>(first) + slot;
    Rng rng = make_rng(cfg.seed, Stream::bootstrap_replicate, k);
    ReplicateRecord& rec = out[slot];
    rec.subset = sample_subset(pi, L, rng);
    Eigen::VectorXd w = cfg.unit_weights ? Eigen::VectorXd::Ones(n) : draw_dirichlet_weights(n, rng);
    if (!cfg.unit_weights && cfg.weight_scale == WeightScale::sum_to_n) w *= static_cast<double>(n);

    rec.gamma.assign(static_cast<std::size_t>(p), 0);
    rec.m = Eigen::VectorXd::Zero(p);
    try {
      const Dataset sub = select_columns(data, rec.subset);
      const EmResult fit = run_em(sub, hp, em_cfg, std::span<const double>(w.data(), static_cast<std::size_t>(n)));
      for (std::size_t a = 0; a < rec.subset.size(); ++a) {
        rec.gamma[static_cast<std::size_t>(rec.subset[a])] = fit.gamma[a];
        rec.m[rec.subset[a]] = fit.m[static_cast<Eigen::Index>(a)];
      }
      rec.converged = fit.converged;
    } catch (const NumericalError& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  });
  return out;
}

EnsembleResult aggregate(std::vector<ReplicateRecord> replicates, Eigen::Index p) {
  EnsembleResult result;
  result.phi = Eigen::VectorXd::Zero(p);
  result.m_bar = Eigen::VectorXd::Zero(p);
  for (const auto& rec : replicates) {
    for (Eigen::Index j = 0; j < p; ++j) result.phi[j] += rec.gamma[static_cast<std::size_t>(j)];
    result.m_bar += rec.m;
    if (rec.failed) ++result.failures;
  }
  if (!replicates.empty()) {
    result.phi /= static_cast<double>(replicates.size());
    result.m_bar /= static_cast<double>(replicates.size());
  }
  result.replicates = std::move(replicates);
  return result;
}

EnsembleResult run_bbem(const Dataset& data, const HyperParams& hp, const EmConfig& em_cfg,
                        const BootstrapConfig& cfg) {
  return aggregate(run_replicates(data, hp, em_cfg, cfg, 0, cfg.K), data.p());
}

Eigen::VectorXd predict(const Eigen::MatrixXd& X_new, const Eigen::VectorXd& m_bar, const Eigen::VectorXd& phi,
                        const std::optional<Standardization>& st) {
  if (X_new.cols() != m_bar.size() || m_bar.size() != phi.size()) {
    throw InputError("predict: column count does not match coefficient length");
  }
  Eigen::VectorXd out = X_new * m_bar.cwiseProduct(phi);
  if (st) out.array() += st->y_mean;
  return out;
}

Indicator threshold_phi(const Eigen::VectorXd& phi, double threshold) {
  Indicator g(static_cast<std::size_t>(phi.size()));
  for (Eigen::Index j = 0; j < phi.size(); ++j) g[static_cast<std::size_t>(j)] = phi[j] >= threshold ? 1 : 0;
  return g;
}

}  // namespace bvsem
