#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bvsem/common.hpp"
#include "bvsem/data.hpp"
#include "bvsem/em.hpp"

namespace bvsem {

enum class WeightScale { sum_to_n, sum_to_1 };

std::string to_string(WeightScale s);
WeightScale weight_scale_from_string(const std::string& s);

struct BootstrapConfig {
  int K = 100;  // replicates
  int L = 0;    // variables per replicate; 0 means "use the default for this data"
  std::uint64_t seed = 0;
  WeightScale weight_scale = WeightScale::sum_to_n;
  unsigned jobs = 1;
  // Test hook: every observation weight is 1 instead of a Dirichlet draw.
  bool unit_weights = false;

  /// L resolved against the data: min(p, ceil(n/2)) when unset.
  int resolved_L(Eigen::Index n, Eigen::Index p) const;
  void validate(Eigen::Index p) const;
};

struct ReplicateRecord {
  std::vector<Eigen::Index> subset;  // sorted column indices
  Indicator gamma;                   // length p, zero off-subset
  Eigen::VectorXd m;                 // length p, zero off-subset
  bool converged = false;
  bool failed = false;
  std::string error;
};

struct EnsembleResult {
  Eigen::VectorXd phi;    // selection frequency per variable
  Eigen::VectorXd m_bar;  // mean of the zero-filled replicate posterior means
  std::vector<ReplicateRecord> replicates;
  int failures = 0;
};

/// Marginal-effect sampling probabilities |x_j^T y| / x_j^T x_j, normalized.
/// Throws InputError on a zero-norm column.
Eigen::VectorXd marginal_weights(const Dataset& data);

/// Dirichlet(1, ..., 1) draw via normalized unit-rate exponentials.
Eigen::VectorXd draw_dirichlet_weights(Eigen::Index n, Rng& rng);

/// L distinct indices drawn sequentially without replacement, each draw
/// proportional to pi over the indices not yet taken. Returned sorted.
std::vector<Eigen::Index> sample_subset(const Eigen::VectorXd& pi, int L, Rng& rng);

/// Ensemble of EM fits on Bayesian-bootstrap weighted, column-subsampled
/// replicates. Replicate k draws from stream (seed, k), so the result does
/// not depend on execution order or on `jobs`.
EnsembleResult run_bbem(const Dataset& data, const HyperParams& hp, const EmConfig& em_cfg,
                        const BootstrapConfig& cfg);

/// Runs replicates [first, first + count) only; aggregate() turns any set
/// of records back into phi and m_bar.
std::vector<ReplicateRecord> run_replicates(const Dataset& data, const HyperParams& hp, const EmConfig& em_cfg,
                                            const BootstrapConfig& cfg, int first, int count);

EnsembleResult aggregate(std::vector<ReplicateRecord> replicates, Eigen::Index p);

/// X_new (m_bar .* phi), shifted back by the response mean when `st` is given.
Eigen::VectorXd predict(const Eigen::MatrixXd& X_new, const Eigen::VectorXd& m_bar, const Eigen::VectorXd& phi,
                        const std::optional<Standardization>& st = std::nullopt);

/// phi_j >= threshold as an indicator.
Indicator threshold_phi(const Eigen::VectorXd& phi, double threshold = 0.5);

}  // namespace bvsem
