#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bvsem/bbem.hpp"
#include "bvsem/data.hpp"
#include "bvsem/em.hpp"

namespace bvsem {

enum class Engine { em, bbem };

std::string to_string(Engine e);
Engine engine_from_string(const std::string& s);

enum class GridScale { log10, linear };

struct V0Grid {
  std::vector<double> values;  // strictly increasing, all positive
  GridScale scale = GridScale::log10;

  void validate(double v1) const;

  /// count points evenly spaced in log10 between 10^lo and 10^hi.
  static V0Grid log10_range(double lo, double hi, int count);
  /// {1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2}
  static V0Grid default_cv();
  /// Comma-separated values ("0.001,0.01") or "log10:lo:hi:count".
  static V0Grid parse(const std::string& text);
};

/// Everything an engine needs besides the data and the prior.
struct EngineConfig {
  Engine engine = Engine::em;
  EmConfig em;
  BootstrapConfig boot;
  double threshold = 0.5;  // phi cut used to turn an ensemble into a model
};

/// A single engine run at one v0.
struct Fit {
  Indicator selected;     // gamma (em) or phi >= threshold (bbem)
  Eigen::VectorXd phi;    // binary gamma as reals for em
  Eigen::VectorXd coef;   // m (em) or m_bar (bbem)
  bool converged = true;  // em: converged flag; bbem: all replicates converged
  int failures = 0;
};

Fit fit_engine(const Dataset& data, const HyperParams& hp, const EngineConfig& cfg);

struct PathResult {
  V0Grid grid;
  Eigen::MatrixXd phi_matrix;  // p x G
  Engine engine = Engine::em;
  std::vector<std::string> names;
};

/// One engine run per grid value, all with the same seeds.
PathResult selection_path(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid,
                          const EngineConfig& cfg);

/// Header "variable,<v0 values...>", then one row of phi per variable.
std::string path_csv(const PathResult& path);

/// n log(RSS/n) + |gamma| log n for an OLS refit of the selected columns
/// after centering X and y. Throws InputError when the selection is
/// rank-deficient or has |gamma| >= n.
double bic_score(const Dataset& data, const Indicator& gamma);

inline constexpr double kRssFloor = 1e-300;

struct TuneResult {
  double best_v0 = 0.0;
  std::size_t best_index = 0;
  std::vector<double> scores;  // BIC or CV RMSE per grid value (+inf on failure)
  std::vector<Fit> fits;       // full-data fits per grid value (BIC only)
};

/// Grid value minimizing BIC of the engine's selected model; ties go to
/// the smaller v0.
TuneResult tune_bic(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid,
                    const EngineConfig& cfg);

/// Grid value minimizing k-fold cross-validated RMSE on the raw response
/// scale. Folds are contiguous blocks of a shuffle drawn from `seed`; each
/// training portion is standardized on its own rows. Inside the folds the
/// ensemble uses max(K/2, min(K, 20)) replicates.
TuneResult tune_cv(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid, int folds,
                   const EngineConfig& cfg, std::uint64_t seed);

/// Replicate count used by the ensemble inside cross-validation.
int cv_replicates(int K);

/// Fold label (0..folds-1) for every row.
std::vector<int> assign_folds(Eigen::Index n, int folds, std::uint64_t seed);

}  // namespace bvsem
