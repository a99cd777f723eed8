#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bvsem/bbem.hpp"
#include "bvsem/data.hpp"
#include "bvsem/em.hpp"
#include "bvsem/tuning.hpp"

namespace bvsem {

enum class Tuner { fixed, bic, cv };

std::string to_string(Tuner t);
Tuner tuner_from_string(const std::string& s);

/// theta start: 1/2, or sqrt(n)/p when p > n.
double default_theta_init(Eigen::Index n, Eigen::Index p);

struct ExperimentSpec {
  SimDesign design;  // design.seed is ignored; replicate datasets derive from `seed`
  int replicates = 100;
  Engine method = Engine::em;
  Tuner tuner = Tuner::cv;
  std::optional<double> v0;     // required for Tuner::fixed
  std::optional<V0Grid> grid;   // defaults: CV grid, or the BIC grid for bic
  int folds = 5;
  HyperParams hp;               // v0 here is ignored unless tuner == fixed
  EngineConfig engine;          // engine field is overwritten by `method`
  bool auto_theta = true;       // apply default_theta_init per dataset
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  void validate() const;
};

/// Default v0 grid for BIC tuning; contains 0.03.
V0Grid default_bic_grid();

struct ClassStats {
  int size = 0;
  double selected_mean = 0.0;  // mean selected count per replicate
  double zero_mean = 0.0;      // mean unselected count per replicate
  double min_pct = 0.0;        // over variables in the class: % of replicates selecting it
  double median_pct = 0.0;
  double max_pct = 0.0;
};

struct SummaryTable {
  std::string design;
  Engine method = Engine::em;
  Tuner tuner = Tuner::cv;
  int replicates = 0;
  int failures = 0;
  std::vector<int> selection_counts;  // per variable
  std::vector<double> chosen_v0;      // per replicate (NaN for failures)
  ClassStats signal;
  ClassStats noise;
  double wall_seconds = 0.0;

  /// Flattened metrics keyed like the reference rows.
  std::map<std::string, double> metrics() const;
  /// Deterministic rendering; wall-clock time is left out.
  nlohmann::json to_json() const;
  std::string to_csv() const;
  std::string to_text() const;
};

/// Simulates `replicates` datasets, fits each with the chosen method and
/// tuner, and tallies selections by class. Replicate failures are counted;
/// more than 10% failing throws NumericalError.
SummaryTable run_experiment(const ExperimentSpec& spec);

/// Builds a table from per-replicate selections; used by run_experiment.
SummaryTable summarize(const std::vector<Indicator>& selections, const Indicator& truth);

struct ReferenceRow {
  std::string name;
  std::string citation;
  bool display_only = false;
  std::map<std::string, double> metrics;
};

/// Reference rows shipped with the library.
const std::vector<ReferenceRow>& reference_rows();
const ReferenceRow& reference_row(const std::string& name);

struct CellComparison {
  std::string metric;
  double reference = 0.0;
  double observed = 0.0;
  double deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct ComparisonReport {
  std::string reference;
  std::vector<CellComparison> cells;
  bool pass = false;

  std::string to_text() const;
};

/// Compares every metric of the named reference row against the table with
/// the given absolute tolerance; `per_metric` overrides it cell by cell.
ComparisonReport compare_to_reference(const SummaryTable& table, const std::string& reference, double tolerance,
                                      const std::map<std::string, double>& per_metric = {});

}  // namespace bvsem
