#include "bvsem/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "bvsem/common.hpp"

namespace bvsem {

extern const char* const kReferenceTablesJson;

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

struct ReplicateOutcome {
  Indicator selected;
  Indicator truth;
  double v0 = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
};

ReplicateOutcome run_one(const ExperimentSpec& spec, std::size_t r) {
  Rng seeder = make_rng(spec.seed, Stream::experiment_replicate, r);
  SimDesign design = spec.design;
  design.seed = seeder();
  const SimulatedData sim = simulate(design);
  const Dataset data = standardize(sim.data);

  EngineConfig cfg = spec.engine;
  cfg.engine = spec.method;
  cfg.boot.seed = seeder();
  if (spec.auto_theta) cfg.em.theta_init = default_theta_init(data.n(), data.p());

  ReplicateOutcome out;
  out.truth = sim.gamma;
  HyperParams hp = spec.hp;
  switch (spec.tuner) {
    case Tuner::fixed: {
      hp.v0 = *spec.v0;
      out.selected = fit_engine(data, hp, cfg).selected;
      out.v0 = hp.v0;
      break;
    }
    case Tuner::bic: {
      const V0Grid grid = spec.grid.value_or(default_bic_grid());
      TuneResult t = tune_bic(data, hp, grid, cfg);
      out.selected = std::move(t.fits[t.best_index].selected);
      out.v0 = t.best_v0;
      break;
    }
    case Tuner::cv: {
      const V0Grid grid = spec.grid.value_or(V0Grid::default_cv());
      const TuneResult t = tune_cv(data, hp, grid, spec.folds, cfg, seeder());
      hp.v0 = t.best_v0;
      out.selected = fit_engine(data, hp, cfg).selected;
      out.v0 = t.best_v0;
      break;
    }
  }
  return out;
}

}  // namespace

std::string to_string(Tuner t) {
  switch (t) {
    case Tuner::fixed: return "fixed";
    case Tuner::bic: return "bic";
    case Tuner::cv: return "cv";
  }
  return "unknown";
}

Tuner tuner_from_string(const std::string& s) {
  if (s == "fixed") return Tuner::fixed;
  if (s == "bic") return Tuner::bic;
  if (s == "cv") return Tuner::cv;
  throw InputError("unknown tuner '" + s + "' (expected fixed|bic|cv)");
}

double default_theta_init(Eigen::Index n, Eigen::Index p) {
  if (p <= n) return 0.5;
  return std::clamp(std::sqrt(static_cast<double>(n)) / static_cast<double>(p), 1e-6, 0.5);
}

V0Grid default_bic_grid() {
  return V0Grid{{0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1}, GridScale::log10};
}

void ExperimentSpec::validate() const {
  if (replicates < 1) throw InputError("replicates must be positive");
  if (tuner == Tuner::fixed && !v0) throw InputError("tuner=fixed requires v0");
  if (tuner == Tuner::cv && folds < 2) throw InputError("folds must be at least 2");
  HyperParams check = hp;
  if (v0) check.v0 = *v0;
  check.validate();
  if (grid) grid->validate(hp.v1);
}

SummaryTable summarize(const std::vector<Indicator>& selections, const Indicator& truth) {
  SummaryTable t;
  const std::size_t p = truth.size();
  t.replicates = static_cast<int>(selections.size());
  t.selection_counts.assign(p, 0);
  for (const auto& s : selections) {
    if (s.size() != p) throw InputError("selection length does not match truth");
    for (std::size_t j = 0; j < p; ++j) t.selection_counts[j] += s[j];
  }
  for (const bool signal : {true, false}) {
    ClassStats& cs = signal ? t.signal : t.noise;
    std::vector<double> pct;
    int total = 0;
    for (std::size_t j = 0; j < p; ++j) {
      if ((truth[j] != 0) != signal) continue;
      ++cs.size;
      total += t.selection_counts[j];
      pct.push_back(t.replicates ? 100.0 * t.selection_counts[j] / t.replicates : 0.0);
    }
    if (t.replicates > 0) {
      cs.selected_mean = static_cast<double>(total) / t.replicates;
      cs.zero_mean = cs.size - cs.selected_mean;
    }
    if (!pct.empty()) {
      cs.min_pct = *std::min_element(pct.begin(), pct.end());
      cs.max_pct = *std::max_element(pct.begin(), pct.end());
      cs.median_pct = median_of(pct);
    }
  }
  return t;
}

SummaryTable run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(spec.replicates));
  parallel_for(outcomes.size(), spec.jobs, [&](std::size_t r) {
    try {
      outcomes[r] = run_one(spec, r);
    } catch (const NumericalError&) {
      outcomes[r].failed = true;
    }
  });

  std::vector<Indicator> selections;
  Indicator truth;
  int failures = 0;
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++failures;
      continue;
    }
    truth = o.truth;
    selections.push_back(o.selected);
  }
  if (failures * 10 > spec.replicates || selections.empty()) {
    throw NumericalError(fmt::format("{} of {} replicates failed", failures, spec.replicates));
  }

  SummaryTable t = summarize(selections, truth);
  t.design = to_string(spec.design.kind);
  t.method = spec.method;
  t.tuner = spec.tuner;
  t.failures = failures;
  for (const auto& o : outcomes) t.chosen_v0.push_back(o.v0);
  t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

std::map<std::string, double> SummaryTable::metrics() const {
  return {
      {"signal_zero_mean", signal.zero_mean},     {"noise_zero_mean", noise.zero_mean},
      {"signal_selected_mean", signal.selected_mean}, {"noise_selected_mean", noise.selected_mean},
      {"signal_min", signal.min_pct},             {"signal_median", signal.median_pct},
      {"signal_max", signal.max_pct},             {"noise_min", noise.min_pct},
      {"noise_median", noise.median_pct},         {"noise_max", noise.max_pct},
  };
}

nlohmann::json SummaryTable::to_json() const {
  nlohmann::json j;
  j["design"] = design;
  j["method"] = to_string(method);
  j["tuner"] = to_string(tuner);
  j["replicates"] = replicates;
  j["failures"] = failures;
  j["selection_counts"] = selection_counts;
  nlohmann::json v0s = nlohmann::json::array();
  for (double v : chosen_v0) v0s.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  j["chosen_v0"] = v0s;
  j["metrics"] = metrics();
  return j;
}

std::string SummaryTable::to_csv() const {
  std::ostringstream out;
  out << "class,size,selected_mean,zero_mean,min_pct,median_pct,max_pct\n";
  for (const auto& [name, cs] : {std::pair{"signal", signal}, std::pair{"noise", noise}}) {
    out << fmt::format("{},{},{},{},{},{},{}\n", name, cs.size, cs.selected_mean, cs.zero_mean, cs.min_pct,
                       cs.median_pct, cs.max_pct);
  }
  return out.str();
}

std::string SummaryTable::to_text() const {
  std::string s = fmt::format("design={} method={} tuner={} replicates={} failures={}\n", design,
                              to_string(method), to_string(tuner), replicates, failures);
  s += fmt::format("{:<8} {:>5} {:>9} {:>9} {:>7} {:>7} {:>7}\n", "class", "size", "selected", "zeros", "min%",
                   "median%", "max%");
  for (const auto& [name, cs] : {std::pair{"signal", signal}, std::pair{"noise", noise}}) {
    s += fmt::format("{:<8} {:>5} {:>9.2f} {:>9.2f} {:>7.1f} {:>7.1f} {:>7.1f}\n", name, cs.size, cs.selected_mean,
                     cs.zero_mean, cs.min_pct, cs.median_pct, cs.max_pct);
  }
  return s;
}

const std::vector<ReferenceRow>& reference_rows() {
  static const std::vector<ReferenceRow> rows = [] {
    std::vector<ReferenceRow> out;
    const auto doc = nlohmann::json::parse(kReferenceTablesJson);
    for (const auto& r : doc.at("rows")) {
      ReferenceRow row;
      row.name = r.at("name").get<std::string>();
      row.citation = r.value("citation", "");
      row.display_only = r.value("display_only", false);
      for (const auto& [k, v] : r.at("metrics").items()) row.metrics[k] = v.get<double>();
      out.push_back(std::move(row));
    }
    return out;
  }();
  return rows;
}

const ReferenceRow& reference_row(const std::string& name) {
  for (const auto& row : reference_rows()) {
    if (row.name == name) return row;
  }
  throw InputError("unknown reference row '" + name + "'");
}

ComparisonReport compare_to_reference(const SummaryTable& table, const std::string& reference, double tolerance,
                                      const std::map<std::string, double>& per_metric) {
  const ReferenceRow& row = reference_row(reference);
  const auto observed = table.metrics();
  ComparisonReport report;
  report.reference = reference;
  report.pass = true;
  for (const auto& [metric, ref] : row.metrics) {
    CellComparison cell;
    cell.metric = metric;
    cell.reference = ref;
    cell.observed = observed.at(metric);
    cell.deviation = cell.observed - ref;
    const auto it = per_metric.find(metric);
    cell.tolerance = it != per_metric.end() ? it->second : tolerance;
    cell.pass = std::abs(cell.deviation) <= cell.tolerance;
    report.pass = report.pass && cell.pass;
    report.cells.push_back(cell);
  }
  return report;
}

std::string ComparisonReport::to_text() const {
  std::string s = fmt::format("reference '{}': {}\n", reference, pass ? "PASS" : "FAIL");
  for (const auto& c : cells) {
    s += fmt::format("  {:<22} ref={:>8.3f} obs={:>8.3f} dev={:>+8.3f} tol={:.3f} {}\n", c.metric, c.reference,
                     c.observed, c.deviation, c.tolerance, c.pass ? "ok" : "FAIL");
  }
  return s;
}

}  // namespace bvsem
