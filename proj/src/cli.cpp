#include "bvsem/cli.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "bvsem/bbem.hpp"
#include "bvsem/common.hpp"
#include "bvsem/data.hpp"
#include "bvsem/em.hpp"
#include "bvsem/experiments.hpp"
#include "bvsem/kernels.hpp"
#include "bvsem/posterior.hpp"
#include "bvsem/tuning.hpp"

namespace bvsem {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Option recording. Every option is bound to a variable; after parsing, the
// resolved values are written to the manifest as "--name=value" tokens so a
// replay parses back to the same state. Doubles use the shortest round-trip
// form.

std::string repr(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string repr(bool v) { return v ? "true" : "false"; }
std::string repr(const std::string& v) { return v; }
template <class T>
  requires std::is_integral_v<T>
std::string repr(T v) {
  return std::to_string(v);
}

class Recorder {
 public:
  explicit Recorder(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    CLI::Option* o = app_->add_option("--" + name, var, help);
    if constexpr (!is_optional<T>::value) o->capture_default_str();
    entries_.push_back({name, [&var]() -> std::optional<std::string> {
                          if constexpr (is_optional<T>::value) {
                            if (!var) return std::nullopt;
                            return repr(*var);
                          } else {
                            return repr(var);
                          }
                        }});
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help, const std::string& negation = "") {
    CLI::Option* o = app_->add_flag("--" + name + (negation.empty() ? "" : ",!--" + negation), var, help);
    entries_.push_back({name, [&var]() -> std::optional<std::string> { return repr(var); }});
    return o;
  }

  std::vector<std::string> tokens(const std::vector<std::string>& exclude) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (std::find(exclude.begin(), exclude.end(), e.name) != exclude.end()) continue;
      // an empty string is the unset state and would not parse back as "--x="
      if (auto v = e.value(); v && !v->empty()) out.push_back("--" + e.name + "=" + *v);
    }
    return out;
  }

 private:
  template <class T>
  struct is_optional : std::false_type {};
  template <class T>
  struct is_optional<std::optional<T>> : std::true_type {};

  struct Entry {
    std::string name;
    std::function<std::optional<std::string>()> value;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Shared option values. Only one subcommand runs per call, so a single
// struct backs all of them.

struct Options {
  // data
  std::string input;
  std::string response = "y";
  bool standardize = true;
  // prior
  std::optional<double> v0;
  double v1 = 100.0;
  double a0 = 1.1;
  double b0 = 1.1;
  double nu = 1.0;
  double lambda = 1.0;
  // em
  std::optional<double> theta0;
  double sigma0 = 1.0;
  std::string gamma_init = "zeros";
  int k0 = 3;
  int max_iter = 100;
  // ensemble
  int K = 100;
  int L = 0;
  std::string weight_scale = "sum_to_n";
  // tuning
  std::string grid;
  int folds = 5;
  std::string engine = "em";
  double threshold = 0.5;
  std::string criterion;
  // run
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out = "out";
  // simulate
  std::string design = "tibshirani";
  std::string method = "em";
  std::string tuner = "cv";
  int reps = 100;
  std::optional<long> n;
  std::optional<long> p;
  std::optional<double> sigma;
  std::string reference;
  double tolerance = 0.5;
  bool dataset_only = false;
  // bench
  int trials = 100;
  int max_flips = 5;
  // replay
  std::string manifest;
};

void add_data(Recorder& r, Options& o) {
  r.add("input", o.input, "CSV file with a header row");
  r.add("response", o.response, "response column name or 0-based index");
  r.flag("standardize", o.standardize, "center/scale X and center y (default on)", "no-standardize");
}

void add_prior(Recorder& r, Options& o) {
  r.add("v0", o.v0, "spike variance (default 0.01)");
  r.add("v1", o.v1, "slab variance");
  r.add("a0", o.a0, "Beta prior shape a0");
  r.add("b0", o.b0, "Beta prior shape b0");
  r.add("nu", o.nu, "inverse-gamma prior nu");
  r.add("lambda", o.lambda, "inverse-gamma prior lambda");
}

void add_em(Recorder& r, Options& o) {
  r.add("theta0", o.theta0, "initial theta (default 0.5, or sqrt(n)/p when p > n)");
  r.add("sigma0", o.sigma0, "initial sigma^2");
  r.add("gamma-init", o.gamma_init, "ones, zeros, or a 0/1 string of length p");
  r.add("k0", o.k0, "stop after k0 identical gamma vectors");
  r.add("max-iter", o.max_iter, "iteration cap");
}

void add_ensemble(Recorder& r, Options& o) {
  r.add("K", o.K, "bootstrap replicates");
  r.add("L", o.L, "variables per replicate (0: min(p, ceil(n/2)))");
  r.add("weight-scale", o.weight_scale, "sum_to_n or sum_to_1")->check(CLI::IsMember({"sum_to_n", "sum_to_1"}));
}

void add_run(Recorder& r, Options& o) {
  r.add("seed", o.seed, "master seed");
  r.add("jobs", o.jobs, "worker threads");
  r.add("out", o.out, "output directory");
}

// ---------------------------------------------------------------------------
// Resolution helpers.

HyperParams hyper_params(const Options& o) {
  HyperParams hp;
  hp.v0 = o.v0.value_or(hp.v0);
  hp.v1 = o.v1;
  hp.a0 = o.a0;
  hp.b0 = o.b0;
  hp.nu = o.nu;
  hp.lambda = o.lambda;
  return hp;
}

EmConfig em_config(const Options& o, Eigen::Index n, Eigen::Index p) {
  EmConfig cfg;
  cfg.max_iter = o.max_iter;
  cfg.k0 = o.k0;
  cfg.theta_init = o.theta0.value_or(default_theta_init(n, p));
  cfg.sigma2_init = o.sigma0;
  cfg.seed = o.seed;
  if (o.gamma_init == "ones") {
    cfg.gamma_init = GammaInit::all_ones;
  } else if (o.gamma_init == "zeros") {
    cfg.gamma_init = GammaInit::all_zeros;
  } else {
    cfg.gamma_init = GammaInit::explicit_vector;
    for (char c : o.gamma_init) {
      if (c == '0' || c == '1') {
        cfg.gamma_explicit.push_back(static_cast<std::uint8_t>(c - '0'));
      } else if (c != ',') {
        throw InputError("--gamma-init must be ones, zeros, or a 0/1 string");
      }
    }
  }
  return cfg;
}

BootstrapConfig boot_config(const Options& o) {
  BootstrapConfig cfg;
  cfg.K = o.K;
  cfg.L = o.L;
  cfg.seed = o.seed;
  cfg.weight_scale = weight_scale_from_string(o.weight_scale);
  cfg.jobs = o.jobs;
  return cfg;
}

json hp_json(const HyperParams& hp) {
  return {{"v0", hp.v0}, {"v1", hp.v1}, {"a0", hp.a0}, {"b0", hp.b0}, {"nu", hp.nu}, {"lambda", hp.lambda}};
}

json em_json(const EmConfig& c) {
  json j = {{"max_iter", c.max_iter}, {"k0", c.k0}, {"theta_init", c.theta_init}, {"sigma2_init", c.sigma2_init}};
  switch (c.gamma_init) {
    case GammaInit::all_ones: j["gamma_init"] = "ones"; break;
    case GammaInit::all_zeros: j["gamma_init"] = "zeros"; break;
    case GammaInit::explicit_vector: j["gamma_init"] = c.gamma_explicit; break;
  }
  return j;
}

json boot_json(const BootstrapConfig& c, Eigen::Index n, Eigen::Index p) {
  return {{"K", c.K}, {"L", c.resolved_L(n, p)}, {"seed", c.seed}, {"weight_scale", to_string(c.weight_scale)}};
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::optional<std::string> sha256_file(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

Dataset load_input(const Options& o) {
  if (o.input.empty()) throw InputError("--input is required");
  ResponseColumn response = o.response;
  if (!o.response.empty() && std::all_of(o.response.begin(), o.response.end(), ::isdigit)) {
    response = static_cast<std::size_t>(std::stoul(o.response));
  }
  return load_csv(o.input, response, o.standardize);
}

/// Coefficients mapped back to the raw scale: beta_raw = coef / scale and an
/// intercept restoring the means.
json raw_coefficients(const Dataset& data, const Eigen::VectorXd& coef) {
  if (!data.standardization) return {{"intercept", 0.0}, {"coef", vec(coef)}};
  const Standardization& st = *data.standardization;
  const Eigen::VectorXd raw = coef.cwiseQuotient(st.x_scale);
  return {{"intercept", st.y_mean - st.x_mean.dot(raw)}, {"coef", vec(raw)}};
}

// Context shared by handlers: the parsed options, the recorded argv, and
// where to write.
struct Run {
  std::string command;
  Options& opt;
  std::vector<std::string> prefix;  // positionals, first in argv
  const Recorder& rec;
  std::ostream& out;

  fs::path dir() const { return fs::path(opt.out); }

  void write_manifest(const json& resolved) const {
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    std::vector<std::string> args = prefix;
    for (auto& t : rec.tokens({"out"})) args.push_back(std::move(t));
    m["args"] = args;
    m["resolved"] = resolved;
    const auto digest = sha256_file(opt.input);
    m["input"] = opt.input.empty() ? json(nullptr) : json(opt.input);
    m["input_sha256"] = digest ? json(*digest) : json(nullptr);
    write_json(dir() / "manifest.json", m);
  }
};

// ---------------------------------------------------------------------------
// Subcommand handlers.

void cmd_fit(const Run& run) {
  const Options& o = run.opt;
  const HyperParams hp = hyper_params(o);
  hp.validate();
  const Dataset data = load_input(o);
  const EmConfig cfg = em_config(o, data.n(), data.p());
  cfg.validate(data.p());
  const EmResult r = run_em(data, hp, cfg);

  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iter", t.iter},
                     {"flips", t.flips},
                     {"sigma2", t.sigma2},
                     {"theta", t.theta},
                     {"log_posterior", t.log_posterior}});
  }
  json res = {{"command", "fit"},
              {"columns", data.column_names},
              {"gamma", r.gamma},
              {"m", vec(r.m)},
              {"raw", raw_coefficients(data, r.m)},
              {"converged", r.converged},
              {"iterations", r.state.iter},
              {"sigma2", r.state.sigma2},
              {"theta", r.state.theta},
              {"trace", trace}};
  fs::create_directories(run.dir());
  write_json(run.dir() / "result.json", res);
  run.write_manifest({{"hyper", hp_json(hp)}, {"em", em_json(cfg)}, {"n", data.n()}, {"p", data.p()}});
  run.out << fmt::format("fit: {} of {} variables selected, {} after {} iterations\n", count_selected(r.gamma),
                         data.p(), r.converged ? "converged" : "not converged", r.state.iter);
}

void cmd_ensemble(const Run& run) {
  const Options& o = run.opt;
  const HyperParams hp = hyper_params(o);
  hp.validate();
  const Dataset data = load_input(o);
  const EmConfig cfg = em_config(o, data.n(), data.p());
  cfg.validate(data.p());
  const BootstrapConfig boot = boot_config(o);
  boot.validate(data.p());
  const EnsembleResult r = run_bbem(data, hp, cfg, boot);
  const Indicator selected = threshold_phi(r.phi, o.threshold);

  json res = {{"command", "ensemble"},
              {"columns", data.column_names},
              {"phi", vec(r.phi)},
              {"m_bar", vec(r.m_bar)},
              {"selected", selected},
              {"threshold", o.threshold},
              {"raw", raw_coefficients(data, r.m_bar.cwiseProduct(r.phi))},
              {"failures", r.failures}};
  fs::create_directories(run.dir());
  write_json(run.dir() / "result.json", res);
  run.write_manifest({{"hyper", hp_json(hp)},
                      {"em", em_json(cfg)},
                      {"bootstrap", boot_json(boot, data.n(), data.p())},
                      {"threshold", o.threshold}});
  run.out << fmt::format("ensemble: {} of {} variables with phi >= {}, {} of {} replicates failed\n",
                         count_selected(selected), data.p(), o.threshold, r.failures, boot.K);
}

EngineConfig engine_config(const Options& o, const Dataset& data) {
  EngineConfig cfg;
  cfg.engine = engine_from_string(o.engine);
  cfg.em = em_config(o, data.n(), data.p());
  cfg.em.validate(data.p());
  cfg.boot = boot_config(o);
  cfg.boot.validate(data.p());
  cfg.threshold = o.threshold;
  return cfg;
}

json engine_json(const EngineConfig& cfg, const Dataset& data) {
  json j = {{"engine", to_string(cfg.engine)}, {"em", em_json(cfg.em)}, {"threshold", cfg.threshold}};
  if (cfg.engine == Engine::bbem) j["bootstrap"] = boot_json(cfg.boot, data.n(), data.p());
  return j;
}

void cmd_path(const Run& run) {
  const Options& o = run.opt;
  const HyperParams hp = hyper_params(o);
  hp.validate();
  const V0Grid grid = V0Grid::parse(o.grid.empty() ? "log10:-4:0:17" : o.grid);
  grid.validate(hp.v1);
  const Dataset data = load_input(o);
  const EngineConfig cfg = engine_config(o, data);
  const PathResult path = selection_path(data, hp, grid, cfg);

  fs::create_directories(run.dir());
  write_text(run.dir() / "path.csv", path_csv(path));
  json phi = json::array();
  for (Eigen::Index g = 0; g < path.phi_matrix.cols(); ++g) phi.push_back(vec(path.phi_matrix.col(g)));
  write_json(run.dir() / "result.json",
             {{"command", "path"}, {"columns", data.column_names}, {"grid", grid.values}, {"phi", phi}});
  run.write_manifest({{"hyper", hp_json(hp)}, {"grid", grid.values}, {"engine", engine_json(cfg, data)}});
  run.out << fmt::format("path: {} variables over {} v0 values written to {}\n", data.p(), grid.values.size(),
                         (run.dir() / "path.csv").string());
}

void cmd_tune(const Run& run) {
  const Options& o = run.opt;
  const HyperParams hp = hyper_params(o);
  hp.validate();
  const Dataset data = load_input(o);
  const EngineConfig cfg = engine_config(o, data);
  const bool bic = o.criterion == "bic";
  const V0Grid grid = o.grid.empty() ? (bic ? default_bic_grid() : V0Grid::default_cv()) : V0Grid::parse(o.grid);
  grid.validate(hp.v1);

  TuneResult t = bic ? tune_bic(data, hp, grid, cfg) : tune_cv(data, hp, grid, o.folds, cfg, o.seed);
  HyperParams best = hp;
  best.v0 = t.best_v0;
  const Fit fit = bic ? t.fits[t.best_index] : fit_engine(data, best, cfg);

  json scores = json::array();
  for (double s : t.scores) scores.push_back(std::isfinite(s) ? json(s) : json(nullptr));
  json res = {{"command", "tune"},
              {"criterion", o.criterion},
              {"columns", data.column_names},
              {"grid", grid.values},
              {"scores", scores},
              {"best_v0", t.best_v0},
              {"best_index", t.best_index},
              {"selected", fit.selected},
              {"phi", vec(fit.phi)},
              {"coef", vec(fit.coef)},
              {"failures", fit.failures}};
  fs::create_directories(run.dir());
  write_json(run.dir() / "result.json", res);
  json resolved = {{"hyper", hp_json(hp)}, {"grid", grid.values}, {"engine", engine_json(cfg, data)}};
  if (!bic) resolved["folds"] = o.folds;
  run.write_manifest(resolved);
  run.out << fmt::format("tune {}: best v0 = {} with {} of {} variables selected\n", o.criterion, repr(t.best_v0),
                         count_selected(fit.selected), data.p());
}

Eigen::Index default_n(DesignKind k) {
  switch (k) {
    case DesignKind::tibshirani: return 40;
    case DesignKind::correlated: return 50;
    case DesignKind::large_p: return 100;
  }
  return 40;
}

void cmd_simulate(const Run& run) {
  const Options& o = run.opt;
  const DesignKind kind = design_kind_from_string(o.design);
  const Eigen::Index n = o.n.value_or(default_n(kind));
  const SimDesign design = SimDesign::make(kind, n, o.seed, o.sigma, o.p ? std::optional<Eigen::Index>(*o.p)
                                                                          : std::nullopt);
  fs::create_directories(run.dir());

  if (o.dataset_only) {
    const SimulatedData sim = simulate(design);
    write_csv(run.dir() / "data.csv", sim.data);
    write_json(run.dir() / "truth.json", truth_sidecar(sim, design));
    run.write_manifest({{"design", to_string(kind)}, {"n", design.n}, {"p", design.p}, {"sigma", design.sigma}});
    run.out << fmt::format("simulate: wrote {} x {} {} dataset\n", design.n, design.p, to_string(kind));
    return;
  }

  ExperimentSpec spec;
  spec.design = design;
  spec.replicates = o.reps;
  spec.method = engine_from_string(o.method);
  spec.tuner = tuner_from_string(o.tuner);
  spec.v0 = o.v0;
  if (!o.grid.empty()) spec.grid = V0Grid::parse(o.grid);
  spec.folds = o.folds;
  spec.hp = hyper_params(o);
  spec.hp.validate();
  spec.engine.em = em_config(o, design.n, design.p);
  spec.engine.boot = boot_config(o);
  spec.engine.boot.jobs = 1;
  spec.engine.threshold = o.threshold;
  spec.auto_theta = !o.theta0.has_value();
  spec.seed = o.seed;
  spec.jobs = o.jobs;
  spec.validate();

  const SummaryTable table = run_experiment(spec);
  json res = table.to_json();
  std::string text = table.to_text();
  if (!o.reference.empty()) {
    const ComparisonReport report = compare_to_reference(table, o.reference, o.tolerance);
    json cells = json::array();
    for (const auto& c : report.cells) {
      cells.push_back({{"metric", c.metric},
                       {"reference", c.reference},
                       {"observed", c.observed},
                       {"deviation", c.deviation},
                       {"tolerance", c.tolerance},
                       {"pass", c.pass}});
    }
    res["comparison"] = {{"reference", report.reference}, {"pass", report.pass}, {"cells", cells}};
    text += report.to_text();
  }
  write_json(run.dir() / "result.json", res);
  write_text(run.dir() / "table.csv", table.to_csv());
  write_text(run.dir() / "table.txt", text);

  json resolved = {{"design", {{"kind", to_string(kind)}, {"n", design.n}, {"p", design.p}, {"sigma", design.sigma}}},
                   {"replicates", spec.replicates},
                   {"method", to_string(spec.method)},
                   {"tuner", to_string(spec.tuner)},
                   {"hyper", hp_json(spec.hp)},
                   {"em", em_json(spec.engine.em)},
                   {"auto_theta", spec.auto_theta}};
  if (spec.v0) resolved["v0"] = *spec.v0;
  if (spec.tuner != Tuner::fixed) {
    resolved["grid"] = spec.grid.value_or(spec.tuner == Tuner::bic ? default_bic_grid() : V0Grid::default_cv()).values;
  }
  if (spec.tuner == Tuner::cv) resolved["folds"] = spec.folds;
  if (spec.method == Engine::bbem) resolved["bootstrap"] = boot_json(spec.engine.boot, design.n, design.p);
  run.write_manifest(resolved);

  run.out << fmt::format(
      "simulate: {} {} {} x{}: signal selected {:.2f}/{}, noise selected {:.2f}/{}, {} failures ({:.1f} s)\n",
      to_string(kind), to_string(spec.method), to_string(spec.tuner), table.replicates,
      table.signal.selected_mean, table.signal.size, table.noise.selected_mean, table.noise.size, table.failures,
      table.wall_seconds);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

void cmd_bench(const Run& run) {
  const Options& o = run.opt;
  if (o.trials < 1) throw InputError("--trials must be positive");
  if (o.max_flips < 1) throw InputError("--max-flips must be positive");
  HyperParams hp = hyper_params(o);
  hp.validate();
  const Eigen::Index n = o.n.value_or(100);
  const Eigen::Index p = o.p.value_or(1000);
  if (o.max_flips > p) throw InputError("--max-flips exceeds p");

  const Dataset data = standardize(gen_large_p(n, p, o.seed).data);
  const Design design(data);
  Rng rng = make_rng(o.seed, Stream::bench);
  std::bernoulli_distribution coin(std::min(0.5, std::sqrt(static_cast<double>(n)) / static_cast<double>(p)));
  Indicator base_gamma(static_cast<std::size_t>(p));
  for (auto& g : base_gamma) g = coin(rng);
  const PrecisionDiag base_prec = PrecisionDiag::from_gamma(base_gamma, hp.v0, hp.v1);
  const PosteriorMoments base = build_posterior(design, base_prec);

  using clock = std::chrono::steady_clock;
  std::vector<double> t_rebuild, t_update;
  std::vector<int> flip_counts;
  double max_err = 0.0;
  std::vector<std::size_t> order(static_cast<std::size_t>(p));
  for (int t = -1; t < o.trials; ++t) {  // t = -1 is an untimed warm-up
    const int l = 1 + (t < 0 ? 0 : t % o.max_flips);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Indicator gamma = base_gamma;
    for (int k = 0; k < l; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), order.size() - 1);
      std::swap(order[static_cast<std::size_t>(k)], order[pick(rng)]);
      gamma[order[static_cast<std::size_t>(k)]] ^= 1;
    }
    const PrecisionDiag prec = PrecisionDiag::from_gamma(gamma, hp.v0, hp.v1);
    const std::vector<Flip> flips = diff_flips(base_prec, prec);

    const auto a = clock::now();
    const PosteriorMoments rebuilt = build_posterior(design, prec);
    const auto b = clock::now();
    PosteriorMoments copy = base;
    const auto c = clock::now();
    const PosteriorMoments updated = update_posterior(std::move(copy), flips, design);
    const auto d = clock::now();
    if (t < 0) continue;

    t_rebuild.push_back(std::chrono::duration<double, std::milli>(b - a).count());
    t_update.push_back(std::chrono::duration<double, std::milli>(d - c).count());
    flip_counts.push_back(l);
    max_err = std::max(max_err, (updated.V - rebuilt.V).norm() / rebuilt.V.norm());
  }

  fs::create_directories(run.dir());
  write_json(run.dir() / "result.json", {{"command", "bench"},
                                         {"n", n},
                                         {"p", p},
                                         {"trials", o.trials},
                                         {"flips", flip_counts},
                                         {"max_relative_frobenius_error", max_err}});
  run.write_manifest({{"hyper", hp_json(hp)}, {"n", n}, {"p", p}, {"trials", o.trials}, {"max_flips", o.max_flips}});
  const double mr = median(t_rebuild), mu = median(t_update);
  // Timings are printed only; artifacts stay deterministic.
  run.out << fmt::format(
      "bench: n={} p={} trials={} backend={} median rebuild {:.3f} ms, median incremental {:.3f} ms, speedup "
      "{:.2f}x, max rel error {:.3g}\n",
      n, p, o.trials, kernels::backend_name(kernels::active_backend()), mr, mu, mr / mu, max_err);
}

// ---------------------------------------------------------------------------

int dispatch_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth);

int run_replay(const Options& o, std::ostream& out, std::ostream& err, int depth) {
  if (depth > 0) throw InputError("replay cannot be nested");
  std::ifstream in(o.manifest);
  if (!in) throw InputError("cannot open manifest '" + o.manifest + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed manifest: " + std::string(e.what()));
  }
  if (!m.contains("command") || !m.contains("args")) throw InputError("manifest lacks command or args");
  if (m.value("version", "") != kVersion) {
    err << fmt::format("warning: manifest written by version {}, running {}\n", m.value("version", "?"), kVersion);
  }
  if (m.contains("input") && m["input"].is_string()) {
    const auto digest = sha256_file(m["input"].get<std::string>());
    if (!m["input_sha256"].is_string() || *digest != m["input_sha256"].get<std::string>()) {
      throw InputError("input file changed since the manifest was written");
    }
  }
  std::vector<std::string> argv{m["command"].get<std::string>()};
  for (const auto& a : m["args"]) argv.push_back(a.get<std::string>());
  argv.push_back("--out=" + o.out);
  return dispatch_impl(argv, out, err, depth + 1);
}

int dispatch_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth) {
  CLI::App app{"Bayesian variable selection by EM and bootstrap ensembles", "bvsem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  struct Sub {
    CLI::App* app;
    std::unique_ptr<Recorder> rec;
  };
  std::vector<Sub> subs;
  auto sub = [&](const std::string& name, const std::string& help) -> Recorder& {
    CLI::App* s = app.add_subcommand(name, help);
    subs.push_back({s, std::make_unique<Recorder>(s)});
    return *subs.back().rec;
  };

  {
    Recorder& r = sub("fit", "single EM run");
    add_data(r, o);
    add_prior(r, o);
    add_em(r, o);
    add_run(r, o);
  }
  {
    Recorder& r = sub("ensemble", "Bayesian bootstrap ensemble of EM runs");
    add_data(r, o);
    add_prior(r, o);
    add_em(r, o);
    add_ensemble(r, o);
    r.add("threshold", o.threshold, "phi cut for the selected model");
    add_run(r, o);
  }
  auto add_engine = [&](Recorder& r) {
    r.add("grid", o.grid, "v0 grid: comma list or log10:lo:hi:count");
    r.add("engine", o.engine, "em or bbem")->check(CLI::IsMember({"em", "bbem"}));
    r.add("threshold", o.threshold, "phi cut for bbem selections");
  };
  {
    Recorder& r = sub("path", "selection frequency over a v0 grid");
    add_data(r, o);
    add_prior(r, o);
    add_em(r, o);
    add_ensemble(r, o);
    add_engine(r);
    add_run(r, o);
  }
  {
    Recorder& r = sub("tune", "choose v0 by BIC or cross-validation");
    subs.back().app->add_option("criterion", o.criterion, "bic or cv")
        ->required()
        ->check(CLI::IsMember({"bic", "cv"}));
    add_data(r, o);
    add_prior(r, o);
    add_em(r, o);
    add_ensemble(r, o);
    add_engine(r);
    r.add("folds", o.folds, "cross-validation folds");
    add_run(r, o);
  }
  {
    Recorder& r = sub("simulate", "simulation study over replicated datasets");
    r.add("design", o.design, "tibshirani, correlated or large_p")
        ->check(CLI::IsMember({"tibshirani", "correlated", "large_p"}));
    r.add("n", o.n, "rows per dataset (default by design)");
    r.add("p", o.p, "columns (large_p only)");
    r.add("sigma", o.sigma, "noise sd (default by design)");
    r.add("method", o.method, "em or bbem")->check(CLI::IsMember({"em", "bbem"}));
    r.add("tuner", o.tuner, "fixed, bic or cv")->check(CLI::IsMember({"fixed", "bic", "cv"}));
    r.add("reps", o.reps, "replicated datasets");
    add_prior(r, o);
    add_em(r, o);
    add_ensemble(r, o);
    r.add("grid", o.grid, "v0 grid for the tuner");
    r.add("folds", o.folds, "cross-validation folds");
    r.add("threshold", o.threshold, "phi cut for bbem selections");
    r.add("reference", o.reference, "reference row to compare against");
    r.add("tolerance", o.tolerance, "absolute tolerance for the comparison");
    r.flag("dataset-only", o.dataset_only, "write one simulated dataset and its truth instead");
    add_run(r, o);
  }
  {
    Recorder& r = sub("bench", "time incremental posterior updates against full rebuilds");
    r.add("n", o.n, "rows (default 100)");
    r.add("p", o.p, "columns (default 1000)");
    r.add("trials", o.trials, "timed trials");
    r.add("max-flips", o.max_flips, "flips per trial cycle through 1..max-flips");
    add_prior(r, o);
    add_run(r, o);
  }
  CLI::App* replay = app.add_subcommand("replay", "rerun the command recorded in a manifest");
  replay->add_option("--manifest", o.manifest, "manifest.json to replay")->required();
  replay->add_option("--out", o.out, "output directory")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  if (replay->parsed()) return run_replay(o, out, err, depth);
  for (const auto& s : subs) {
    if (!s.app->parsed()) continue;
    std::vector<std::string> prefix;
    if (s.app->get_name() == "tune") prefix.push_back(o.criterion);
    const Run run{s.app->get_name(), o, prefix, *s.rec, out};
    const std::string& name = run.command;
    if (name == "fit") cmd_fit(run);
    else if (name == "ensemble") cmd_ensemble(run);
    else if (name == "path") cmd_path(run);
    else if (name == "tune") cmd_tune(run);
    else if (name == "simulate") cmd_simulate(run);
    else if (name == "bench") cmd_bench(run);
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch_impl(args, out, err, 0);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace bvsem
