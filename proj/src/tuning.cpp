#include "bvsem/tuning.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bvsem/common.hpp"

namespace bvsem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("bad number '" + s + "' in grid");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

HyperParams at_v0(HyperParams hp, double v0) {
  hp.v0 = v0;
  return hp;
}

// Index of the smallest finite score; the first one wins ties.
std::size_t argmin_first(const std::vector<double>& scores) {
  std::size_t best = scores.size();
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (!std::isfinite(scores[g])) continue;
    if (best == scores.size() || scores[g] < scores[best]) best = g;
  }
  return best;
}

}  // namespace

std::string to_string(Engine e) { return e == Engine::em ? "em" : "bbem"; }

Engine engine_from_string(const std::string& s) {
  if (s == "em") return Engine::em;
  if (s == "bbem") return Engine::bbem;
  throw InputError("unknown engine '" + s + "' (expected em|bbem)");
}

void V0Grid::validate(double v1) const {
  if (values.empty()) throw InputError("v0 grid is empty");
  for (std::size_t g = 0; g < values.size(); ++g) {
    if (!(values[g] > 0.0)) throw InputError("v0 grid values must be positive");
    if (!(values[g] < v1)) throw InputError("v0 grid values must be < v1");
    if (g > 0 && !(values[g] > values[g - 1])) throw InputError("v0 grid must be strictly increasing");
  }
}

V0Grid V0Grid::log10_range(double lo, double hi, int count) {
  if (count < 1) throw InputError("grid needs at least one point");
  V0Grid grid;
  grid.scale = GridScale::log10;
  for (int g = 0; g < count; ++g) {
    const double e = count == 1 ? lo : lo + (hi - lo) * g / (count - 1);
    grid.values.push_back(std::pow(10.0, e));
  }
  return grid;
}

V0Grid V0Grid::default_cv() {
  return V0Grid{{1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2}, GridScale::log10};
}

V0Grid V0Grid::parse(const std::string& text) {
  if (text.rfind("log10:", 0) == 0) {
    const auto parts = split(text.substr(6), ':');
    if (parts.size() != 3) throw InputError("grid spec must be log10:lo:hi:count");
    return log10_range(parse_double(parts[0]), parse_double(parts[1]),
                       static_cast<int>(parse_double(parts[2])));
  }
  V0Grid grid;
  grid.scale = GridScale::linear;
  for (const auto& part : split(text, ',')) {
    if (!part.empty()) grid.values.push_back(parse_double(part));
  }
  if (grid.values.empty()) throw InputError("v0 grid is empty");
  return grid;
}

Fit fit_engine(const Dataset& data, const HyperParams& hp, const EngineConfig& cfg) {
  Fit fit;
  if (cfg.engine == Engine::em) {
    EmResult r = run_em(data, hp, cfg.em);
    fit.phi.resize(data.p());
    for (Eigen::Index j = 0; j < data.p(); ++j) fit.phi[j] = r.gamma[static_cast<std::size_t>(j)];
    fit.selected = std::move(r.gamma);
    fit.coef = std::move(r.m);
    fit.converged = r.converged;
  } else {
    EnsembleResult r = run_bbem(data, hp, cfg.em, cfg.boot);
    fit.selected = threshold_phi(r.phi, cfg.threshold);
    fit.phi = std::move(r.phi);
    fit.coef = std::move(r.m_bar);
    fit.failures = r.failures;
    fit.converged = std::all_of(r.replicates.begin(), r.replicates.end(),
                                [](const ReplicateRecord& rec) { return rec.converged; });
  }
  return fit;
}

PathResult selection_path(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid,
                          const EngineConfig& cfg) {
  grid.validate(hp_template.v1);
  PathResult path;
  path.grid = grid;
  path.engine = cfg.engine;
  path.names = data.column_names;
  path.phi_matrix.resize(data.p(), static_cast<Eigen::Index>(grid.values.size()));
  for (std::size_t g = 0; g < grid.values.size(); ++g) {
    try {
      path.phi_matrix.col(static_cast<Eigen::Index>(g)) = fit_engine(data, at_v0(hp_template, grid.values[g]), cfg).phi;
    } catch (const NumericalError& e) {
      throw NumericalError("v0=" + shortest(grid.values[g]) + ": " + e.what());
    }
  }
  return path;
}

std::string path_csv(const PathResult& path) {
  std::ostringstream out;
  out << "variable";
  for (double v : path.grid.values) out << ',' << shortest(v);
  out << '\n';
  for (Eigen::Index j = 0; j < path.phi_matrix.rows(); ++j) {
    out << (path.names.empty() ? "x" + std::to_string(j + 1) : path.names[static_cast<std::size_t>(j)]);
    for (Eigen::Index g = 0; g < path.phi_matrix.cols(); ++g) out << ',' << shortest(path.phi_matrix(j, g));
    out << '\n';
  }
  return out.str();
}

double bic_score(const Dataset& data, const Indicator& gamma) {
  data.validate();
  if (static_cast<Eigen::Index>(gamma.size()) != data.p()) throw InputError("gamma length does not match p");
  const Eigen::Index n = data.n();
  const int k = count_selected(gamma);
  if (k >= n) throw InputError("selected model has |gamma| >= n");

  const Eigen::VectorXd y = data.y.array() - data.y.mean();
  double rss = y.squaredNorm();
  if (k > 0) {
    Eigen::MatrixXd Xs(n, k);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < data.p(); ++j) {
      if (gamma[static_cast<std::size_t>(j)]) Xs.col(c++) = data.X.col(j).array() - data.X.col(j).mean();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    if (qr.rank() < k) throw InputError("selected columns are rank-deficient");
    const Eigen::VectorXd beta = qr.solve(y);
    rss = (y - Xs * beta).squaredNorm();
  }
  rss = std::max(rss, kRssFloor);
  const double nn = static_cast<double>(n);
  return nn * std::log(rss / nn) + k * std::log(nn);
}

TuneResult tune_bic(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid,
                    const EngineConfig& cfg) {
  grid.validate(hp_template.v1);
  TuneResult out;
  out.scores.assign(grid.values.size(), kInf);
  out.fits.resize(grid.values.size());
  for (std::size_t g = 0; g < grid.values.size(); ++g) {
    try {
      out.fits[g] = fit_engine(data, at_v0(hp_template, grid.values[g]), cfg);
      out.scores[g] = bic_score(data, out.fits[g].selected);
    } catch (const std::exception&) {
      out.scores[g] = kInf;
    }
  }
  out.best_index = argmin_first(out.scores);
  if (out.best_index == out.scores.size()) throw NumericalError("BIC tuning failed at every grid value");
  out.best_v0 = grid.values[out.best_index];
  return out;
}

int cv_replicates(int K) { return std::max(K / 2, std::min(K, 20)); }

std::vector<int> assign_folds(Eigen::Index n, int folds, std::uint64_t seed) {
  if (folds < 2) throw InputError("need at least two folds");
  if (n < folds) throw InputError("need at least as many rows as folds");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = make_rng(seed, Stream::cv_folds);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> label(static_cast<std::size_t>(n));
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    label[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = static_cast<int>(pos * folds / n);
  }
  return label;
}

TuneResult tune_cv(const Dataset& data, const HyperParams& hp_template, const V0Grid& grid, int folds,
                   const EngineConfig& cfg, std::uint64_t seed) {
  grid.validate(hp_template.v1);
  const auto [raw_x, raw_y] = unstandardize(data);
  const Eigen::Index n = data.n();
  const std::vector<int> label = assign_folds(n, folds, seed);

  EngineConfig inner = cfg;
  inner.boot.K = cv_replicates(cfg.boot.K);

  // Per-fold training sets are the same for every grid value.
  struct FoldData {
    Dataset train;
    Eigen::MatrixXd test_x;
    Eigen::VectorXd test_y;
  };
  std::vector<FoldData> fold_data(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_rows, test_rows;
    for (Eigen::Index i = 0; i < n; ++i) (label[static_cast<std::size_t>(i)] == f ? test_rows : train_rows).push_back(i);
    Dataset raw;
    raw.X = raw_x;
    raw.y = raw_y;
    raw.column_names = data.column_names;
    FoldData& fd = fold_data[static_cast<std::size_t>(f)];
    fd.train = standardize(select_rows(raw, train_rows));
    const Dataset test = select_rows(raw, test_rows);
    fd.test_x = apply_standardization(test.X, *fd.train.standardization);
    fd.test_y = test.y;
  }

  TuneResult out;
  out.scores.assign(grid.values.size(), kInf);
  for (std::size_t g = 0; g < grid.values.size(); ++g) {
    const HyperParams hp = at_v0(hp_template, grid.values[g]);
    double sse = 0.0;
    try {
      for (const FoldData& fd : fold_data) {
        const Fit fit = fit_engine(fd.train, hp, inner);
        const Eigen::VectorXd pred = predict(fd.test_x, fit.coef, fit.phi, fd.train.standardization);
        sse += (fd.test_y - pred).squaredNorm();
      }
      out.scores[g] = std::sqrt(sse / static_cast<double>(n));
    } catch (const NumericalError&) {
      out.scores[g] = kInf;
    }
  }
  out.best_index = argmin_first(out.scores);
  if (out.best_index == out.scores.size()) throw NumericalError("CV tuning failed at every grid value");
  out.best_v0 = grid.values[out.best_index];
  return out;
}

}  // namespace bvsem
