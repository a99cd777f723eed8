#include "bvsem/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bvsem/common.hpp"

namespace bvsem {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no, const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw InputError("non-numeric cell '" + cell + "' at line " + std::to_string(line_no) +
                     ", column '" + column + "'");
  }
  return value;
}

// One step of a stationary AR(1) chain with unit marginal variance.
inline double ar_step(double prev, double rho, double z) {
  return rho * prev + std::sqrt(1.0 - rho * rho) * z;
}

Indicator support_of(const Eigen::VectorXd& beta) {
  Indicator g(static_cast<std::size_t>(beta.size()));
  for (Eigen::Index j = 0; j < beta.size(); ++j) g[j] = beta[j] != 0.0 ? 1 : 0;
  return g;
}

std::vector<std::string> default_names(Eigen::Index p) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

SimulatedData finish(Eigen::MatrixXd X, const Eigen::VectorXd& beta, Rng& rng, double noise_sd) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd y = X * beta;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += noise_sd * normal(rng);
  SimulatedData sim;
  sim.data.column_names = default_names(X.cols());
  sim.data.X = std::move(X);
  sim.data.y = std::move(y);
  sim.beta = beta;
  sim.gamma = support_of(beta);
  return sim;
}

void require_rows(Eigen::Index n) {
  if (n < 2) throw InputError("simulated designs need n >= 2");
}

}  // namespace

void Dataset::validate() const {
  if (X.rows() < 1 || X.cols() < 1) throw InputError("dataset must have n >= 1 and p >= 1");
  if (y.size() != X.rows()) throw InputError("response length does not match design rows");
  if (!X.allFinite()) throw InputError("design matrix has non-finite entries");
  if (!y.allFinite()) throw InputError("response has non-finite entries");
  if (!column_names.empty() && static_cast<Eigen::Index>(column_names.size()) != X.cols()) {
    throw InputError("column_names length does not match p");
  }
}

Dataset standardize(Dataset raw) {
  raw.validate();
  const Eigen::Index n = raw.n();
  if (n < 2) throw InputError("standardization needs at least two rows");
  Standardization st;
  st.x_mean = raw.X.colwise().mean().transpose();
  st.x_scale.resize(raw.p());
  for (Eigen::Index j = 0; j < raw.p(); ++j) {
    auto col = raw.X.col(j).array() - st.x_mean[j];
    const double sd = std::sqrt(col.square().sum() / static_cast<double>(n - 1));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(st.x_mean[j])))) {
      const std::string name = raw.column_names.empty() ? std::to_string(j) : raw.column_names[j];
      throw InputError("constant column '" + name + "' cannot be standardized");
    }
    st.x_scale[j] = sd;
    raw.X.col(j) = col / sd;
  }
  st.y_mean = raw.y.mean();
  raw.y.array() -= st.y_mean;
  raw.standardization = std::move(st);
  return raw;
}

Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& raw_x, const Standardization& st) {
  if (raw_x.cols() != st.x_mean.size()) throw InputError("column count does not match transforms");
  Eigen::MatrixXd out = raw_x;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = (out.col(j).array() - st.x_mean[j]) / st.x_scale[j];
  }
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> unstandardize(const Dataset& d) {
  if (!d.standardization) return {d.X, d.y};
  const auto& st = *d.standardization;
  Eigen::MatrixXd X = d.X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    X.col(j) = X.col(j).array() * st.x_scale[j] + st.x_mean[j];
  }
  Eigen::VectorXd y = d.y.array() + st.y_mean;
  return {std::move(X), std::move(y)};
}

Dataset select_columns(const Dataset& d, std::span<const Eigen::Index> cols) {
  Dataset out;
  out.X.resize(d.n(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= d.p()) throw InputError("column index out of range");
    out.X.col(static_cast<Eigen::Index>(k)) = d.X.col(cols[k]);
    if (!d.column_names.empty()) out.column_names.push_back(d.column_names[cols[k]]);
  }
  out.y = d.y;
  if (d.standardization) {
    Standardization st;
    st.x_mean.resize(out.p());
    st.x_scale.resize(out.p());
    for (std::size_t k = 0; k < cols.size(); ++k) {
      st.x_mean[static_cast<Eigen::Index>(k)] = d.standardization->x_mean[cols[k]];
      st.x_scale[static_cast<Eigen::Index>(k)] = d.standardization->x_scale[cols[k]];
    }
    st.y_mean = d.standardization->y_mean;
    out.standardization = std::move(st);
  }
  return out;
}

Dataset select_rows(const Dataset& d, std::span<const Eigen::Index> rows) {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), d.p());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= d.n()) throw InputError("row index out of range");
    out.X.row(static_cast<Eigen::Index>(k)) = d.X.row(rows[k]);
    out.y[static_cast<Eigen::Index>(k)] = d.y[rows[k]];
  }
  out.column_names = d.column_names;
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const ResponseColumn& response,
                 bool standardize_data) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw InputError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::vector<std::string> header = split_row(line);

  std::size_t response_idx = header.size();
  if (const auto* name = std::get_if<std::string>(&response)) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == *name) response_idx = c;
    }
    if (response_idx == header.size()) throw InputError("response column '" + *name + "' absent");
  } else {
    response_idx = std::get<std::size_t>(response);
    if (response_idx >= header.size()) {
      throw InputError("response column index " + std::to_string(response_idx) + " absent");
    }
  }
  if (header.size() < 2) throw InputError("need at least one feature column besides the response");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw InputError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) values[c] = parse_cell(cells[c], line_no, header[c]);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw InputError("'" + path.string() + "' has no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(header.size() - 1);
  Dataset d;
  d.X.resize(n, p);
  d.y.resize(n);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != response_idx) d.column_names.push_back(header[c]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index j = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == response_idx) {
        d.y[i] = rows[i][c];
      } else {
        d.X(i, j++) = rows[i][c];
      }
    }
  }
  d.validate();
  return standardize_data ? standardize(std::move(d)) : d;
}

void write_csv(const std::filesystem::path& path, const Dataset& d, const std::string& response_name) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  const auto names = d.column_names.empty() ? default_names(d.p()) : d.column_names;
  for (const auto& name : names) out << name << ',';
  out << response_name << '\n';
  char buf[32];
  auto put = [&](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, res.ptr - buf);
  };
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      put(d.X(i, j));
      out << ',';
    }
    put(d.y[i]);
    out << '\n';
  }
}

std::string to_string(DesignKind k) {
  switch (k) {
    case DesignKind::tibshirani: return "tibshirani";
    case DesignKind::correlated: return "correlated";
    case DesignKind::large_p: return "large_p";
  }
  return "unknown";
}

DesignKind design_kind_from_string(const std::string& s) {
  if (s == "tibshirani") return DesignKind::tibshirani;
  if (s == "correlated") return DesignKind::correlated;
  if (s == "large_p") return DesignKind::large_p;
  throw InputError("unknown design '" + s + "' (expected tibshirani|correlated|large_p)");
}

SimDesign SimDesign::make(DesignKind kind, Eigen::Index n, std::uint64_t seed,
                          std::optional<double> sigma, std::optional<Eigen::Index> p) {
  SimDesign d;
  d.kind = kind;
  d.n = n;
  d.seed = seed;
  switch (kind) {
    case DesignKind::tibshirani:
      d.p = 8;
      d.sigma = sigma.value_or(3.0);
      break;
    case DesignKind::correlated:
      d.p = 40;
      d.sigma = sigma.value_or(6.0);
      break;
    case DesignKind::large_p:
      d.p = p.value_or(1000);
      d.sigma = sigma.value_or(std::sqrt(3.0));
      break;
  }
  return d;
}

SimulatedData gen_tibshirani(Eigen::Index n, double sigma, std::uint64_t seed) {
  require_rows(n);
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  constexpr Eigen::Index p = 8;
  Rng rng = make_rng(seed, Stream::simulate);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = normal(rng);
    for (Eigen::Index j = 1; j < p; ++j) X(i, j) = ar_step(X(i, j - 1), 0.5, normal(rng));
  }
  Eigen::VectorXd beta(p);
  beta << 3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0;
  return finish(std::move(X), beta, rng, sigma);
}

SimulatedData gen_correlated(Eigen::Index n, std::uint64_t seed, double sigma) {
  require_rows(n);
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  constexpr Eigen::Index p = 40;
  constexpr double within = 0.9;
  Rng rng = make_rng(seed, Stream::simulate);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double shared = std::sqrt(within);
  const double own = std::sqrt(1.0 - within);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index group = 0; group < 2; ++group) {
      const double common = normal(rng);
      for (Eigen::Index k = 0; k < 3; ++k) X(i, 3 * group + k) = shared * common + own * normal(rng);
    }
    for (Eigen::Index j = 6; j < p; ++j) X(i, j) = normal(rng);
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta.head(6) << 3.0, 3.0, -2.0, 3.0, 3.0, -2.0;
  return finish(std::move(X), beta, rng, sigma);
}

SimulatedData gen_large_p(Eigen::Index n, Eigen::Index p, std::uint64_t seed, double noise_variance) {
  require_rows(n);
  if (p < 3) throw InputError("large_p design needs p >= 3");
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be positive");
  Rng rng = make_rng(seed, Stream::simulate);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = normal(rng);
    for (Eigen::Index j = 1; j < p; ++j) X(i, j) = ar_step(X(i, j - 1), 0.6, normal(rng));
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  beta.head(3) << 1.0, 2.0, 3.0;
  return finish(std::move(X), beta, rng, std::sqrt(noise_variance));
}

SimulatedData simulate(const SimDesign& design) {
  switch (design.kind) {
    case DesignKind::tibshirani:
      return gen_tibshirani(design.n, design.sigma, design.seed);
    case DesignKind::correlated:
      return gen_correlated(design.n, design.seed, design.sigma);
    case DesignKind::large_p:
      return gen_large_p(design.n, design.p, design.seed, design.sigma * design.sigma);
  }
  throw InputError("unknown design kind");
}

nlohmann::json truth_sidecar(const SimulatedData& sim, const SimDesign& design) {
  nlohmann::json j;
  j["design"] = to_string(design.kind);
  j["n"] = design.n;
  j["p"] = design.p;
  j["sigma"] = design.sigma;
  j["seed"] = design.seed;
  j["beta"] = std::vector<double>(sim.beta.data(), sim.beta.data() + sim.beta.size());
  j["gamma"] = std::vector<int>(sim.gamma.begin(), sim.gamma.end());
  return j;
}

}  // namespace bvsem
