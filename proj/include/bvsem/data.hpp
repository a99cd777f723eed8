#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace bvsem {

/// Binary model indicator; entry j is 1 when variable j is in the model.
using Indicator = std::vector<std::uint8_t>;

/// Column transforms applied by standardize(); x_std = (x - x_mean) / x_scale,
/// y_std = y - y_mean.
struct Standardization {
  Eigen::VectorXd x_mean;
  Eigen::VectorXd x_scale;
  double y_mean = 0.0;
};

struct Dataset {
  Eigen::MatrixXd X;  // n x p
  Eigen::VectorXd y;  // n
  std::vector<std::string> column_names;
  std::optional<Standardization> standardization;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  /// Throws InputError on shape mismatch or non-finite entries.
  void validate() const;
};

/// Centers and scales every column of X to mean 0 / sample sd 1 and centers
/// y. Throws InputError if a column is constant.
Dataset standardize(Dataset raw);

/// Applies the transforms recorded in `st` to rows measured on the raw scale.
Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& raw_x, const Standardization& st);

/// Inverts standardize(): returns the raw-scale design and response.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> unstandardize(const Dataset& d);

Dataset select_columns(const Dataset& d, std::span<const Eigen::Index> cols);
Dataset select_rows(const Dataset& d, std::span<const Eigen::Index> rows);

/// Response selector for load_csv: a header name or a 0-based column index.
using ResponseColumn = std::variant<std::string, std::size_t>;

Dataset load_csv(const std::filesystem::path& path, const ResponseColumn& response,
                 bool standardize_data);

/// Writes features followed by the response as a header-ed CSV on the
/// dataset's current scale.
void write_csv(const std::filesystem::path& path, const Dataset& d,
               const std::string& response_name = "y");

enum class DesignKind { tibshirani, correlated, large_p };

std::string to_string(DesignKind k);
DesignKind design_kind_from_string(const std::string& s);

struct SimDesign {
  DesignKind kind = DesignKind::tibshirani;
  Eigen::Index n = 40;
  Eigen::Index p = 8;
  double sigma = 3.0;  // noise standard deviation
  std::uint64_t seed = 0;

  /// Default design for `kind`, with p and sigma forced or defaulted the way
  /// each simulation study defines them.
  static SimDesign make(DesignKind kind, Eigen::Index n, std::uint64_t seed,
                        std::optional<double> sigma = std::nullopt,
                        std::optional<Eigen::Index> p = std::nullopt);
};

struct SimulatedData {
  Dataset data;           // raw scale, not standardized
  Eigen::VectorXd beta;   // true coefficients
  Indicator gamma;        // true support
};

/// p = 8, rows ~ N(0, S) with S_ij = 0.5^|i-j|, beta = (3, 1.5, 0, 0, 2, 0, 0, 0).
SimulatedData gen_tibshirani(Eigen::Index n, double sigma, std::uint64_t seed);

/// p = 40, sigma = 6; signal groups {x1,x2,x3} and {x4,x5,x6} with
/// within-group correlation 0.9, everything else independent.
SimulatedData gen_correlated(Eigen::Index n, std::uint64_t seed, double sigma = 6.0);

/// AR(1) columns with rho = 0.6, beta = (1, 2, 3, 0, ...), noise variance 3.
SimulatedData gen_large_p(Eigen::Index n, Eigen::Index p, std::uint64_t seed,
                          double noise_variance = 3.0);

SimulatedData simulate(const SimDesign& design);

/// JSON sidecar holding the true coefficients and support of a simulated set.
nlohmann::json truth_sidecar(const SimulatedData& sim, const SimDesign& design);

}  // namespace bvsem
