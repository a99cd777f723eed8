#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "bvsem/data.hpp"

namespace bvsem {

/// Prior variance multipliers: d_j = v1 when gamma_j = 1, v0 otherwise.
/// (The prior precision is diag(1/d).)
struct PrecisionDiag {
  Eigen::VectorXd d;

  static PrecisionDiag from_gamma(const Indicator& gamma, double v0, double v1);
};

/// Observation-weighted design with the cross-products every E-step needs.
/// Rows are scaled by sqrt(w_i), so X~^T X~ = X^T W X and y~^T y~ = y^T W y.
class Design {
 public:
  explicit Design(const Dataset& data, std::optional<std::span<const double>> weights = std::nullopt);

  Eigen::Index n() const { return x_.rows(); }
  Eigen::Index p() const { return x_.cols(); }
  bool weighted() const { return weighted_; }

  const Eigen::MatrixXd& scaled_x() const { return x_; }
  const Eigen::VectorXd& scaled_y() const { return y_; }
  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::MatrixXd& gram() const { return gram_; }  // X^T W X
  const Eigen::VectorXd& xty() const { return xty_; }    // X^T W y
  double yty() const { return yty_; }                    // y^T W y

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd xty_;
  double yty_ = 0.0;
  bool weighted_ = false;
};

enum class Refresh {
  direct,       // fresh p x p factorization
  woodbury,     // fresh build through the n x n identity (p > n)
  incremental,  // rank-l update of the previous V
  budget,       // rebuild forced by the refresh budget
  singular,     // inner l x l system was singular; rebuilt from scratch
};

/// Gaussian posterior of beta given (gamma, weights): mean m and covariance
/// sigma^2 V with V = (X^T W X + D^-1)^-1. Neither depends on sigma^2.
struct PosteriorMoments {
  Eigen::VectorXd m;
  Eigen::MatrixXd V;
  PrecisionDiag prec;
  double log_det_v = 0.0;
  int flips_since_refactor = 0;
  int updates_since_refactor = 0;
  Refresh last_refresh = Refresh::direct;
};

/// Maximum incremental updates between full rebuilds.
inline constexpr int kMaxUpdatesBetweenRebuilds = 50;

/// Cumulative flipped-index budget before a rebuild: min(n, p) / 2, at least 1.
int flip_budget(Eigen::Index n, Eigen::Index p);

enum class Solver { automatic, direct, woodbury };

/// Forms m and V from scratch. `automatic` takes the n x n route when p > n.
/// Throws NumericalError if the system cannot be factored.
PosteriorMoments build_posterior(const Design& design, const PrecisionDiag& prec,
                                 Solver solver = Solver::automatic);

PosteriorMoments build_posterior(const Dataset& data, const PrecisionDiag& prec,
                                 std::optional<std::span<const double>> weights = std::nullopt);

/// One changed prior variance.
struct Flip {
  Eigen::Index index;
  double old_d;
  double new_d;
};

/// Entries whose d differs between two precision diagonals.
std::vector<Flip> diff_flips(const PrecisionDiag& from, const PrecisionDiag& to);

/// Rank-l refresh of V after the prior variances in `flips` change:
///   V_new = V - V U (Delta^-1 + U^T V U)^-1 U^T V,
/// Delta = diag(1/new_d - 1/old_d). Falls back to build_posterior when the
/// refresh budget is exhausted or the l x l system is singular (recorded in
/// last_refresh). Takes `prev` by value so callers can move into it.
PosteriorMoments update_posterior(PosteriorMoments prev, std::span<const Flip> flips,
                                  const Design& design);

/// sigma^2 tr(W X V X^T) + (y - X m)^T W (y - X m). The trace is accumulated
/// row by row without forming the n x n product.
double expected_rss(const Design& design, const PosteriorMoments& moments, double sigma2);

double expected_rss(const Dataset& data, const PosteriorMoments& moments, double sigma2,
                    std::optional<std::span<const double>> weights = std::nullopt);

/// Same quantity with the trace taken as <V, X^T W X>_F, O(p^2) given the
/// cached Gram matrix. Used inside the EM loop.
double expected_rss_gram(const Design& design, const PosteriorMoments& moments, double sigma2);

/// e_j = sigma^2 V_jj + m_j^2, the posterior second moment of beta_j.
Eigen::VectorXd second_moments(const PosteriorMoments& moments, double sigma2);

}  // namespace bvsem
