#include "bvsem/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bvsem/common.hpp"
#include "bvsem/kernels.hpp"

namespace bvsem {

namespace {

std::span<const double> col_span(const Eigen::MatrixXd& M, Eigen::Index j) {
  return {M.col(j).data(), static_cast<std::size_t>(M.rows())};
}

std::span<const double> vec_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Lower-triangle syrk into `out`, then mirrored so the result is exactly symmetric.
void symmetric_cross(const Eigen::MatrixXd& A, double alpha, Eigen::MatrixXd& out) {
  out.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose(), alpha);
  out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
}

// m = V b, using symmetry of V so every product is a contiguous column dot.
Eigen::VectorXd posterior_mean(const Eigen::MatrixXd& V, const Eigen::VectorXd& b) {
  Eigen::VectorXd m(V.cols());
  const auto bs = vec_span(b);
  for (Eigen::Index j = 0; j < V.cols(); ++j) m[j] = kernels::dot(col_span(V, j), bs);
  return m;
}

void check_prec(const Design& design, const PrecisionDiag& prec) {
  if (prec.d.size() != design.p()) throw InputError("precision diagonal length does not match p");
  for (Eigen::Index j = 0; j < prec.d.size(); ++j) {
    if (!(prec.d[j] > 0.0) || !std::isfinite(prec.d[j])) {
      throw InputError("prior variances must be positive and finite");
    }
  }
}

PosteriorMoments build_direct(const Design& design, const PrecisionDiag& prec) {
  Eigen::MatrixXd A = design.gram();
  A.diagonal().array() += prec.d.array().inverse();
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky of X^T W X + D^-1 failed (p = " + std::to_string(design.p()) + ")");
  }
  PosteriorMoments out;
  out.V = llt.solve(Eigen::MatrixXd::Identity(design.p(), design.p()));
  out.V = 0.5 * (out.V + out.V.transpose()).eval();
  out.log_det_v = -2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.last_refresh = Refresh::direct;
  return out;
}

// V = D - D X~^T (I + X~ D X~^T)^-1 X~ D, factoring only an n x n matrix.
PosteriorMoments build_woodbury(const Design& design, const PrecisionDiag& prec) {
  const Eigen::MatrixXd& X = design.scaled_x();
  const Eigen::Index n = design.n();
  const Eigen::Index p = design.p();

  const Eigen::MatrixXd B = X * prec.d.asDiagonal();  // X~ D, n x p
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  M.noalias() += B * X.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky of I + X D X^T failed (n = " + std::to_string(n) + ")");
  }
  const Eigen::MatrixXd E = llt.matrixL().solve(B);  // L^-1 X~ D

  PosteriorMoments out;
  out.V = Eigen::MatrixXd::Zero(p, p);
  symmetric_cross(E, -1.0, out.V);
  out.V.diagonal() += prec.d;
  out.log_det_v = prec.d.array().log().sum() - 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.last_refresh = Refresh::woodbury;
  return out;
}

}  // namespace

PrecisionDiag PrecisionDiag::from_gamma(const Indicator& gamma, double v0, double v1) {
  if (!(v1 > v0 && v0 > 0.0)) throw InputError("v0 must be < v1 and both positive");
  PrecisionDiag out;
  out.d.resize(static_cast<Eigen::Index>(gamma.size()));
  for (std::size_t j = 0; j < gamma.size(); ++j) out.d[static_cast<Eigen::Index>(j)] = gamma[j] ? v1 : v0;
  return out;
}

Design::Design(const Dataset& data, std::optional<std::span<const double>> weights) {
  data.validate();
  x_ = data.X;
  y_ = data.y;
  if (weights) {
    if (static_cast<Eigen::Index>(weights->size()) != data.n()) {
      throw InputError("weight vector length does not match n");
    }
    w_ = Eigen::Map<const Eigen::VectorXd>(weights->data(), data.n());
    for (Eigen::Index i = 0; i < w_.size(); ++i) {
      if (!(w_[i] > 0.0) || !std::isfinite(w_[i])) throw InputError("weights must be strictly positive");
    }
    const Eigen::VectorXd root = w_.array().sqrt();
    x_ = root.asDiagonal() * x_;
    y_ = y_.cwiseProduct(root);
    weighted_ = true;
  } else {
    w_ = Eigen::VectorXd::Ones(data.n());
  }
  gram_ = Eigen::MatrixXd::Zero(p(), p());
  symmetric_cross(x_, 1.0, gram_);
  xty_ = x_.transpose() * y_;
  yty_ = y_.squaredNorm();
}

int flip_budget(Eigen::Index n, Eigen::Index p) {
  return std::max(1, static_cast<int>(std::min(n, p) / 2));
}

PosteriorMoments build_posterior(const Design& design, const PrecisionDiag& prec, Solver solver) {
  check_prec(design, prec);
  if (solver == Solver::automatic) solver = design.p() > design.n() ? Solver::woodbury : Solver::direct;
  PosteriorMoments out = solver == Solver::woodbury ? build_woodbury(design, prec) : build_direct(design, prec);
  if (!out.V.allFinite() || !std::isfinite(out.log_det_v)) {
    throw NumericalError("posterior covariance has non-finite entries");
  }
  out.m = posterior_mean(out.V, design.xty());
  out.prec = prec;
  return out;
}

PosteriorMoments build_posterior(const Dataset& data, const PrecisionDiag& prec,
                                 std::optional<std::span<const double>> weights) {
  return build_posterior(Design(data, weights), prec);
}

std::vector<Flip> diff_flips(const PrecisionDiag& from, const PrecisionDiag& to) {
  if (from.d.size() != to.d.size()) throw InputError("precision diagonals differ in length");
  std::vector<Flip> flips;
  for (Eigen::Index j = 0; j < from.d.size(); ++j) {
    if (from.d[j] != to.d[j]) flips.push_back({j, from.d[j], to.d[j]});
  }
  return flips;
}

PosteriorMoments update_posterior(PosteriorMoments prev, std::span<const Flip> flips, const Design& design) {
  if (flips.empty()) return prev;

  const Eigen::Index p = design.p();
  if (prev.V.rows() != p || prev.prec.d.size() != p) throw InputError("moments do not match design");
  std::vector<char> seen(static_cast<std::size_t>(p), 0);
  PrecisionDiag next = prev.prec;
  for (const Flip& f : flips) {
    if (f.index < 0 || f.index >= p) throw InputError("flip index out of range");
    if (seen[static_cast<std::size_t>(f.index)]++) throw InputError("flip indices must be distinct");
    if (prev.prec.d[f.index] != f.old_d) throw InputError("flip old value does not match current prior");
    if (!(f.new_d > 0.0) || !std::isfinite(f.new_d)) throw InputError("prior variances must be positive");
    next.d[f.index] = f.new_d;
  }

  const auto l = static_cast<Eigen::Index>(flips.size());
  if (prev.flips_since_refactor + l > flip_budget(design.n(), p) ||
      prev.updates_since_refactor + 1 > kMaxUpdatesBetweenRebuilds) {
    PosteriorMoments fresh = build_posterior(design, next);
    fresh.last_refresh = Refresh::budget;
    return fresh;
  }

  // S = Delta^-1 + V_FF and G = V[:, F], both taken from the old V.
  Eigen::MatrixXd S(l, l);
  Eigen::MatrixXd G(p, l);
  Eigen::VectorXd delta(l);
  for (Eigen::Index a = 0; a < l; ++a) {
    const Flip& fa = flips[static_cast<std::size_t>(a)];
    delta[a] = 1.0 / fa.new_d - 1.0 / fa.old_d;
    G.col(a) = prev.V.col(fa.index);
    for (Eigen::Index b = 0; b < l; ++b) S(a, b) = prev.V(fa.index, flips[static_cast<std::size_t>(b)].index);
    S(a, a) += 1.0 / delta[a];
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
  const double scale = S.cwiseAbs().maxCoeff();
  lu.setThreshold(1e-13);
  const bool singular = !lu.isInvertible() || !(std::abs(lu.maxPivot()) > 0.0) ||
                        lu.rcond() < 1e-13 || !(scale > 0.0);
  if (singular) {
    PosteriorMoments fresh = build_posterior(design, next);
    fresh.last_refresh = Refresh::singular;
    return fresh;
  }

  // det(I + Delta V_FF) = det(Delta) det(S) links the old and new log-determinants.
  double log_abs_det_s = 0.0;
  {
    const auto& lu_mat = lu.matrixLU();
    for (Eigen::Index a = 0; a < l; ++a) log_abs_det_s += std::log(std::abs(lu_mat(a, a)));
  }
  const double log_det_update = delta.array().abs().log().sum() + log_abs_det_s;

  const Eigen::MatrixXd H = lu.solve(G.transpose()).transpose();  // G S^-1 (S symmetric)
  std::vector<const double*> h_cols(static_cast<std::size_t>(l));
  for (Eigen::Index k = 0; k < l; ++k) h_cols[static_cast<std::size_t>(k)] = H.col(k).data();
  Eigen::VectorXd coeffs(l);
  for (Eigen::Index c = 0; c < p; ++c) {
    coeffs = G.row(c).transpose();
    kernels::subtract_combination({prev.V.col(c).data(), static_cast<std::size_t>(p)}, h_cols,
                                  vec_span(coeffs));
  }

  bool healthy = std::isfinite(log_det_update);
  for (Eigen::Index j = 0; healthy && j < p; ++j) healthy = prev.V(j, j) > 0.0 && std::isfinite(prev.V(j, j));
  if (!healthy) {
    PosteriorMoments fresh = build_posterior(design, next);
    fresh.last_refresh = Refresh::singular;
    return fresh;
  }

  prev.m = posterior_mean(prev.V, design.xty());
  prev.prec = std::move(next);
  prev.log_det_v -= log_det_update;
  prev.flips_since_refactor += static_cast<int>(l);
  prev.updates_since_refactor += 1;
  prev.last_refresh = Refresh::incremental;
  return prev;
}

double expected_rss(const Design& design, const PosteriorMoments& moments, double sigma2) {
  const Eigen::MatrixXd& X = design.scaled_x();
  if (moments.V.rows() != design.p() || moments.m.size() != design.p()) {
    throw InputError("moments do not match design");
  }
  // sum_i x~_i^T V x~_i = sum_j <(X~ V)_{:,j}, X~_{:,j}>
  const Eigen::MatrixXd XV = X * moments.V;
  double trace = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) trace += kernels::dot(col_span(XV, j), col_span(X, j));
  const Eigen::VectorXd resid = design.scaled_y() - X * moments.m;
  return sigma2 * trace + kernels::dot(vec_span(resid), vec_span(resid));
}

double expected_rss(const Dataset& data, const PosteriorMoments& moments, double sigma2,
                    std::optional<std::span<const double>> weights) {
  return expected_rss(Design(data, weights), moments, sigma2);
}

double expected_rss_gram(const Design& design, const PosteriorMoments& moments, double sigma2) {
  const Eigen::MatrixXd& G = design.gram();
  if (moments.V.rows() != G.rows()) throw InputError("moments do not match design");
  const auto count = static_cast<std::size_t>(G.size());
  const double trace = kernels::dot({moments.V.data(), count}, {G.data(), count});
  const Eigen::VectorXd resid = design.scaled_y() - design.scaled_x() * moments.m;
  return sigma2 * trace + kernels::dot(vec_span(resid), vec_span(resid));
}

Eigen::VectorXd second_moments(const PosteriorMoments& moments, double sigma2) {
  return (sigma2 * moments.V.diagonal().array() + moments.m.array().square()).matrix();
}

}  // namespace bvsem
