#pragma once

// Candidate regression models: ordinary least squares, logistic regression by
// Newton/IRLS, and penalized additive versions of both.

#include <cmath>
#include <numbers>
#include <string>

#include "brsdr/features.hpp"

namespace brsdr {

enum class RegressionKind { LinearGaussian, LogisticBinomial };

struct FittedRegression {
  RegressionKind kind = RegressionKind::LinearGaussian;
  FeatureMap feature_map;
  std::string feature_description;
  Vector coefficients;
  Matrix coef_covariance;
  double dispersion = 1.0;  // residual variance; 1 for logistic
  double loglik = 0.0;
  double effective_df = 0.0;  // coefficient df (trace of the hat matrix)
  double aic = 0.0;
  double bic = 0.0;
  Eigen::Index n_fit = 0;
  bool ridge_fallback = false;
  bool separation = false;
  bool converged = true;
  int iterations = 0;

  // Linear predictor at raw covariates.
  Vector linear_predictor(const Matrix& x) const { return feature_map.design(x) * coefficients; }
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Inverse of a symmetric PSD matrix after scaling it to unit diagonal, so that
// badly scaled columns (squares of large covariates) do not look singular. A
// relative ridge is added in the scaled space when it is numerically singular.
struct RegularizedSolve {
  Matrix inverse;
  bool ridge = false;
};

inline RegularizedSolve regularized_inverse(const Matrix& a) {
  const auto p = a.rows();
  Vector d = a.diagonal().cwiseMax(0.0).cwiseSqrt();
  for (auto& v : d)
    if (!(v > 0.0)) v = 1.0;
  const Vector dinv = d.cwiseInverse();
  const Matrix scaled = dinv.asDiagonal() * a * dinv.asDiagonal();
  Eigen::LDLT<Matrix> ldlt(scaled);
  bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
  if (ok) {
    const auto dv = ldlt.vectorD();
    const double dmax = dv.cwiseAbs().maxCoeff();
    ok = dmax > 0.0 && dv.minCoeff() > 1e-11 * dmax;
  }
  bool ridge = false;
  Matrix inv;
  if (ok) {
    inv = ldlt.solve(Matrix::Identity(p, p));
  } else {
    Matrix reg = scaled;
    reg.diagonal().array() += 1e-8;
    Eigen::LDLT<Matrix> l2(reg);
    if (l2.info() != Eigen::Success) throw FitError("normal equations singular even after ridge fallback");
    inv = l2.solve(Matrix::Identity(p, p));
    ridge = true;
  }
  return {dinv.asDiagonal() * inv * dinv.asDiagonal(), ridge};
}

inline void finish_criteria(FittedRegression& fit, double df_params) {
  const double n = static_cast<double>(fit.n_fit);
  fit.aic = -2.0 * fit.loglik + 2.0 * df_params;
  fit.bic = -2.0 * fit.loglik + df_params * std::log(n);
}

}  // namespace detail

// Penalized least squares: minimizes |y - X b|^2 + b' S b. With S = 0 this is
// OLS; the Gaussian log-likelihood counts the variance as one extra parameter.
inline FittedRegression fit_penalized_gaussian(const Vector& y, const Matrix& design, const Matrix& penalty,
                                               FeatureMap map = {}) {
  const auto n = design.rows();
  const auto p = design.cols();
  if (y.size() != n) throw ContractError("response and design differ in length");
  if (n <= p && penalty.isZero(0.0))
    throw FitError("linear fit needs n > p (n=" + std::to_string(n) + ", p=" + std::to_string(p) + ")");
  const Matrix xtx = design.transpose() * design;
  auto solve = detail::regularized_inverse(xtx + penalty);
  FittedRegression fit;
  fit.kind = RegressionKind::LinearGaussian;
  fit.feature_map = std::move(map);
  fit.coefficients = solve.inverse * (design.transpose() * y);
  fit.ridge_fallback = solve.ridge;
  fit.n_fit = n;
  fit.effective_df = (solve.inverse * xtx).trace();
  if (static_cast<double>(n) - fit.effective_df < 1.0) throw FitError("penalized fit leaves no residual df");
  const Vector resid = y - design * fit.coefficients;
  const double rss = resid.squaredNorm();
  fit.dispersion = rss / (static_cast<double>(n) - fit.effective_df);
  // for penalized fits this is the Bayesian (posterior) covariance
  fit.coef_covariance = fit.dispersion * solve.inverse;
  fit.coef_covariance = 0.5 * (fit.coef_covariance + fit.coef_covariance.transpose()).eval();
  const double sigma2_ml = std::max(rss / static_cast<double>(n), 1e-300);
  fit.loglik = -0.5 * static_cast<double>(n) * (detail::kLog2Pi + std::log(sigma2_ml) + 1.0);
  detail::finish_criteria(fit, fit.effective_df + 1.0);
  return fit;
}

inline FittedRegression fit_linear_gaussian(const Vector& y, const Matrix& design, FeatureMap map = {}) {
  const auto p = design.cols();
  auto fit = fit_penalized_gaussian(y, design, Matrix::Zero(p, p), std::move(map));
  // plain OLS counts every column, even when the ridge fallback was needed
  fit.effective_df = static_cast<double>(p);
  fit.dispersion = (y - design * fit.coefficients).squaredNorm() / static_cast<double>(design.rows() - p);
  detail::finish_criteria(fit, static_cast<double>(p) + 1.0);
  return fit;
}

struct IrlsOptions {
  int max_iterations = 100;
  double score_tol = 1e-8;
  double loglik_rel_tol = 1e-10;
  double separation_bound = 30.0;
  double pinned_eta = 18.0;
};

namespace detail {
inline double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double bernoulli_loglik(const Vector& z, const Vector& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) ll += z[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}
}  // namespace detail

// Penalized logistic regression by Newton-Raphson (IRLS) with step halving.
inline FittedRegression fit_penalized_logistic(const Vector& z, const Matrix& design, const Matrix& penalty,
                                               FeatureMap map = {}, const IrlsOptions& opt = {}) {
  const auto n = design.rows();
  const auto p = design.cols();
  if (z.size() != n) throw ContractError("response and design differ in length");
  const double ones = z.sum();
  if (ones <= 0.0 || ones >= static_cast<double>(n)) throw FitError("logistic fit needs both classes present");
  if (n <= p && penalty.isZero(0.0)) throw FitError("logistic fit needs n > p");

  FittedRegression fit;
  fit.kind = RegressionKind::LogisticBinomial;
  fit.feature_map = std::move(map);
  fit.n_fit = n;
  Vector beta = Vector::Zero(p);
  beta[0] = std::log(ones / (static_cast<double>(n) - ones));
  auto penalized_ll = [&](const Vector& b) {
    return detail::bernoulli_loglik(z, design * b) - 0.5 * b.dot(penalty * b);
  };
  double ll = penalized_ll(beta);
  bool converged = false;
  bool ridge = false;
  int it = 0;
  Vector score(p);
  for (; it < opt.max_iterations; ++it) {
    const Vector eta = design * beta;
    Vector mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = 1.0 / (1.0 + std::exp(-eta[i]));
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    score = design.transpose() * (z - mu) - penalty * beta;
    if (score.cwiseAbs().maxCoeff() < opt.score_tol) {
      converged = true;
      break;
    }
    const Matrix info = design.transpose() * w.asDiagonal() * design + penalty;
    auto solve = detail::regularized_inverse(info);
    ridge = ridge || solve.ridge;
    const Vector step = solve.inverse * score;
    double t = 1.0;
    Vector next = beta + step;
    double ll_next = penalized_ll(next);
    for (int h = 0; h < 30 && !(ll_next >= ll - 1e-12 * std::abs(ll)); ++h) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = penalized_ll(next);
    }
    const double rel = std::abs(ll_next - ll) / std::max(std::abs(ll), 1e-300);
    beta = next;
    ll = ll_next;
    if (rel < opt.loglik_rel_tol) {
      converged = true;
      ++it;
      break;
    }
  }
  const Vector eta = design * beta;
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = 1.0 / (1.0 + std::exp(-eta[i]));
    w[i] = m * (1.0 - m);
  }
  const Matrix xtwx = design.transpose() * w.asDiagonal() * design;
  auto solve = detail::regularized_inverse(xtwx + penalty);
  fit.coefficients = beta;
  fit.coef_covariance = 0.5 * (solve.inverse + solve.inverse.transpose());
  fit.ridge_fallback = ridge || solve.ridge;
  fit.converged = converged;
  fit.iterations = it;
  fit.effective_df = penalty.isZero(0.0) ? static_cast<double>(p) : (solve.inverse * xtwx).trace();
  fit.loglik = detail::bernoulli_loglik(z, eta);
  // large coefficients that drive fitted probabilities to 0 / 1
  const bool pinned = eta.cwiseAbs().maxCoeff() > opt.pinned_eta;
  bool classified = true;
  for (Eigen::Index i = 0; i < n && classified; ++i) classified = (z[i] > 0.5) == (eta[i] > 0.0);
  fit.separation = pinned && (classified || beta.cwiseAbs().maxCoeff() > opt.separation_bound);
  detail::finish_criteria(fit, fit.effective_df);
  return fit;
}

inline FittedRegression fit_logistic_irls(const Vector& z, const Matrix& design, FeatureMap map = {},
                                          const IrlsOptions& opt = {}) {
  const auto p = design.cols();
  return fit_penalized_logistic(z, design, Matrix::Zero(p, p), std::move(map), opt);
}

}  // namespace brsdr
