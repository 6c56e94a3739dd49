#pragma once

// Additive models: one penalized cubic regression spline per continuous
// covariate, linear terms for covariates with few distinct values. Each
// smooth's penalty weight is calibrated so that the univariate smoother has a
// fixed number of effective degrees of freedom (4 by default, the classical
// s(x, df = 4) convention); the joint model is then fitted by penalized least
// squares or penalized IRLS.

#include <algorithm>
#include <set>

#include "brsdr/regression.hpp"

namespace brsdr {

struct AdditiveOptions {
  double smooth_df = 4.0;        // per-smooth df, linear part included
  int max_knots = 8;
  int min_distinct_for_smooth = 10;
  IrlsOptions irls{};
};

namespace detail {

inline std::vector<double> sorted_unique(const Eigen::Ref<const Vector>& v) {
  std::set<double> s(v.data(), v.data() + v.size());
  return {s.begin(), s.end()};
}

inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline FeatureTerm make_spline_term(const Eigen::Ref<const Vector>& col, Eigen::Index column, int max_knots) {
  FeatureTerm t{TermOp::CubicSpline, column};
  const auto n = col.size();
  t.center = col.mean();
  t.scale = std::sqrt((col.array() - t.center).square().sum() / static_cast<double>(n - 1));
  if (!(t.scale > 0.0)) t.scale = 1.0;
  Vector s = (col.array() - t.center) / t.scale;
  std::vector<double> sorted(s.data(), s.data() + n);
  std::sort(sorted.begin(), sorted.end());
  t.lower = sorted.front();
  t.upper = sorted.back();
  const auto uniq = sorted_unique(s);
  const int k = std::min<int>(max_knots, static_cast<int>(uniq.size()) - 4);
  for (int j = 1; j <= k; ++j) {
    const double knot = quantile_sorted(uniq, static_cast<double>(j) / (k + 1));
    if (t.knots.empty() || knot > t.knots.back() + 1e-9) t.knots.push_back(knot);
  }
  return t;
}

// Effective df of the univariate smoother [1, basis] with penalty lambda * P,
// linear part included and intercept excluded.
inline double smoother_df(const Matrix& xtx, const Matrix& pen, double lambda) {
  const auto w = xtx.rows();
  Matrix a = xtx;
  a.bottomRightCorner(w - 1, w - 1) += lambda * pen;
  Eigen::LDLT<Matrix> ldlt(a);
  return (ldlt.solve(xtx)).trace() - 1.0;
}

inline double calibrate_lambda(const Matrix& basis_design, const Matrix& pen, double target_df) {
  const Matrix xtx = basis_design.transpose() * basis_design;
  const double max_df = static_cast<double>(basis_design.cols() - 1);
  if (target_df >= max_df - 1e-9) return 0.0;
  // penalty weights scaled to the Gram matrix so the bracket is data-free
  const double scale = xtx.trace() / std::max(pen.trace(), 1e-300);
  double lo = -30.0, hi = 30.0;  // log10 of lambda / scale
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double df = smoother_df(xtx, pen, scale * std::pow(10.0, mid));
    if (df > target_df) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-10) break;
  }
  return scale * std::pow(10.0, 0.5 * (lo + hi));
}

}  // namespace detail

// Feature map plus block-diagonal penalty for an additive design on x.
struct AdditiveDesign {
  FeatureMap map;
  Matrix penalty;
};

inline AdditiveDesign build_additive_design(const Matrix& x, const AdditiveOptions& opt = {}) {
  const auto q = x.cols();
  if (q > 20) throw ContractError("additive model supports at most 20 covariates");
  std::vector<FeatureTerm> terms;
  for (Eigen::Index k = 0; k < q; ++k) {
    const auto uniq = detail::sorted_unique(x.col(k));
    if (static_cast<int>(uniq.size()) < opt.min_distinct_for_smooth)
      terms.push_back({TermOp::Identity, k});
    else
      terms.push_back(detail::make_spline_term(x.col(k), k, opt.max_knots));
  }
  FeatureMap map(terms, q);
  const auto p = map.width();
  Matrix penalty = Matrix::Zero(p, p);
  Eigen::Index c = 1;
  for (const auto& t : map.terms()) {
    if (t.op == TermOp::CubicSpline) {
      const Matrix pen = spline_penalty(t);
      FeatureMap single({t}, q);
      const double lambda = detail::calibrate_lambda(single.design(x), pen, opt.smooth_df);
      penalty.block(c, c, t.width(), t.width()) = lambda * pen;
    }
    c += t.width();
  }
  return {std::move(map), std::move(penalty)};
}

inline FittedRegression fit_additive(const Vector& response, const Matrix& x, RegressionKind kind,
                                     const AdditiveOptions& opt = {}) {
  auto design = build_additive_design(x, opt);
  const Matrix d = design.map.design(x);
  if (kind == RegressionKind::LinearGaussian)
    return fit_penalized_gaussian(response, d, design.penalty, std::move(design.map));
  auto fit = fit_penalized_logistic(response, d, design.penalty, std::move(design.map), opt.irls);
  if (!fit.converged)
    throw FitError("additive logistic fit did not converge after " + std::to_string(fit.iterations) +
                   " iterations (max |coef| " + std::to_string(fit.coefficients.cwiseAbs().maxCoeff()) + ")");
  return fit;
}

}  // namespace brsdr
