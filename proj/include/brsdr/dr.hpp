#pragma once

// Doubly robust (AIPW) estimation of the average treatment effect, its
// influence-function variance, the Bayesian-bootstrap posterior over
// synthesized nuisance draws, and the SA / SIC / BMA ensemble baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "brsdr/agents.hpp"
#include "brsdr/dataset.hpp"
#include "brsdr/rng.hpp"

namespace brsdr {

struct DrInputs {
  Vector mu1;
  Vector mu0;
  Vector pi;
  Vector y;
  Vector z;

  // Clips pi into [kClipEps, 1 - kClipEps].
  static DrInputs make(Vector mu1, Vector mu0, Vector pi, const Vector& y, const Vector& z) {
    for (auto& p : pi) p = clip_propensity(p);
    DrInputs in{std::move(mu1), std::move(mu0), std::move(pi), y, z};
    in.check();
    return in;
  }

  Eigen::Index size() const { return y.size(); }

  void check() const {
    const auto n = y.size();
    if (mu1.size() != n || mu0.size() != n || pi.size() != n || z.size() != n)
      throw ContractError("DR inputs disagree on n");
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(pi[i] > 0.0 && pi[i] < 1.0)) throw ContractError("propensity outside (0,1) at unit " + std::to_string(i));
  }
};

// Per-unit augmented IPW contribution; the DR estimate is its (weighted) mean.
inline double dr_contribution(double y, double z, double mu1, double mu0, double pi) {
  const double treated = z * y / pi - (z - pi) / pi * mu1;
  const double control = (1.0 - z) * y / (1.0 - pi) + (z - pi) / (1.0 - pi) * mu0;
  return treated - control;
}

inline Vector dr_contributions(const DrInputs& in) {
  Vector c(in.size());
  for (Eigen::Index i = 0; i < in.size(); ++i) c[i] = dr_contribution(in.y[i], in.z[i], in.mu1[i], in.mu0[i], in.pi[i]);
  return c;
}

inline double dr_point(const DrInputs& in, const Vector& unit_weights) {
  in.check();
  if (unit_weights.size() != in.size()) throw ContractError("unit weights length differs from n");
  if (unit_weights.minCoeff() < 0.0 || std::abs(unit_weights.sum() - 1.0) > 1e-10)
    throw ContractError("unit weights must be nonnegative and sum to 1");
  return unit_weights.dot(dr_contributions(in));
}

inline double dr_point(const DrInputs& in) {
  in.check();
  return dr_contributions(in).mean();
}

// Centered second moment of the per-unit contributions: an estimate of
// n Var(tau_hat).
inline double influence_variance(const DrInputs& in) {
  const Vector c = dr_contributions(in);
  const double tau = c.mean();
  return (c.array() - tau).square().mean();
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double length() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

struct PointEstimate {
  double estimate = 0.0;
  double se = 0.0;
  Interval ci;
};

// tau_hat +/- 1.96 sqrt(V / n).
inline PointEstimate dr_estimate_with_ci(const DrInputs& in) {
  const double tau = dr_point(in);
  const double se = std::sqrt(influence_variance(in) / static_cast<double>(in.size()));
  return {tau, se, {tau - 1.959963984540054 * se, tau + 1.959963984540054 * se}};
}

// Linear-interpolation sample quantile (type 7).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ContractError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct DrPosterior {
  Vector draws;
  double point = 0.0;  // posterior mean
  double sd = 0.0;
  Interval interval;   // central 95%
  double plain_dr = 0.0;
  double influence_var = 0.0;
};

inline DrPosterior summarize_posterior(Vector draws) {
  DrPosterior post;
  post.draws = std::move(draws);
  const auto b = post.draws.size();
  post.point = post.draws.mean();
  post.sd = b > 1 ? std::sqrt((post.draws.array() - post.point).square().sum() / static_cast<double>(b - 1)) : 0.0;
  std::vector<double> v(post.draws.data(), post.draws.data() + b);
  post.interval = {quantile(v, 0.025), quantile(v, 0.975)};
  return post;
}

namespace detail {

// tau^(b) = sum_i w_i c_i^(b) with w^(b) ~ Dirichlet(1, ..., 1).
template <class Contribution>
Vector bootstrap_draws(Eigen::Index draws, Eigen::Index n, Contribution contribution, std::uint64_t seed) {
  auto rng = Rng::substream(seed, "bootstrap/dirichlet");
  Vector taus(draws);
  for (Eigen::Index b = 0; b < draws; ++b) {
    const auto w = rng.flat_dirichlet(static_cast<std::size_t>(n));
    double tau = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) tau += w[static_cast<std::size_t>(i)] * contribution(b, i);
    taus[b] = tau;
  }
  return taus;
}

}  // namespace detail

// Bayesian-bootstrap DR posterior: for each synthesized draw b, Dirichlet(1)
// unit weights and the weighted DR estimate with that draw's nuisances. Rows
// of the three draw matrices are paired by index.
inline DrPosterior bootstrap_dr_posterior(const Matrix& mu1_draws, const Matrix& mu0_draws, const Matrix& pi_draws,
                                          const Vector& y, const Vector& z, std::uint64_t seed) {
  const auto B = mu1_draws.rows();
  const auto n = y.size();
  if (mu0_draws.rows() != B || pi_draws.rows() != B) throw ContractError("draw counts differ across nuisances");
  if (mu1_draws.cols() != n || mu0_draws.cols() != n || pi_draws.cols() != n)
    throw ContractError("draw matrices must have n columns");
  if (B < 1) throw ContractError("bootstrap needs at least one draw");
  auto post = summarize_posterior(detail::bootstrap_draws(
      B, n,
      [&](Eigen::Index b, Eigen::Index i) {
        return dr_contribution(y[i], z[i], mu1_draws(b, i), mu0_draws(b, i), clip_propensity(pi_draws(b, i)));
      },
      seed));
  const Vector pi_mean = pi_draws.colwise().mean().transpose();
  const auto mean_inputs = DrInputs::make(mu1_draws.colwise().mean().transpose(), mu0_draws.colwise().mean().transpose(),
                                          pi_mean, y, z);
  post.plain_dr = dr_point(mean_inputs);
  post.influence_var = influence_variance(mean_inputs);
  return post;
}

// Same posterior with the nuisances held fixed across all B draws.
inline DrPosterior bootstrap_dr_posterior_fixed(const DrInputs& in, Eigen::Index draws, std::uint64_t seed) {
  in.check();
  if (draws < 1) throw ContractError("bootstrap needs at least one draw");
  const Vector c = dr_contributions(in);
  auto post = summarize_posterior(
      detail::bootstrap_draws(draws, in.size(), [&](Eigen::Index, Eigen::Index i) { return c[i]; }, seed));
  post.plain_dr = c.mean();
  post.influence_var = influence_variance(in);
  return post;
}

enum class EnsembleMethod { SA, SIC, BMA };

inline const char* to_string(EnsembleMethod m) {
  switch (m) {
    case EnsembleMethod::SA: return "SA";
    case EnsembleMethod::SIC: return "SIC";
    case EnsembleMethod::BMA: return "BMA";
  }
  return "?";
}

struct EnsembleWeights {
  EnsembleMethod method;
  Vector w;
};

// SA: equal weights. SIC: exp(-dAIC/2). BMA: exp(-dBIC/2), the BIC
// approximation to posterior model probabilities under a uniform model prior.
inline EnsembleWeights ensemble_weights(EnsembleMethod method, const Vector& aics, const Vector& bics) {
  const auto J = aics.size();
  if (J < 1) throw ContractError("ensemble needs at least one model");
  if (!aics.allFinite() || !bics.allFinite()) throw ContractError("non-finite information criterion");
  if (method == EnsembleMethod::SA) return {method, Vector::Constant(J, 1.0 / static_cast<double>(J))};
  const Vector& crit = method == EnsembleMethod::SIC ? aics : bics;
  Vector w = (-(crit.array() - crit.minCoeff()) / 2.0).exp();
  w /= w.sum();
  return {method, w};
}

// Weighted-average nuisances from agent predictions, then the plug-in DR
// estimate with its influence-function interval.
inline PointEstimate combined_dr_estimate(const AgentPredictions& pred, const Vector& outcome_weights,
                                          const Vector& propensity_weights, const Dataset& data) {
  const auto J = pred.mu1.num_agents();
  if (outcome_weights.size() != J || propensity_weights.size() != J) throw ContractError("weight length differs from J");
  for (const Vector* w : {&outcome_weights, &propensity_weights})
    if (w->minCoeff() < 0.0 || std::abs(w->sum() - 1.0) > 1e-10) throw ContractError("weights must lie on the simplex");
  Vector pi = pred.pi.means * propensity_weights;
  auto in = DrInputs::make(pred.mu1.means * outcome_weights, pred.mu0.means * outcome_weights, std::move(pi),
                           data.outcomes(), data.treatments());
  return dr_estimate_with_ci(in);
}

// Single agent j as its own DR estimator.
inline PointEstimate single_model_dr_estimate(const AgentPredictions& pred, Eigen::Index j, const Dataset& data) {
  const auto J = pred.mu1.num_agents();
  Vector w = Vector::Zero(J);
  w[j] = 1.0;
  return combined_dr_estimate(pred, w, w, data);
}

}  // namespace brsdr
