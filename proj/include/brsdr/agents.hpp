#pragma once

#include <cmath>
#include <array>
#include <string>
#include <vector>

#include "brsdr/additive.hpp"
#include "brsdr/dgp.hpp"

namespace brsdr {

// J candidate models for each nuisance. Outcome models are fitted per arm.
struct AgentSet {
  std::vector<FittedRegression> outcome_treated;
  std::vector<FittedRegression> outcome_control;
  std::vector<FittedRegression> propensity;
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }

  // Criteria for combining outcome models: the two arm fits are independent
  // models, so their criteria add.
  Vector outcome_aic() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j)
      v[static_cast<Eigen::Index>(j)] = outcome_treated[j].aic + outcome_control[j].aic;
    return v;
  }
  Vector outcome_bic() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j)
      v[static_cast<Eigen::Index>(j)] = outcome_treated[j].bic + outcome_control[j].bic;
    return v;
  }
  Vector propensity_aic() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) v[static_cast<Eigen::Index>(j)] = propensity[j].aic;
    return v;
  }
  Vector propensity_bic() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) v[static_cast<Eigen::Index>(j)] = propensity[j].bic;
    return v;
  }
};

enum class AgentDesign { GlmGqmGam, Sim3Models };

struct AgentDesignSpec {
  AgentDesign design = AgentDesign::GlmGqmGam;
  int scenario = 1;  // Sim3Models only
  AdditiveOptions additive{};
};

namespace detail {

inline std::pair<Matrix, Vector> arm_rows(const Dataset& data, double arm) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    if (data.treatments()[i] == arm) rows.push_back(i);
  Matrix x(static_cast<Eigen::Index>(rows.size()), data.num_covariates());
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = data.covariates().row(rows[r]);
    y[static_cast<Eigen::Index>(r)] = data.outcomes()[rows[r]];
  }
  return {std::move(x), std::move(y)};
}

inline FittedRegression fit_mapped(const Vector& response, const Matrix& x, const FeatureMap& map,
                                   RegressionKind kind, const std::string& label) {
  const Matrix d = map.design(x);
  if (d.rows() < d.cols() + 2)
    throw FitError("model " + label + ": " + std::to_string(d.rows()) + " rows for " + std::to_string(d.cols()) +
                   " coefficients");
  auto fit = kind == RegressionKind::LinearGaussian ? fit_linear_gaussian(response, d, map)
                                                    : fit_logistic_irls(response, d, map);
  fit.feature_description = map.description();
  return fit;
}

inline FittedRegression fit_additive_labelled(const Vector& response, const Matrix& x, RegressionKind kind,
                                              const AdditiveOptions& opt, const std::string& label) {
  // penalized fit: the budget is the target effective df, not the basis width
  const auto budget = static_cast<Eigen::Index>(std::ceil(1.0 + opt.smooth_df * static_cast<double>(x.cols())));
  if (x.rows() < budget + 2)
    throw FitError("model " + label + ": " + std::to_string(x.rows()) + " rows for " + std::to_string(budget) +
                   " effective coefficients");
  auto fit = fit_additive(response, x, kind, opt);
  fit.feature_description = fit.feature_map.description();
  return fit;
}

// Sim3 candidate maps over the four observed covariates.
inline FeatureMap sim3_map(std::initializer_list<std::pair<TermOp, Eigen::Index>> terms) {
  std::vector<FeatureTerm> t;
  for (auto [op, col] : terms) t.push_back({op, col});
  return {std::move(t), 4};
}

struct Sim3Maps {
  FeatureMap propensity;
  FeatureMap outcome;
};

inline std::array<Sim3Maps, 3> sim3_maps(int scenario) {
  using enum TermOp;
  const auto m1 = sim3_map({{Exp, 0}, {Identity, 1}, {Identity, 2}, {Identity, 3}});
  const auto m2 = sim3_map({{Cube, 0}, {Identity, 1}, {Identity, 2}, {Identity, 3}});
  Sim3Maps m3;
  switch (scenario) {
    case 1:
      m3.propensity = sim3_map({{HalfNormalScaled, 0}, {Identity, 1}, {Identity, 2}, {Identity, 3}});
      m3.outcome = m3.propensity;
      break;
    case 2:
      m3.propensity = sim3_map({{HalfNormalScaled, 0}, {Identity, 1}, {Identity, 2}});
      m3.outcome = sim3_map({{Identity, 0}, {Identity, 1}, {Identity, 3}});
      break;
    case 3:
      m3.propensity = sim3_map({{Identity, 0}, {Identity, 1}, {Identity, 2}});
      m3.outcome = sim3_map({{HalfNormalScaled, 0}, {Identity, 1}, {Identity, 3}});
      break;
    case 4:
      m3.propensity = sim3_map({{Identity, 0}, {Identity, 1}, {Identity, 2}});
      m3.outcome = sim3_map({{Identity, 0}, {Identity, 1}, {Identity, 2}, {Identity, 3}});
      break;
    default: throw ConfigError("sim3 scenario must be 1..4, got " + std::to_string(scenario));
  }
  return {Sim3Maps{m1, m1}, Sim3Maps{m2, m2}, m3};
}

}  // namespace detail

inline AgentSet build_standard_agents(const Dataset& data, const AgentDesignSpec& spec = {}) {
  const auto [x1, y1] = detail::arm_rows(data, 1.0);
  const auto [x0, y0] = detail::arm_rows(data, 0.0);
  const Matrix& x = data.covariates();
  const Vector& z = data.treatments();
  AgentSet set;
  using RK = RegressionKind;
  if (spec.design == AgentDesign::GlmGqmGam) {
    const auto q = data.num_covariates();
    const std::array<std::pair<std::string, FeatureMap>, 2> parametric{
        std::pair{std::string("GLM"), FeatureMap::identity(q)},
        std::pair{std::string("GQM"), FeatureMap::with_squares(q)}};
    for (const auto& [label, map] : parametric) {
      set.labels.push_back(label);
      set.outcome_treated.push_back(detail::fit_mapped(y1, x1, map, RK::LinearGaussian, label + " mu1"));
      set.outcome_control.push_back(detail::fit_mapped(y0, x0, map, RK::LinearGaussian, label + " mu0"));
      set.propensity.push_back(detail::fit_mapped(z, x, map, RK::LogisticBinomial, label + " pi"));
    }
    set.labels.push_back("GAM");
    set.outcome_treated.push_back(detail::fit_additive_labelled(y1, x1, RK::LinearGaussian, spec.additive, "GAM mu1"));
    set.outcome_control.push_back(detail::fit_additive_labelled(y0, x0, RK::LinearGaussian, spec.additive, "GAM mu0"));
    set.propensity.push_back(detail::fit_additive_labelled(z, x, RK::LogisticBinomial, spec.additive, "GAM pi"));
    return set;
  }
  if (data.num_covariates() != 4) throw ConfigError("Sim3 candidate models need exactly 4 covariates");
  const auto maps = detail::sim3_maps(spec.scenario);
  const std::array<std::string, 3> labels{"M1", "M2", "M3"};
  for (std::size_t j = 0; j < 3; ++j) {
    set.labels.push_back(labels[j]);
    set.outcome_treated.push_back(
        detail::fit_mapped(y1, x1, maps[j].outcome, RK::LinearGaussian, labels[j] + " mu1"));
    set.outcome_control.push_back(
        detail::fit_mapped(y0, x0, maps[j].outcome, RK::LinearGaussian, labels[j] + " mu0"));
    set.propensity.push_back(detail::fit_mapped(z, x, maps[j].propensity, RK::LogisticBinomial, labels[j] + " pi"));
  }
  return set;
}

inline constexpr double kAgentVarianceFloor = 1e-8;

// Mean and variance of one fitted model's regression term at raw covariates.
// Logistic models are mapped to the probability scale with the delta method;
// propensity means are clipped.
inline std::pair<Vector, Vector> predict_regression(const FittedRegression& fit, const Matrix& x) {
  const Matrix d = fit.feature_map.design(x);
  const Vector eta = d * fit.coefficients;
  Vector var = ((d * fit.coef_covariance).array() * d.array()).rowwise().sum();
  Vector mean = eta;
  if (fit.kind == RegressionKind::LogisticBinomial) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double p = dgp::logistic(eta[i]);
      const double slope = p * (1.0 - p);
      var[i] *= slope * slope;
      mean[i] = clip_propensity(p);
    }
  }
  for (Eigen::Index i = 0; i < var.size(); ++i) var[i] = std::max(var[i], kAgentVarianceFloor);
  return {std::move(mean), std::move(var)};
}

struct AgentPredictions {
  AgentPredictive mu1;
  AgentPredictive mu0;
  AgentPredictive pi;
};

inline AgentPredictions predict_agents(const AgentSet& agents, const Matrix& x) {
  const auto n = x.rows();
  const auto J = static_cast<Eigen::Index>(agents.size());
  auto fill = [&](const std::vector<FittedRegression>& fits, Target target) {
    AgentPredictive out{target, Matrix(n, J), Matrix(n, J), agents.labels};
    for (Eigen::Index j = 0; j < J; ++j) {
      auto [m, v] = predict_regression(fits[static_cast<std::size_t>(j)], x);
      out.means.col(j) = m;
      out.variances.col(j) = v;
    }
    return out;
  };
  return {fill(agents.outcome_treated, Target::OutcomeTreated), fill(agents.outcome_control, Target::OutcomeControl),
          fill(agents.propensity, Target::Propensity)};
}

}  // namespace brsdr
