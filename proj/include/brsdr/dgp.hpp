#pragma once

// Seedable simulation designs. Every generator draws from named substreams of
// the replication seed, so two calls with the same arguments are bit-identical
// and the omit flag of the omitted-confounder design changes visibility only.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "brsdr/dataset.hpp"
#include "brsdr/rng.hpp"

namespace brsdr::dgp {

enum class SimId { Sim1, Sim2, Sim3, Sim4 };

struct GeneratedData {
  Dataset data;
  std::optional<Matrix> hidden;  // unobserved confounders, when the design has them
  double true_ate;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {
inline void require_n(Eigen::Index n) {
  if (n < 10) throw ConfigError("simulation needs n >= 10, got " + std::to_string(n));
}
inline std::vector<std::string> x_names(Eigen::Index q, Eigen::Index skip = -1) {
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < q; ++k)
    if (k != skip) names.push_back("X" + std::to_string(k + 1));
  return names;
}
}  // namespace detail

// --- Kang-Schafer style design: true effect zero everywhere -------------------

inline Eigen::Vector4d sim1_covariates(const Eigen::Vector4d& u) {
  return {std::exp(u[0] / 2.0), u[1] / (1.0 + std::exp(u[0])) + 10.0, std::pow(u[0] * u[2] / 25.0 + 0.6, 3),
          std::pow(u[1] + u[3] + 20.0, 2)};
}

inline double sim1_outcome_mean(const Eigen::Vector4d& u) {
  return 210.0 + 27.4 * u[0] + 13.7 * u[1] + 13.7 * u[2] + 13.7 * u[3];
}

inline double sim1_logit(const Eigen::Vector4d& u) {
  return -u[0] + 0.5 * u[1] - 0.25 * u[2] - 0.1 * u[3];
}

inline GeneratedData gen_sim1(Eigen::Index n, std::uint64_t seed) {
  detail::require_n(n);
  auto u_rng = Rng::substream(seed, "sim1/confounders");
  auto z_rng = Rng::substream(seed, "sim1/treatment");
  auto e_rng = Rng::substream(seed, "sim1/noise");
  Matrix u(n, 4), x(n, 4);
  Vector y(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector4d ui;
    for (int k = 0; k < 4; ++k) ui[k] = u_rng.normal();
    u.row(i) = ui.transpose();
    x.row(i) = sim1_covariates(ui).transpose();
    z[i] = z_rng.bernoulli(logistic(sim1_logit(ui))) ? 1.0 : 0.0;
    y[i] = sim1_outcome_mean(ui) + e_rng.normal();
  }
  return {Dataset(std::move(y), std::move(z), std::move(x), detail::x_names(4), 0.0), std::move(u), 0.0};
}

// --- heterogeneous effect with an optionally omitted confounder ---------------

inline double sim2_mean(const Eigen::Ref<const Eigen::RowVectorXd>& x, double z) {
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3];
  return z + 2.0 * z * x1 + x1 + x2 + x3 + x4 + 0.25 * x1 * x1 + 0.75 * x2 * x4 + 0.75 * x3 * x4;
}

inline double sim2_logit(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return 0.3 * x[0] + 0.9 * x[1] - 1.25 * x[2] + 1.5 * x[3];
}

inline GeneratedData gen_sim2(Eigen::Index n, Eigen::Index q, bool omit_x3, std::uint64_t seed) {
  detail::require_n(n);
  if (q < 4) throw ConfigError("sim2 needs q >= 4, got " + std::to_string(q));
  auto x_rng = Rng::substream(seed, "sim2/covariates");
  auto z_rng = Rng::substream(seed, "sim2/treatment");
  auto e_rng = Rng::substream(seed, "sim2/noise");
  Matrix x(n, q);
  Vector y(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < q; ++k) {
      const double mean = k < 2 ? 1.0 : (k < 4 ? -1.0 : 0.0);
      x(i, k) = x_rng.normal(mean, 1.0);
    }
    z[i] = z_rng.bernoulli(logistic(sim2_logit(x.row(i)))) ? 1.0 : 0.0;
    y[i] = sim2_mean(x.row(i), z[i]) + e_rng.normal();
  }
  if (!omit_x3)
    return {Dataset(std::move(y), std::move(z), std::move(x), detail::x_names(q), 3.0), std::nullopt, 3.0};
  Matrix hidden = x.col(2);
  Matrix visible(n, q - 1);
  visible << x.leftCols(2), x.rightCols(q - 3);
  return {Dataset(std::move(y), std::move(z), std::move(visible), detail::x_names(q, 2), 3.0), std::move(hidden),
          3.0};
}

// --- correct / misspecified nuisance models -----------------------------------

inline const double kHalfNormalScale = std::sqrt(1.0 - 2.0 / std::numbers::pi);

inline double sim3_u1(double x1) { return std::abs(x1) / kHalfNormalScale; }

// Covariate sets of the three candidate models. M1 and M2 use one set for
// both nuisances; M3's sets depend on the scenario.
struct Sim3Features {
  int scenario;
  Matrix m1;  // exp(X1), X2, X3, X4
  Matrix m2;  // X1^3, X2, X3, X4
  Matrix m3_propensity;
  Matrix m3_outcome;
  std::vector<std::string> m3_propensity_names;
  std::vector<std::string> m3_outcome_names;
};

struct Sim3Data {
  GeneratedData generated;
  Sim3Features features;
};

inline Sim3Features sim3_features(const Matrix& x, int scenario) {
  if (scenario < 1 || scenario > 4) throw ConfigError("sim3 scenario must be 1..4, got " + std::to_string(scenario));
  const auto n = x.rows();
  Vector u1(n);
  for (Eigen::Index i = 0; i < n; ++i) u1[i] = sim3_u1(x(i, 0));
  Sim3Features f;
  f.scenario = scenario;
  f.m1.resize(n, 4);
  f.m1 << x.col(0).array().exp().matrix(), x.col(1), x.col(2), x.col(3);
  f.m2.resize(n, 4);
  f.m2 << x.col(0).array().cube().matrix(), x.col(1), x.col(2), x.col(3);

  auto cols = [&](std::initializer_list<int> which, std::vector<std::string>& names) {
    Matrix m(n, static_cast<Eigen::Index>(which.size()));
    Eigen::Index c = 0;
    names.clear();
    for (int k : which) {
      m.col(c++) = k == 0 ? u1 : x.col(k - 1);
      names.push_back(k == 0 ? "u1" : "X" + std::to_string(k));
    }
    return m;
  };
  // column code: 0 = u1, k = X_k
  switch (scenario) {
    case 1:
      f.m3_propensity = cols({0, 2, 3, 4}, f.m3_propensity_names);
      f.m3_outcome = cols({0, 2, 3, 4}, f.m3_outcome_names);
      break;
    case 2:
      f.m3_propensity = cols({0, 2, 3}, f.m3_propensity_names);
      f.m3_outcome = cols({1, 2, 4}, f.m3_outcome_names);
      break;
    case 3:
      f.m3_propensity = cols({1, 2, 3}, f.m3_propensity_names);
      f.m3_outcome = cols({0, 2, 4}, f.m3_outcome_names);
      break;
    default:
      f.m3_propensity = cols({1, 2, 3}, f.m3_propensity_names);
      f.m3_outcome = cols({1, 2, 3, 4}, f.m3_outcome_names);
      break;
  }
  return f;
}

inline double sim3_logit(double u1, double x2, double x3) { return 0.4 * u1 + 0.4 * x2 + 0.8 * x3; }
inline double sim3_mean(double z, double u1, double x2, double x4) { return z - u1 - x2 - x4; }

inline Sim3Data gen_sim3(Eigen::Index n, int scenario, std::uint64_t seed) {
  detail::require_n(n);
  if (scenario < 1 || scenario > 4) throw ConfigError("sim3 scenario must be 1..4, got " + std::to_string(scenario));
  auto x_rng = Rng::substream(seed, "sim3/covariates");
  auto z_rng = Rng::substream(seed, "sim3/treatment");
  auto e_rng = Rng::substream(seed, "sim3/noise");
  Matrix x(n, 4), u(n, 1);
  Vector y(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) x(i, k) = x_rng.normal();
    const double u1 = sim3_u1(x(i, 0));
    u(i, 0) = u1;
    z[i] = z_rng.bernoulli(logistic(sim3_logit(u1, x(i, 1), x(i, 2)))) ? 1.0 : 0.0;
    y[i] = sim3_mean(z[i], u1, x(i, 1), x(i, 3)) + e_rng.normal();
  }
  auto features = sim3_features(x, scenario);
  return {{Dataset(std::move(y), std::move(z), std::move(x), detail::x_names(4), 1.0), std::move(u), 1.0},
          std::move(features)};
}

// --- subgroup-switching design -------------------------------------------------

// x holds (X1, ..., Xq) with X4 in {0,1} and X5 in {1,2,3}.
inline double sim4_tau(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return 1.0 + 2.0 * x[1] * x[4] + x[2] * x[2] / 2.0;
}

inline double sim4_mu0(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double x3 = x[2];
  switch (static_cast<int>(x[4])) {
    case 1: return -7.0 + 6.0 * x3;
    case 2: return 2.0 + 2.0 * x3 * x3;
    default: return 2.0 + 2.0 * std::sin(3.0 * x3);
  }
}

inline double sim4_logit(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3];
  switch (static_cast<int>(x[4])) {
    case 1: return -0.5 + 0.3 * x1 + 0.5 * x2 * x4 + 0.6 * x3;
    case 2: return -0.5 + 0.3 * x1 * x1 + 0.5 * x2 * x4 + 0.6 * x3 * x3;
    default: return -0.5 + 0.3 * std::exp(x1) + 0.5 * x2 * x4 + 0.6 * std::abs(x3);
  }
}

// E[1 + 2 X2 X5 + X3^2 / 2] with X2 independent of X5, E[X2] = 0, E[X3^2] = 1.
inline constexpr double kSim4TrueAte = 1.5;

namespace detail {
inline Matrix sim4_covariates(Eigen::Index n, Eigen::Index q, Rng& rng) {
  const double p4 = rng.uniform();
  std::vector<double> p5{rng.uniform(), rng.uniform(), rng.uniform()};
  Matrix x(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < q; ++k) {
      if (k == 3) x(i, k) = rng.bernoulli(p4) ? 1.0 : 0.0;
      else if (k == 4) x(i, k) = static_cast<double>(rng.categorical(p5) + 1);
      else x(i, k) = rng.normal();
    }
  }
  return x;
}
}  // namespace detail

inline GeneratedData gen_sim4(Eigen::Index n, Eigen::Index q, std::uint64_t seed) {
  detail::require_n(n);
  if (q < 5) throw ConfigError("sim4 needs q >= 5, got " + std::to_string(q));
  auto x_rng = Rng::substream(seed, "sim4/covariates");
  auto z_rng = Rng::substream(seed, "sim4/treatment");
  auto e_rng = Rng::substream(seed, "sim4/noise");
  Matrix x = detail::sim4_covariates(n, q, x_rng);
  Vector y(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    z[i] = z_rng.bernoulli(logistic(sim4_logit(x.row(i)))) ? 1.0 : 0.0;
    y[i] = sim4_mu0(x.row(i)) + z[i] * sim4_tau(x.row(i)) + e_rng.normal();
  }
  return {Dataset(std::move(y), std::move(z), std::move(x), detail::x_names(q), kSim4TrueAte), std::nullopt,
          kSim4TrueAte};
}

// Monte Carlo estimate of the population ATE of the subgroup-switching design,
// redrawing the mixing proportions in blocks so their randomness averages out.
inline double sim4_monte_carlo_ate(std::size_t draws, std::uint64_t seed) {
  auto rng = Rng::substream(seed, "sim4/ate-check");
  const Eigen::Index block = 1000;
  double total = 0.0;
  std::size_t done = 0;
  while (done < draws) {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(block, draws - done));
    Matrix x = detail::sim4_covariates(m, 5, rng);
    for (Eigen::Index i = 0; i < m; ++i) total += sim4_tau(x.row(i));
    done += static_cast<std::size_t>(m);
  }
  return total / static_cast<double>(draws);
}

}  // namespace brsdr::dgp
