#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "brsdr/dgp.hpp"

using namespace brsdr;

TEST(Sim1, OriginUnit) {
  const Eigen::Vector4d x = dgp::sim1_covariates(Eigen::Vector4d::Zero());
  EXPECT_DOUBLE_EQ(x[0], 1.0);
  EXPECT_DOUBLE_EQ(x[1], 10.0);
  EXPECT_NEAR(x[2], 0.216, 1e-15);
  EXPECT_DOUBLE_EQ(x[3], 400.0);
  EXPECT_DOUBLE_EQ(dgp::sim1_outcome_mean(Eigen::Vector4d::Zero()), 210.0);
}

TEST(Sim1, OutcomeMeanNear210) {
  const auto g = dgp::gen_sim1(1000, 17);
  EXPECT_NEAR(g.data.outcomes().mean(), 210.0, 2.2 * 1.5);
  EXPECT_EQ(g.true_ate, 0.0);
  ASSERT_TRUE(g.hidden.has_value());
  EXPECT_EQ(g.hidden->cols(), 4);
}

TEST(Sim1, SameSeedSameData) {
  const auto a = dgp::gen_sim1(50, 3);
  const auto b = dgp::gen_sim1(50, 3);
  EXPECT_EQ(a.data.outcomes(), b.data.outcomes());
  EXPECT_EQ(a.data.covariates(), b.data.covariates());
  EXPECT_NE(a.data.outcomes(), dgp::gen_sim1(50, 4).data.outcomes());
}

TEST(Sim2, HandSubstitution) {
  Eigen::RowVectorXd x(6);
  x << 1, 1, -1, -1, 0, 0;
  EXPECT_DOUBLE_EQ(dgp::sim2_mean(x, 1.0), 3.25);
}

TEST(Sim2, OmittedColumn) {
  const auto full = dgp::gen_sim2(100, 6, false, 9);
  const auto omit = dgp::gen_sim2(100, 6, true, 9);
  EXPECT_EQ(full.data.num_covariates(), 6);
  EXPECT_EQ(omit.data.num_covariates(), 5);
  ASSERT_TRUE(omit.hidden.has_value());
  EXPECT_EQ(omit.hidden->col(0), full.data.covariates().col(2));
  EXPECT_EQ(omit.data.covariates().col(2), full.data.covariates().col(3));
  EXPECT_EQ(omit.data.column_names()[2], "X4");
  EXPECT_EQ(full.true_ate, 3.0);
}

TEST(Sim2, NeedsFourColumns) { EXPECT_THROW(dgp::gen_sim2(100, 3, false, 1), ConfigError); }

TEST(Sim3, HalfNormalFeature) {
  EXPECT_EQ(dgp::sim3_u1(0.0), 0.0);
  const auto s = dgp::gen_sim3(100000, 1, 4);
  const double expected = std::sqrt(2.0 / std::numbers::pi) / std::sqrt(1.0 - 2.0 / std::numbers::pi);
  const Vector u = s.generated.hidden->col(0);
  const double mean = u.mean();
  // Var(U1) = 1 by construction of the scale
  EXPECT_NEAR(mean, expected, 3.0 / std::sqrt(100000.0));
  EXPECT_EQ(s.generated.true_ate, 1.0);
}

TEST(Sim3, ScenarioColumnSets) {
  const auto s2 = dgp::gen_sim3(20, 2, 1);
  EXPECT_EQ(s2.features.m3_propensity_names, (std::vector<std::string>{"u1", "X2", "X3"}));
  EXPECT_EQ(s2.features.m3_outcome_names, (std::vector<std::string>{"X1", "X2", "X4"}));
  const auto s4 = dgp::gen_sim3(20, 4, 1);
  EXPECT_EQ(s4.features.m3_outcome_names, (std::vector<std::string>{"X1", "X2", "X3", "X4"}));
  EXPECT_THROW(dgp::gen_sim3(20, 5, 1), ConfigError);
}

TEST(Sim4, EffectAtOrigin) {
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(5);
  x[4] = 2;
  EXPECT_DOUBLE_EQ(dgp::sim4_tau(x), 1.0);
}

TEST(Sim4, FirstBranch) {
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(5);
  x[2] = 0.5;
  x[4] = 1;
  EXPECT_DOUBLE_EQ(dgp::sim4_mu0(x), -4.0);
}

TEST(Sim4, MonteCarloAte) { EXPECT_NEAR(dgp::sim4_monte_carlo_ate(1000000, 1), 1.5, 0.01); }

TEST(Sim4, DiscreteColumns) {
  const auto g = dgp::gen_sim4(500, 6, 2);
  for (Eigen::Index i = 0; i < 500; ++i) {
    const double x4 = g.data.covariates()(i, 3), x5 = g.data.covariates()(i, 4);
    EXPECT_TRUE(x4 == 0.0 || x4 == 1.0);
    EXPECT_TRUE(x5 == 1.0 || x5 == 2.0 || x5 == 3.0);
  }
}

TEST(Dgp, SmallN) { EXPECT_THROW(dgp::gen_sim1(5, 1), ConfigError); }
