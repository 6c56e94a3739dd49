#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "brsdr/dataset.hpp"
#include "brsdr/rng.hpp"

using namespace brsdr;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p.string();
}

Dataset tiny() {
  Vector y(4), z(4);
  y << 1, 2, 3, 4;
  z << 0, 1, 0, 1;
  Matrix x(4, 1);
  x << 0, 1, 2, 3;
  return Dataset(y, z, x, {"x"});
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SubstreamsAreKeyedByLabel) {
  auto a = Rng::substream(3, "alpha");
  auto b = Rng::substream(3, "beta");
  auto a2 = Rng::substream(3, "alpha");
  const auto x = a.next_u64();
  EXPECT_NE(x, b.next_u64());
  EXPECT_EQ(x, a2.next_u64());
}

TEST(Rng, UniformStaysOpen) {
  Rng r(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, GammaMeanBelowAndAboveOne) {
  Rng r(5);
  for (double shape : {0.3, 2.5}) {
    const int n = 200000;
    double s = 0;
    for (int i = 0; i < n; ++i) s += r.gamma(shape, 2.0);
    // mean k*theta, variance k*theta^2
    EXPECT_NEAR(s / n, shape * 2.0, 4.0 * std::sqrt(shape * 4.0 / n));
  }
}

TEST(Rng, InverseGammaMean) {
  Rng r(9);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.inverse_gamma(3.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, 1.0, 3.0 * se);
}

TEST(Rng, FlatDirichletOnSimplex) {
  Rng r(2);
  const auto w = r.flat_dirichlet(5);
  double total = 0;
  for (double v : w) {
    EXPECT_GT(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.flat_dirichlet(1)[0], 1.0);
}

TEST(Rng, RejectsBadGammaArguments) {
  Rng r(1);
  EXPECT_THROW(r.gamma(0.0), ContractError);
  EXPECT_THROW(r.gamma(1.0, -1.0), ContractError);
}

TEST(Dataset, RejectsNonBinaryTreatment) {
  Vector y(3), z(3);
  y << 1, 2, 3;
  z << 0, 1, 2;
  EXPECT_THROW(Dataset(y, z, Matrix::Zero(3, 1), {"x"}), ValidationError);
}

TEST(Dataset, RejectsEmptyArm) {
  Vector y(3), z(3);
  y << 1, 2, 3;
  z << 1, 1, 1;
  EXPECT_THROW(Dataset(y, z, Matrix::Zero(3, 1), {"x"}), ValidationError);
}

TEST(Dataset, RejectsNonFinite) {
  Vector y(3), z(3);
  y << 1, NAN, 3;
  z << 0, 1, 0;
  EXPECT_THROW(Dataset(y, z, Matrix::Zero(3, 1), {"x"}), ValidationError);
}

TEST(Dataset, Accessors) {
  const auto d = tiny();
  EXPECT_EQ(d.size(), 4);
  EXPECT_EQ(d.num_covariates(), 1);
  EXPECT_EQ(d.num_treated(), 2);
  EXPECT_TRUE(d.treated(1));
  EXPECT_FALSE(d.treated(0));
}

TEST(Standardize, SymmetricColumn) {
  Matrix x(3, 1);
  x << 1, 2, 3;
  const auto s = standardize(x);
  EXPECT_DOUBLE_EQ(s.centers[0], 2.0);
  EXPECT_DOUBLE_EQ(s.scales[0], 1.0);
  EXPECT_DOUBLE_EQ(s.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.values(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.values(2, 0), 1.0);
}

TEST(Standardize, ConstantColumn) {
  Matrix x = Matrix::Constant(3, 1, 5.0);
  const auto s = standardize(x);
  EXPECT_DOUBLE_EQ(s.scales[0], 1.0);
  EXPECT_EQ(s.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Standardize, TwoPointsUseSampleSd) {
  Matrix x(2, 1);
  x << 0, 10;
  const auto s = standardize(x);
  EXPECT_NEAR(s.scales[0], 10.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(s.values(0, 0), -1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(s.values(1, 0), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Standardize, RoundTrip) {
  Rng r(4);
  Matrix x(20, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = r.normal(3.0, 7.0);
  EXPECT_LT((standardize(x).destandardize() - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Clip, Bounds) {
  EXPECT_DOUBLE_EQ(clip_propensity(0.0), 0.01);
  EXPECT_DOUBLE_EQ(clip_propensity(1.0), 0.99);
  EXPECT_DOUBLE_EQ(clip_propensity(0.3), 0.3);
}

TEST(LoadTable, ThreeRows) {
  const auto path = write_temp("brsdr_three.csv", "bweight,mbsmoke,mage\n3000,0,25\n2800,1,30\n3100,0,28\n");
  const auto d = load_table(path, {"bweight", "mbsmoke", {"mage"}});
  EXPECT_EQ(d.size(), 3);
  EXPECT_EQ(d.num_covariates(), 1);
  EXPECT_DOUBLE_EQ(d.outcomes()[1], 2800.0);
  EXPECT_DOUBLE_EQ(d.covariates()(2, 0), 28.0);
}

TEST(LoadTable, TabDelimitedAndColumnOrder) {
  const auto path = write_temp("brsdr_tab.tsv", "mage\tbweight\tmbsmoke\n25\t3000\t0\n30\t2800\t1\n");
  const auto d = load_table(path, {"bweight", "mbsmoke", {"mage"}});
  EXPECT_DOUBLE_EQ(d.outcomes()[0], 3000.0);
  EXPECT_DOUBLE_EQ(d.covariates()(1, 0), 30.0);
}

TEST(LoadTable, TreatmentTwoIsRejected) {
  const auto path = write_temp("brsdr_bad.csv", "bweight,mbsmoke,mage\n3000,0,25\n2800,2,30\n3100,1,28\n");
  EXPECT_THROW(load_table(path, {"bweight", "mbsmoke", {"mage"}}), ValidationError);
}

TEST(LoadTable, MissingColumn) {
  const auto path = write_temp("brsdr_missing.csv", "bweight,mbsmoke\n3000,0\n2800,1\n");
  EXPECT_THROW(load_table(path, {"bweight", "mbsmoke", {"mage"}}), Error);
}

TEST(LoadTable, MissingFile) {
  EXPECT_THROW(load_table("/nonexistent/brsdr.csv", {"y", "z", {}}), IoError);
}
