#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "brsdr/polya_gamma.hpp"
#include "brsdr/validation.hpp"

using namespace brsdr;

namespace {

struct Moments {
  double mean, se;
};

Moments sample(double c, int n, std::uint64_t seed) {
  Rng r(seed);
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double w = sample_polya_gamma(c, r);
    s += w;
    s2 += w * w;
  }
  const double m = s / n;
  return {m, std::sqrt((s2 / n - m * m) / n)};
}

}  // namespace

TEST(PolyaGamma, AnalyticMean) {
  EXPECT_DOUBLE_EQ(polya_gamma_mean(0.0), 0.25);
  EXPECT_NEAR(polya_gamma_mean(2.0), std::tanh(1.0) / 4.0, 1e-15);
  EXPECT_NEAR(polya_gamma_mean(1e-9), 0.25, 1e-12);
}

TEST(PolyaGamma, MeanAtZero) {
  const auto m = sample(0.0, 100000, 1);
  EXPECT_NEAR(m.mean, 0.25, 3.0 * m.se);
}

TEST(PolyaGamma, MeanAtTwo) {
  const auto m = sample(2.0, 100000, 2);
  EXPECT_NEAR(m.mean, 0.19037, 3.0 * m.se);
}

TEST(PolyaGamma, VarianceAtZero) {
  // Var PG(1, 0) = 1/24
  Rng r(3);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double w = sample_polya_gamma(0.0, r);
    s += w;
    s2 += w * w;
  }
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 24.0, 0.002);
}

TEST(PolyaGamma, LargeArgument) {
  const auto m = sample(40.0, 20000, 4);
  EXPECT_NEAR(m.mean, polya_gamma_mean(40.0), 4.0 * m.se);
}

TEST(PolyaGamma, SymmetricInC) {
  Rng a(5), b(6);
  std::vector<double> x, y;
  for (int i = 0; i < 10000; ++i) {
    x.push_back(sample_polya_gamma(2.0, a));
    y.push_back(sample_polya_gamma(-2.0, b));
  }
  EXPECT_GT(validation::ks_two_sample(x, y).p_value, 0.01);
}

TEST(PolyaGamma, AlwaysPositive) {
  Rng r(7);
  for (double c : {0.0, 0.5, 3.0, 12.0})
    for (int i = 0; i < 1000; ++i) EXPECT_GT(sample_polya_gamma(c, r), 0.0);
}
