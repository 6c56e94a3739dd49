#pragma once

// Exact PG(1, c) sampler: Devroye's alternating-series accept/reject scheme on
// the exponentially tilted Jacobi distribution J*(1, c/2), with PG = J* / 4.
// The proposal mixes a truncated exponential (right of t = 0.64) and a
// truncated inverse Gaussian (left of t).

#include <cmath>
#include <numbers>

#include "brsdr/error.hpp"
#include "brsdr/rng.hpp"

namespace brsdr {

namespace pg_detail {

inline constexpr double kTrunc = 0.64;
inline constexpr double kPi = std::numbers::pi;

inline double log_normal_cdf(double x) { return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2)); }

// n-th coefficient of the alternating series for the J*(1) density.
inline double series_coef(int n, double x) {
  const double k = (n + 0.5) * kPi;
  if (x > kTrunc) return k * std::exp(-0.5 * k * k * x);
  if (x <= 0.0) return 0.0;
  const double e = -1.5 * (std::log(0.5 * kPi) + std::log(x)) + std::log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x;
  return std::exp(e);
}

// Probability of drawing from the exponential piece of the proposal.
inline double exponential_mass(double z) {
  const double t = kTrunc;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
  const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);
  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + log_normal_cdf(b);
  const double xa = x0 + z + log_normal_cdf(a);
  const double q_over_p = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + q_over_p);
}

// Inverse Gaussian(mu = 1/z, lambda = 1) truncated to (0, t).
inline double truncated_inverse_gaussian(double z, Rng& rng) {
  const double t = kTrunc;
  double x = t + 1.0;
  if (z < 1.0 / t) {
    // mean beyond the truncation point: sample via a scaled inverse chi-square
    double alpha = 0.0;
    while (rng.uniform() > alpha) {
      double e1, e2;
      do {
        e1 = rng.exponential();
        e2 = rng.exponential();
      } while (e1 * e1 > 2.0 * e2 / t);
      x = 1.0 + e1 * t;
      x = t / (x * x);
      alpha = std::exp(-0.5 * z * z * x);
    }
  } else {
    const double mu = 1.0 / z;
    while (x > t) {
      double y = rng.normal();
      y *= y;
      const double half_mu = 0.5 * mu;
      const double mu_y = mu * y;
      x = mu + half_mu * mu_y - half_mu * std::sqrt(4.0 * mu_y + mu_y * mu_y);
      if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
    }
  }
  return x;
}

}  // namespace pg_detail

inline double sample_polya_gamma(double c, Rng& rng) {
  using namespace pg_detail;
  const double z = 0.5 * std::abs(c);
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double p_exp = exponential_mass(z);
  for (int proposals = 0; proposals < 1000; ++proposals) {
    const double x = rng.uniform() < p_exp ? kTrunc + rng.exponential() / fz : truncated_inverse_gaussian(z, rng);
    double s = series_coef(0, x);
    const double y = rng.uniform() * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= series_coef(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += series_coef(n, x);
        if (y > s) break;
      }
      if (n > 10000) break;
    }
  }
  throw NumericalError("Polya-Gamma sampler exceeded 1000 proposals for c = " + std::to_string(c));
}

// E[omega] for omega ~ PG(1, c).
inline double polya_gamma_mean(double c) {
  if (std::abs(c) < 1e-6) return 0.25 - c * c / 48.0;
  return std::tanh(0.5 * c) / (2.0 * c);
}

}  // namespace brsdr
