#pragma once

// Oracle and invariant checks behind the `validate` subcommand: dense
// Gaussian comparison for the NNGP factorization, Polya-Gamma moments,
// Geweke forward / successive-conditional tests for both samplers, and the
// Bayesian-bootstrap mean identity.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "brsdr/dr.hpp"
#include "brsdr/nngp.hpp"
#include "brsdr/polya_gamma.hpp"
#include "brsdr/synthesis.hpp"

namespace brsdr::validation {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

inline CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{name, false, "", 0.0};
  try {
    auto [ok, detail] = body();
    r.pass = ok;
    r.detail = std::move(detail);
  } catch (const std::exception& e) {
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// --- statistics helpers ------------------------------------------------------

// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
struct KsResult {
  double statistic;
  double p_value;
};

inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Variance of the mean of an autocorrelated series by non-overlapping batch means.
inline double batch_means_var(const std::vector<double>& v, int batches = 50) {
  const std::size_t size = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < size; ++k) s += v[static_cast<std::size_t>(b) * size + k];
    means.push_back(s / static_cast<double>(size));
  }
  return var_of(means) / batches;
}

// --- NNGP --------------------------------------------------------------------

inline Matrix dense_correlation(const Matrix& xs, double psi) {
  const auto n = xs.rows();
  Matrix c(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) c(a, b) = nngp::kernel_corr((xs.row(a) - xs.row(b)).norm(), psi);
  return c;
}

inline double dense_gaussian_logdensity(const Vector& x, double mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("dense covariance not positive definite");
  const Vector r = x.array() - mean;
  const Vector w = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * nngp::kLog2Pi + logdet + w.squaredNorm());
}

// With m = n - 1 the NNGP is the full GP, so its log-density must equal the
// dense multivariate normal one.
inline CheckResult check_nngp_dense(std::uint64_t seed = 11) {
  return timed("nngp log-density equals dense Gaussian (m = n-1)", [&] {
    auto rng = Rng::substream(seed, "validate/nngp");
    double worst = 0.0;
    for (int n : {5, 20, 50}) {
      Matrix xs(n, 2);
      for (int i = 0; i < n; ++i) xs.row(i) << rng.normal(), rng.normal();
      const auto g = nngp::build_graph(xs, n - 1);
      for (int t = 0; t < 20; ++t) {
        const double psi = 0.2 + 2.0 * rng.uniform();
        const double tau2 = 0.1 + 3.0 * rng.uniform();
        const double mean = rng.normal();
        Vector beta(n);
        for (int i = 0; i < n; ++i) beta[i] = mean + std::sqrt(tau2) * rng.normal();
        const auto terms = nngp::conditional_terms(g, psi);
        const double sparse = nngp::nngp_logdensity(beta, mean, tau2, terms, g);
        const double dense = dense_gaussian_logdensity(beta, mean, tau2 * dense_correlation(xs, psi));
        worst = std::max(worst, std::abs(sparse - dense));
      }
    }
    return std::pair{worst < 1e-8, "max |difference| = " + num(worst, 3) + " over 60 triples"};
  });
}

// Empty and one-neighbor conditional terms against their closed forms.
inline CheckResult check_conditional_closed_forms() {
  return timed("conditional terms closed forms", [] {
    Matrix xs(3, 1);
    xs << 0.0, 0.7, 1.9;
    const auto g = nngp::build_graph(xs, 1);
    double worst = 0.0;
    for (double psi : {0.3, 1.0, 2.5}) {
      const auto t = nngp::conditional_terms(g, psi);
      const int first = g.ordering[0];
      worst = std::max({worst, std::abs(t.F[first] - 1.0), static_cast<double>(t.B[static_cast<std::size_t>(first)].size())});
      for (int p = 1; p < 3; ++p) {
        const int i = g.ordering[static_cast<std::size_t>(p)];
        const double d = std::abs(xs(i, 0) - xs(g.neighbors[static_cast<std::size_t>(i)][0], 0));
        worst = std::max(worst, std::abs(t.B[static_cast<std::size_t>(i)][0] - std::exp(-d / psi)));
        worst = std::max(worst, std::abs(t.F[i] - (1.0 - std::exp(-2.0 * d / psi))));
      }
    }
    return std::pair{worst < 1e-12, "max |difference| = " + num(worst, 3)};
  });
}

// --- Polya-Gamma ---------------------------------------------------------------

inline CheckResult check_pg_moments(std::uint64_t seed = 12, int draws = 100000) {
  return timed("Polya-Gamma means", [&] {
    std::string detail;
    bool ok = true;
    for (double c : {0.0, 0.1, 1.0, 2.0, 5.0}) {
      auto rng = Rng::substream(seed, "validate/pg/" + std::to_string(c));
      std::vector<double> v(static_cast<std::size_t>(draws));
      for (auto& x : v) x = sample_polya_gamma(c, rng);
      const double m = mean_of(v);
      const double se = std::sqrt(var_of(v) / draws);
      const double expected = c == 0.0 ? 0.25 : std::tanh(c / 2.0) / (2.0 * c);
      const double z = (m - expected) / se;
      ok = ok && std::abs(z) < 4.0;
      detail += "c=" + num(c, 2) + " z=" + num(z, 3) + "; ";
    }
    return std::pair{ok, detail};
  });
}

inline CheckResult check_pg_symmetry(std::uint64_t seed = 13, int draws = 10000) {
  return timed("Polya-Gamma symmetry in c", [&] {
    auto r1 = Rng::substream(seed, "validate/pg/plus");
    auto r2 = Rng::substream(seed, "validate/pg/minus");
    std::vector<double> a(static_cast<std::size_t>(draws)), b(static_cast<std::size_t>(draws));
    for (auto& x : a) x = sample_polya_gamma(2.0, r1);
    for (auto& x : b) x = sample_polya_gamma(-2.0, r2);
    const auto ks = ks_two_sample(a, b);
    return std::pair{ks.p_value > 0.01, "KS D = " + num(ks.statistic) + ", p = " + num(ks.p_value)};
  });
}

// --- Geweke --------------------------------------------------------------------

struct GewekeStat {
  std::string name;
  double z;
};

struct GewekeResult {
  std::vector<GewekeStat> stats;
  double max_abs_z() const {
    double m = 0.0;
    for (const auto& s : stats) m = std::max(m, std::abs(s.z));
    return m;
  }
};

struct GewekeSetup {
  int n = 20;
  int J = 2;
  int m = 5;
  int sweeps = 10000;
  double prior_shape = 12.0;  // IG(6, 6): moments up to order 5 exist
  double prior_scale = 12.0;
  std::uint64_t seed = 21;
};

// Compares E[g] and E[g^2] for sigma^2, every tau_j^2 and beta_1 at three probe
// units between independent prior-predictive draws and a chain alternating a
// Gibbs sweep with a fresh response given the current parameters.
inline GewekeResult geweke_test(Likelihood lik, const GewekeSetup& s = {}) {
  const bool gaussian = lik == Likelihood::Gaussian;
  auto setup_rng = Rng::substream(s.seed, "geweke/setup");
  Matrix xs(s.n, 2);
  for (int i = 0; i < s.n; ++i) xs.row(i) << setup_rng.normal(), setup_rng.normal();
  const auto graph = nngp::build_graph(xs, s.m);
  const auto bounds = nngp::psi_bounds(xs);
  AgentPredictive agents{gaussian ? Target::OutcomeTreated : Target::Propensity, Matrix(s.n, s.J), Matrix(s.n, s.J), {}};
  for (int j = 0; j < s.J; ++j) {
    agents.model_labels.push_back("A" + std::to_string(j + 1));
    for (int i = 0; i < s.n; ++i) {
      agents.means(i, j) = gaussian ? 0.5 * (j + 1) + 0.3 * xs(i, j % 2) : 0.3 + 0.2 * j + 0.05 * xs(i, 0);
      agents.variances(i, j) = gaussian ? 0.5 : 0.05;
    }
  }
  SynthesisConfig cfg;
  cfg.m = s.m;
  cfg.tau_shape = cfg.sigma_shape = s.prior_shape;
  cfg.tau_scale = cfg.sigma_scale = s.prior_scale;
  cfg.adapt_step = false;
  cfg.mh_step = 0.5;
  cfg.seed = derive_seed(s.seed, "geweke/chain");
  const Vector beta_bar = cfg.prior_means(s.J);
  const std::vector<int> probes{0, s.n / 3, 2 * s.n / 3};

  struct Draw {
    Matrix beta, f;
    Vector tau2, psi;
    double sigma2;
  };
  auto prior_draw = [&](Rng& rng) {
    Draw d;
    d.tau2.resize(s.J + 1);
    d.psi.resize(s.J + 1);
    d.beta.resize(s.J + 1, s.n);
    for (int j = 0; j <= s.J; ++j) {
      d.tau2[j] = rng.inverse_gamma(s.prior_shape / 2.0, s.prior_scale / 2.0);
      d.psi[j] = bounds.first + (bounds.second - bounds.first) * rng.uniform();
      const auto t = nngp::conditional_terms(graph, d.psi[j]);
      d.beta.row(j) = nngp::sample_prior(graph, t, beta_bar[j], d.tau2[j], rng).transpose();
    }
    d.f.resize(s.J, s.n);
    for (int j = 0; j < s.J; ++j)
      for (int i = 0; i < s.n; ++i) d.f(j, i) = agents.means(i, j) + std::sqrt(agents.variances(i, j)) * rng.normal();
    d.sigma2 = gaussian ? rng.inverse_gamma(s.prior_shape / 2.0, s.prior_scale / 2.0) : 1.0;
    return d;
  };
  auto eta_of = [&](const Matrix& beta, const Matrix& f, int i) {
    double e = beta(0, i);
    for (int j = 0; j < s.J; ++j) e += beta(j + 1, i) * f(j, i);
    return e;
  };
  auto respond = [&](const Matrix& beta, const Matrix& f, double sigma2, Rng& rng) {
    Vector r(s.n);
    for (int i = 0; i < s.n; ++i) {
      const double e = eta_of(beta, f, i);
      r[i] = gaussian ? e + std::sqrt(sigma2) * rng.normal() : (rng.bernoulli(dgp::logistic(e)) ? 1.0 : 0.0);
    }
    return r;
  };

  std::vector<std::string> names;
  if (gaussian) names.push_back("sigma2");
  for (int j = 0; j <= s.J; ++j) names.push_back("tau2[" + std::to_string(j) + "]");
  for (int p : probes) names.push_back("beta1[" + std::to_string(p) + "]");
  auto record = [&](std::vector<std::vector<double>>& out, const Matrix& beta, const Vector& tau2, double sigma2) {
    std::size_t k = 0;
    if (gaussian) out[k++].push_back(sigma2);
    for (int j = 0; j <= s.J; ++j) out[k++].push_back(tau2[j]);
    for (int p : probes) out[k++].push_back(beta(1, p));
  };

  std::vector<std::vector<double>> forward(names.size()), chain(names.size());
  auto frng = Rng::substream(s.seed, "geweke/forward");
  for (int t = 0; t < s.sweeps; ++t) {
    const auto d = prior_draw(frng);
    record(forward, d.beta, d.tau2, d.sigma2);
  }

  auto crng = Rng::substream(s.seed, "geweke/successive");
  const auto init = prior_draw(crng);
  Vector response = respond(init.beta, init.f, init.sigma2, crng);
  if (!gaussian) {
    // both classes are required at construction only
    response[0] = 0.0;
    response[1] = 1.0;
  }
  SynthesisSampler sampler(lik, response, std::vector<bool>(static_cast<std::size_t>(s.n), true), agents, graph, bounds,
                           cfg);
  sampler.set_beta(init.beta);
  sampler.set_f(init.f);
  sampler.set_tau2(init.tau2);
  sampler.set_psi(init.psi);
  sampler.set_sigma2(init.sigma2);
  sampler.set_response(respond(init.beta, init.f, init.sigma2, crng));
  if (!gaussian) {
    Vector w(s.n);
    for (int i = 0; i < s.n; ++i) w[i] = sample_polya_gamma(eta_of(init.beta, init.f, i), crng);
    sampler.set_omega(w);
  }
  for (int t = 0; t < s.sweeps; ++t) {
    sampler.sweep(t);
    record(chain, sampler.beta(), sampler.tau2(), sampler.sigma2());
    sampler.set_response(respond(sampler.beta(), sampler.f(), sampler.sigma2(), crng));
  }

  GewekeResult res;
  for (std::size_t k = 0; k < names.size(); ++k) {
    for (int power : {1, 2}) {
      std::vector<double> a = forward[k], b = chain[k];
      if (power == 2) {
        for (auto& x : a) x *= x;
        for (auto& x : b) x *= x;
      }
      const double se2 = var_of(a) / static_cast<double>(a.size()) + batch_means_var(b);
      res.stats.push_back({(power == 1 ? "E[" : "E[(") + names[k] + (power == 1 ? "]" : ")^2]"),
                           (mean_of(a) - mean_of(b)) / std::sqrt(se2)});
    }
  }
  return res;
}

inline CheckResult check_geweke(Likelihood lik, const GewekeSetup& s = {}) {
  const std::string label = lik == Likelihood::Gaussian ? "continuous" : "binary";
  return timed("Geweke test, " + label + " sampler", [&] {
    const auto r = geweke_test(lik, s);
    std::string detail = "max |z| = " + num(r.max_abs_z(), 3) + " over " + std::to_string(r.stats.size()) + " moments";
    for (const auto& st : r.stats)
      if (std::abs(st.z) >= 3.0) detail += "; " + st.name + " z=" + num(st.z, 3);
    return std::pair{r.max_abs_z() < 3.0, detail};
  });
}

// --- Bayesian bootstrap --------------------------------------------------------

inline CheckResult check_bootstrap_identity(std::uint64_t seed = 31, int draws = 100000) {
  return timed("Bayesian bootstrap mean identity", [&] {
    const auto g = dgp::gen_sim3(400, 1, seed).generated;
    const auto& d = g.data;
    auto rng = Rng::substream(seed, "validate/bootstrap/nuisance");
    Vector mu1(d.size()), mu0(d.size()), pi(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      mu1[i] = 1.0 + rng.normal();
      mu0[i] = rng.normal();
      pi[i] = 0.2 + 0.6 * rng.uniform();
    }
    const auto in = DrInputs::make(mu1, mu0, pi, d.outcomes(), d.treatments());
    const auto post = bootstrap_dr_posterior_fixed(in, draws, derive_seed(seed, "validate/bootstrap"));
    const double target = dr_point(in);
    const double se = post.sd / std::sqrt(static_cast<double>(draws));
    const double z = (post.point - target) / se;
    return std::pair{std::abs(z) < 3.0, "mean " + num(post.point, 6) + " vs equal-weight " + num(target, 6) +
                                            " (z = " + num(z, 3) + ")"};
  });
}

// --- suites --------------------------------------------------------------------

inline std::vector<CheckResult> run_suite(bool quick = false) {
  std::vector<CheckResult> out;
  out.push_back(check_nngp_dense());
  out.push_back(check_conditional_closed_forms());
  out.push_back(check_pg_moments(12, quick ? 20000 : 100000));
  out.push_back(check_pg_symmetry());
  GewekeSetup gs;
  if (quick) gs.sweeps = 3000;
  out.push_back(check_geweke(Likelihood::Gaussian, gs));
  out.push_back(check_geweke(Likelihood::Logistic, gs));
  out.push_back(check_bootstrap_identity(31, quick ? 20000 : 100000));
  return out;
}

}  // namespace brsdr::validation
