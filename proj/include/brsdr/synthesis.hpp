#pragma once

// Gibbs samplers for Bayesian regression synthesis.
//
//   continuous:  y_i   = beta_0(X_i) + sum_j beta_j(X_i) f_ji + eps_i,  eps_i ~ N(0, sigma^2)
//   binary:      z_i   ~ Bernoulli(logistic(eta_i)),  eta_i = beta_0(X_i) + sum_j beta_j(X_i) f_ji
//
// with f_ji ~ N(a_ji, b_ji) from agent j, beta_j(.) ~ NNGP(beta_bar_j, tau_j^2 C(.; psi_j)),
// sigma^2 ~ IG(d_s/2, x_s/2), tau_j^2 ~ IG(d_j/2, x_j/2), psi_j ~ U(c_lo, c_hi).
//
// Both samplers share one kernel for the coefficient block. Conditional on the
// Polya-Gamma variables, the binary likelihood is Gaussian in eta_i with
// precision omega_i and pseudo-response kappa_i / omega_i, so a unit's
// (J+1)-vector of coefficients has the same conjugate update as in the
// continuous model with 1/sigma^2 -> omega_i and y_i -> kappa_i / omega_i.
// Units outside the likelihood (the other treatment arm when synthesizing an
// outcome regression) carry zero precision and are driven by the prior only.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "brsdr/dataset.hpp"
#include "brsdr/nngp.hpp"
#include "brsdr/polya_gamma.hpp"
#include "brsdr/rng.hpp"

namespace brsdr {

inline constexpr int kMaxCoefficients = 16;

struct SynthesisConfig {
  int m = 10;
  int n_iter = 2000;
  int burn_in = 500;
  double tau_shape = 2.0;    // delta_j
  double tau_scale = 2.0;    // xi_j
  double sigma_shape = 2.0;  // delta_sigma
  double sigma_scale = 2.0;  // xi_sigma
  std::optional<Vector> beta_bar;                       // default (0, 1/J, ..., 1/J)
  std::optional<std::pair<double, double>> psi_bounds;  // default from the covariate scale
  double mh_step = 0.3;
  bool adapt_step = true;
  std::uint64_t seed = 1;
  bool keep_latent = false;  // store beta and f draws (memory heavy)
  std::optional<std::chrono::steady_clock::time_point> deadline;

  void validate(Eigen::Index num_agents) const {
    if (m < 1 || m > nngp::kMaxNeighbors)
      throw ConfigError("synthesis: m must be in [1, " + std::to_string(nngp::kMaxNeighbors) + "]");
    if (num_agents < 1 || num_agents + 1 > kMaxCoefficients)
      throw ConfigError("synthesis: number of agents must be in [1, " + std::to_string(kMaxCoefficients - 1) + "]");
    if (n_iter < 1 || burn_in < 0 || burn_in >= n_iter) throw ConfigError("synthesis: need 0 <= burn_in < n_iter");
    if (!(tau_shape > 0 && tau_scale > 0 && sigma_shape > 0 && sigma_scale > 0))
      throw ConfigError("synthesis: prior shapes and scales must be positive");
    if (!(mh_step > 0)) throw ConfigError("synthesis: mh_step must be positive");
    if (beta_bar) {
      if (beta_bar->size() != num_agents + 1) throw ConfigError("synthesis: beta_bar must have length J+1");
      if ((*beta_bar)[0] != 0.0 || std::abs(beta_bar->tail(num_agents).sum() - 1.0) > 1e-12)
        throw ConfigError("synthesis: beta_bar needs a zero intercept and agent weights summing to 1");
    }
    if (psi_bounds && !(psi_bounds->first > 0 && psi_bounds->second > psi_bounds->first))
      throw ConfigError("synthesis: psi bounds must satisfy 0 < lower < upper");
  }

  Vector prior_means(Eigen::Index num_agents) const {
    if (beta_bar) return *beta_bar;
    Vector b = Vector::Constant(num_agents + 1, 1.0 / static_cast<double>(num_agents));
    b[0] = 0.0;
    return b;
  }
};

struct SynthesisDraws {
  Eigen::Index num_agents = 0;
  Eigen::Index num_units = 0;
  std::vector<Matrix> beta;  // per draw, (J+1) x n; empty unless keep_latent
  std::vector<Matrix> f;     // per draw, J x n; empty unless keep_latent
  Vector sigma2;             // per draw; empty for the binary sampler
  Matrix tau2;               // draws x (J+1)
  Matrix psi;                // draws x (J+1)
  Matrix fitted;             // draws x n: eta_i = beta_0i + sum_j beta_ji f_ji
  Vector acceptance_rates;   // per process, post burn-in
  Vector mh_steps;           // frozen proposal scales
  std::pair<double, double> psi_bounds;

  Eigen::Index num_draws() const { return fitted.rows(); }
};

enum class Likelihood { Gaussian, Logistic };

// One chain over one nuisance function. Owns all mutable state.
class SynthesisSampler {
 public:
  SynthesisSampler(Likelihood lik, Vector response, std::vector<bool> in_likelihood, const AgentPredictive& agents,
                   const nngp::NeighborGraph& graph, std::pair<double, double> psi_bounds, SynthesisConfig config)
      : lik_(lik),
        response_(std::move(response)),
        in_lik_(std::move(in_likelihood)),
        a_(agents.means.transpose()),
        b_(agents.variances.transpose()),
        graph_(graph),
        cfg_(std::move(config)),
        psi_bounds_(psi_bounds),
        rng_(Rng::substream(cfg_.seed, lik == Likelihood::Gaussian ? "synthesis/gaussian" : "synthesis/logistic")) {
    J_ = agents.num_agents();
    n_ = agents.num_units();
    cfg_.validate(J_);
    if (response_.size() != n_ || static_cast<Eigen::Index>(in_lik_.size()) != n_ || graph.size() != n_)
      throw ContractError("synthesis: response, mask, agents and graph disagree on n");
    n_obs_ = 0;
    for (bool b : in_lik_) n_obs_ += b;
    if (lik_ == Likelihood::Logistic)
      for (Eigen::Index i = 0; i < n_; ++i)
        if (response_[i] != 0.0 && response_[i] != 1.0) throw ContractError("binary synthesis needs 0/1 responses");
    beta_bar_ = cfg_.prior_means(J_);
    init_state();
  }

  // --- state access (tests and diagnostics) ---
  Eigen::Index num_agents() const { return J_; }
  Eigen::Index num_units() const { return n_; }
  const Matrix& beta() const { return beta_; }
  const Matrix& f() const { return f_; }
  double sigma2() const { return sigma2_; }
  const Vector& tau2() const { return tau2_; }
  const Vector& psi() const { return psi_; }
  const Vector& omega() const { return omega_; }
  const Vector& beta_bar() const { return beta_bar_; }
  const nngp::ConditionalTerms& terms(Eigen::Index j) const { return terms_[static_cast<std::size_t>(j)]; }
  const Vector& response() const { return response_; }
  Rng& rng() { return rng_; }

  void set_beta(Matrix beta) { beta_ = std::move(beta); }
  void set_f(Matrix f) { f_ = std::move(f); }
  void set_sigma2(double s) { sigma2_ = s; }
  void set_tau2(Vector t) { tau2_ = std::move(t); }
  void set_psi(Vector p) {
    psi_ = std::move(p);
    for (Eigen::Index j = 0; j <= J_; ++j) nngp::conditional_terms_into(graph_, psi_[j], terms_[static_cast<std::size_t>(j)]);
  }
  void set_omega(Vector w) { omega_ = std::move(w); }
  void set_response(Vector r) { response_ = std::move(r); }

  double eta(Eigen::Index i) const {
    double e = beta_(0, i);
    for (Eigen::Index j = 0; j < J_; ++j) e += beta_(j + 1, i) * f_(j, i);
    return e;
  }

  Vector eta() const {
    Vector e(n_);
    for (Eigen::Index i = 0; i < n_; ++i) e[i] = eta(i);
    return e;
  }

  // Likelihood precision and working response of unit i.
  double precision(Eigen::Index i) const {
    if (!in_lik_[static_cast<std::size_t>(i)]) return 0.0;
    return lik_ == Likelihood::Gaussian ? 1.0 / sigma2_ : omega_[i];
  }
  double working_response(Eigen::Index i) const {
    if (lik_ == Likelihood::Gaussian) return response_[i];
    return (response_[i] - 0.5) / omega_[i];
  }

  // --- full-conditional updates ---

  // Joint (J+1)-vector draw at each unit, units visited in NNGP order.
  void update_beta() {
    using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxCoefficients, kMaxCoefficients>;
    using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxCoefficients, 1>;
    const auto K = J_ + 1;
    Small a(K, K), saved(K, K);
    SmallVec rhs(K), fi(K), z(K), draw(K);
    const SmallVec bar = beta_bar_;
    centered_ = beta_.colwise() - beta_bar_;
    refresh_residuals();
    for (int p = 0; p < graph_.size(); ++p) {
      const int i = graph_.ordering[static_cast<std::size_t>(p)];
      fi[0] = 1.0;
      for (Eigen::Index j = 0; j < J_; ++j) fi[j + 1] = f_(j, i);
      const double w = precision(i);
      if (w > 0.0) {
        a.noalias() = w * fi * fi.transpose();
        rhs = (w * (working_response(i) - fi.dot(bar))) * fi;
      } else {
        a.setZero();
        rhs.setZero();
      }
      for (Eigen::Index j = 0; j < K; ++j) {
        auto [gamma, mterm] = prior_terms(j, i);
        a(j, j) += gamma;
        rhs[j] += mterm;
      }
      saved = a;
      Eigen::LLT<Eigen::Ref<Small>> llt(a);
      if (llt.info() != Eigen::Success) {
        a = saved;
        a.diagonal().array() += 1e-10;
        llt.compute(a);
        if (llt.info() != Eigen::Success)
          throw NumericalError("coefficient precision not positive definite at unit " + std::to_string(i));
      }
      for (Eigen::Index j = 0; j < K; ++j) z[j] = rng_.normal();
      draw = llt.solve(rhs);
      draw += llt.matrixU().solve(z);
      for (Eigen::Index j = 0; j < K; ++j) {
        const double delta = draw[j] - centered_(j, i);
        if (delta == 0.0) continue;
        const auto& t = terms_[static_cast<std::size_t>(j)];
        residual_(j, i) += delta;
        for (const auto& rev : graph_.reverse_index[static_cast<std::size_t>(i)])
          residual_(j, rev.target) -= t.B[static_cast<std::size_t>(rev.target)][rev.slot] * delta;
      }
      centered_.col(i) = draw;
      beta_.col(i) = draw + beta_bar_;
    }
  }

  void update_f() {
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double w = precision(i);
      const double target = w > 0.0 ? working_response(i) : 0.0;
      for (Eigen::Index j = 0; j < J_; ++j) {
        const double bj = beta_(j + 1, i);
        const double rest = eta(i) - bj * f_(j, i);
        const double prec = w * bj * bj + 1.0 / b_(j, i);
        const double lin = w * bj * (target - rest) + a_(j, i) / b_(j, i);
        f_(j, i) = lin / prec + rng_.normal() / std::sqrt(prec);
      }
    }
  }

  void update_tau2() {
    const double n = static_cast<double>(n_);
    for (Eigen::Index j = 0; j <= J_; ++j) {
      const Vector centered = beta_.row(j).transpose().array() - beta_bar_[j];
      const double ss = nngp::scaled_residual_ss(centered, terms_[static_cast<std::size_t>(j)], graph_);
      tau2_[j] = rng_.inverse_gamma(0.5 * (cfg_.tau_shape + n), 0.5 * cfg_.tau_scale + 0.5 * ss);
    }
  }

  // Random-walk Metropolis on log psi_j; uniform prior on psi gives the
  // log-Jacobian term log psi' - log psi.
  void update_psi() {
    for (Eigen::Index j = 0; j <= J_; ++j) {
      auto& cur = terms_[static_cast<std::size_t>(j)];
      const Vector beta_j = beta_.row(j).transpose();
      const double log_prop = std::log(psi_[j]) + mh_step_[j] * rng_.normal();
      const double prop = std::exp(log_prop);
      const double u = rng_.uniform();
      ++proposals_[j];
      if (prop <= psi_bounds_.first || prop >= psi_bounds_.second) continue;
      nngp::conditional_terms_into(graph_, prop, scratch_terms_);
      const double ll_cur = nngp::nngp_logdensity(beta_j, beta_bar_[j], tau2_[j], cur, graph_);
      const double ll_prop = nngp::nngp_logdensity(beta_j, beta_bar_[j], tau2_[j], scratch_terms_, graph_);
      const double log_ratio = ll_prop - ll_cur + log_prop - std::log(psi_[j]);
      if (std::log(u) < log_ratio) {
        std::swap(cur, scratch_terms_);
        psi_[j] = prop;
        ++accepts_[j];
      }
    }
  }

  void update_sigma2() {
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (!in_lik_[static_cast<std::size_t>(i)]) continue;
      const double r = response_[i] - eta(i);
      ss += r * r;
    }
    sigma2_ = rng_.inverse_gamma(0.5 * (cfg_.sigma_shape + static_cast<double>(n_obs_)), 0.5 * cfg_.sigma_scale + 0.5 * ss);
  }

  void update_omega() {
    for (Eigen::Index i = 0; i < n_; ++i)
      omega_[i] = in_lik_[static_cast<std::size_t>(i)] ? sample_polya_gamma(eta(i), rng_) : 1.0;
  }

  void sweep(int iteration = 0) {
    if (lik_ == Likelihood::Gaussian) {
      update_beta();
      check("beta", iteration);
      update_f();
      check("f", iteration);
      update_tau2();
      update_psi();
      update_sigma2();
      check("variance", iteration);
    } else {
      update_beta();
      check("beta", iteration);
      update_omega();
      update_f();
      check("f", iteration);
      update_tau2();
      update_psi();
      check("variance", iteration);
    }
  }

  SynthesisDraws run() {
    const int kept = cfg_.n_iter - cfg_.burn_in;
    SynthesisDraws d;
    d.num_agents = J_;
    d.num_units = n_;
    d.psi_bounds = psi_bounds_;
    d.fitted.resize(kept, n_);
    d.tau2.resize(kept, J_ + 1);
    d.psi.resize(kept, J_ + 1);
    if (lik_ == Likelihood::Gaussian) d.sigma2.resize(kept);
    if (cfg_.keep_latent) {
      d.beta.reserve(static_cast<std::size_t>(kept));
      d.f.reserve(static_cast<std::size_t>(kept));
    }
    const int window = 50;
    Vector window_acc = Vector::Zero(J_ + 1), window_prop = Vector::Zero(J_ + 1);
    for (int it = 0; it < cfg_.n_iter; ++it) {
      if (cfg_.deadline && std::chrono::steady_clock::now() > *cfg_.deadline)
        throw TimeoutError("synthesis chain exceeded its deadline at iteration " + std::to_string(it));
      if (it == cfg_.burn_in) {
        accepts_.setZero();
        proposals_.setZero();
      }
      sweep(it);
      if (it < cfg_.burn_in && cfg_.adapt_step && (it + 1) % window == 0) {
        for (Eigen::Index j = 0; j <= J_; ++j) {
          const double rate = (accepts_[j] - window_acc[j]) / std::max(1.0, proposals_[j] - window_prop[j]);
          if (rate < 0.25) mh_step_[j] *= 0.8;
          else if (rate > 0.45) mh_step_[j] *= 1.25;
        }
        window_acc = accepts_;
        window_prop = proposals_;
      }
      if (it >= cfg_.burn_in) {
        const auto b = it - cfg_.burn_in;
        d.fitted.row(b) = eta().transpose();
        d.tau2.row(b) = tau2_.transpose();
        d.psi.row(b) = psi_.transpose();
        if (lik_ == Likelihood::Gaussian) d.sigma2[b] = sigma2_;
        if (cfg_.keep_latent) {
          d.beta.push_back(beta_);
          d.f.push_back(f_);
        }
      }
    }
    d.acceptance_rates = accepts_.array() / proposals_.array().max(1.0);
    d.mh_steps = mh_step_;
    return d;
  }

 private:
  // Conditional residuals beta*_j(t) - B(t)' beta*_j(N(t)) for every process and unit.
  void refresh_residuals() {
    residual_.resize(J_ + 1, n_);
    for (Eigen::Index j = 0; j <= J_; ++j) {
      const auto& t = terms_[static_cast<std::size_t>(j)];
      for (int i = 0; i < graph_.size(); ++i) {
        const auto& nb = graph_.neighbors[static_cast<std::size_t>(i)];
        const Vector& bi = t.B[static_cast<std::size_t>(i)];
        double r = centered_(j, i);
        for (std::size_t s = 0; s < nb.size(); ++s) r -= bi[static_cast<Eigen::Index>(s)] * centered_(j, nb[s]);
        residual_(j, i) = r;
      }
    }
  }

  // Prior precision gamma_ji and linear term m_ji for beta*_j at unit i:
  // its own conditional plus every conditional in which it is a neighbor.
  std::pair<double, double> prior_terms(Eigen::Index j, int i) const {
    const auto& t = terms_[static_cast<std::size_t>(j)];
    const double inv_tau2 = 1.0 / tau2_[j];
    const double self = centered_(j, i);
    double gamma = inv_tau2 / t.F[i];
    double mterm = (self - residual_(j, i)) * gamma;
    for (const auto& rev : graph_.reverse_index[static_cast<std::size_t>(i)]) {
      const double coef = t.B[static_cast<std::size_t>(rev.target)][rev.slot];
      const double scale = inv_tau2 / t.F[rev.target];
      const double partial = residual_(j, rev.target) + coef * self;
      gamma += coef * coef * scale;
      mterm += coef * scale * partial;
    }
    return {gamma, mterm};
  }

  void init_state() {
    beta_ = beta_bar_.replicate(1, n_);
    centered_ = Matrix::Zero(J_ + 1, n_);
    f_ = a_;
    tau2_ = Vector::Constant(J_ + 1, 0.1);
    psi_ = Vector::Constant(J_ + 1, std::sqrt(psi_bounds_.first * psi_bounds_.second));
    terms_.resize(static_cast<std::size_t>(J_ + 1));
    for (Eigen::Index j = 0; j <= J_; ++j) nngp::conditional_terms_into(graph_, psi_[j], terms_[static_cast<std::size_t>(j)]);
    mh_step_ = Vector::Constant(J_ + 1, cfg_.mh_step);
    accepts_ = Vector::Zero(J_ + 1);
    proposals_ = Vector::Zero(J_ + 1);
    omega_ = Vector::Ones(n_);
    if (lik_ == Likelihood::Gaussian) {
      double ss = 0.0;
      for (Eigen::Index i = 0; i < n_; ++i)
        if (in_lik_[static_cast<std::size_t>(i)]) ss += std::pow(response_[i] - eta(i), 2);
      sigma2_ = n_obs_ > 0 ? std::max(ss / static_cast<double>(n_obs_), 1e-6) : 1.0;
    } else {
      for (Eigen::Index i = 0; i < n_; ++i) omega_[i] = polya_gamma_mean(eta(i));
      sigma2_ = 1.0;
    }
  }

  void check(const char* block, int iteration) const {
    const bool ok = beta_.allFinite() && f_.allFinite() && tau2_.allFinite() && std::isfinite(sigma2_) &&
                    omega_.allFinite();
    if (!ok)
      throw NumericalError(std::string("non-finite sampler state after the ") + block + " block at iteration " +
                           std::to_string(iteration));
  }

  Likelihood lik_;
  Vector response_;
  std::vector<bool> in_lik_;
  Matrix a_;  // J x n
  Matrix b_;  // J x n
  const nngp::NeighborGraph& graph_;
  SynthesisConfig cfg_;
  std::pair<double, double> psi_bounds_;
  Rng rng_;
  Eigen::Index J_ = 0;
  Eigen::Index n_ = 0;
  Eigen::Index n_obs_ = 0;
  Vector beta_bar_;

  Matrix beta_;      // (J+1) x n
  Matrix centered_;  // beta - beta_bar, kept in sync during update_beta
  Matrix residual_;  // conditional residuals of centered_, kept in sync during update_beta
  Matrix f_;         // J x n
  double sigma2_ = 1.0;
  Vector tau2_, psi_, omega_;
  std::vector<nngp::ConditionalTerms> terms_;
  nngp::ConditionalTerms scratch_terms_;
  Vector mh_step_, accepts_, proposals_;
};

// Continuous synthesis for one outcome arm. `in_likelihood` selects the units
// whose outcomes enter the likelihood; coefficients and latent factors are
// drawn at every unit.
inline SynthesisDraws run_continuous_gibbs(const Vector& y, const std::vector<bool>& in_likelihood,
                                           const AgentPredictive& agents, const nngp::NeighborGraph& graph,
                                           std::pair<double, double> psi_bounds, const SynthesisConfig& config) {
  if (agents.target == Target::Propensity) throw ContractError("continuous synthesis needs outcome agents");
  SynthesisSampler s(Likelihood::Gaussian, y, in_likelihood, agents, graph, psi_bounds, config);
  return s.run();
}

inline SynthesisDraws run_continuous_gibbs(const Vector& y, const AgentPredictive& agents, const Matrix& xs,
                                           const SynthesisConfig& config) {
  const auto graph = nngp::build_graph(xs, config.m);
  const auto bounds = config.psi_bounds.value_or(nngp::psi_bounds(xs));
  return run_continuous_gibbs(y, std::vector<bool>(static_cast<std::size_t>(y.size()), true), agents, graph, bounds,
                              config);
}

inline SynthesisDraws run_binary_gibbs(const Vector& z, const AgentPredictive& agents, const nngp::NeighborGraph& graph,
                                       std::pair<double, double> psi_bounds, const SynthesisConfig& config) {
  if (agents.target != Target::Propensity) throw ContractError("binary synthesis needs propensity agents");
  const double ones = z.sum();
  if (ones <= 0.0 || ones >= static_cast<double>(z.size())) throw ContractError("binary synthesis needs both classes");
  SynthesisSampler s(Likelihood::Logistic, z, std::vector<bool>(static_cast<std::size_t>(z.size()), true), agents,
                     graph, psi_bounds, config);
  return s.run();
}

inline SynthesisDraws run_binary_gibbs(const Vector& z, const AgentPredictive& agents, const Matrix& xs,
                                       const SynthesisConfig& config) {
  const auto graph = nngp::build_graph(xs, config.m);
  const auto bounds = config.psi_bounds.value_or(nngp::psi_bounds(xs));
  return run_binary_gibbs(z, agents, graph, bounds, config);
}

// Synthesized propensity draws: logistic(eta), clipped.
inline Matrix propensity_draws(const SynthesisDraws& d) {
  Matrix p(d.fitted.rows(), d.fitted.cols());
  for (Eigen::Index b = 0; b < p.rows(); ++b)
    for (Eigen::Index i = 0; i < p.cols(); ++i) p(b, i) = clip_propensity(1.0 / (1.0 + std::exp(-d.fitted(b, i))));
  return p;
}

// Diagnostic dump: one (iteration, parameter, value) line per scalar
// parameter and per probed unit's fitted value.
inline void write_draws(const std::string& path, const SynthesisDraws& d, const std::vector<Eigen::Index>& probe_units,
                        const std::string& label) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write draw dump '" + path + "'");
  out.precision(17);
  if (out.tellp() == 0) out << "chain\titeration\tparameter\tvalue\n";
  for (Eigen::Index b = 0; b < d.num_draws(); ++b) {
    if (d.sigma2.size()) out << label << '\t' << b << "\tsigma2\t" << d.sigma2[b] << '\n';
    for (Eigen::Index j = 0; j < d.tau2.cols(); ++j) {
      out << label << '\t' << b << "\ttau2[" << j << "]\t" << d.tau2(b, j) << '\n';
      out << label << '\t' << b << "\tpsi[" << j << "]\t" << d.psi(b, j) << '\n';
    }
    for (auto i : probe_units) out << label << '\t' << b << "\teta[" << i << "]\t" << d.fitted(b, i) << '\n';
  }
}

}  // namespace brsdr
