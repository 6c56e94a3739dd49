#pragma once

// Nearest-neighbor Gaussian process scaffolding.
//
// Points are ordered by their first principal component score; each point
// conditions on its m nearest predecessors. For a process with correlation
// C(d; psi) = exp(-d / psi) this gives the sparse factorization
//
//   beta*(i) | beta*(N(i)) ~ N(B(i)' beta*(N(i)), tau^2 F(i)),
//   B(i) = C(N, N)^{-1} C(N, i),   F(i) = 1 - C(i, N) C(N, N)^{-1} C(N, i).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "brsdr/dataset.hpp"
#include "brsdr/rng.hpp"

namespace brsdr::nngp {

inline constexpr double kKernelJitter = 1e-10;
inline constexpr double kPivotFloor = 1e-12;
inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr int kMaxNeighbors = 64;

inline double kernel_corr(double distance, double psi) { return std::exp(-distance / psi); }

// Reverse-neighbor entry: point `target` has this point in slot `slot` of its
// neighbor list.
struct ReverseEntry {
  int target;
  int slot;
};

struct NeighborGraph {
  int m = 0;
  std::vector<int> ordering;                          // position -> unit
  std::vector<int> position;                          // unit -> position
  std::vector<std::vector<int>> neighbors;            // unit -> earlier units, nearest first
  std::vector<std::vector<ReverseEntry>> reverse_index;  // unit -> {t : unit in N(t)}
  // Cached geometry: distances from each unit to its neighbors, and among them.
  std::vector<Vector> point_distances;
  std::vector<Matrix> neighbor_distances;
  // Same distances packed per unit as [strict upper triangle of N x N, point
  // to each neighbor], so one vectorized pass evaluates every kernel entry.
  Vector packed_distances;
  std::vector<Eigen::Index> packed_offset;

  int size() const { return static_cast<int>(ordering.size()); }
};

// First principal component of the (standardized) covariates, sign fixed so
// that the largest-magnitude loading is positive.
inline Vector principal_scores(const Matrix& xs) {
  const auto q = xs.cols();
  if (q == 0) return Vector::Zero(xs.rows());
  const Matrix centered = xs.rowwise() - xs.colwise().mean();
  const Matrix cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector loading = eig.eigenvectors().col(q - 1);
  Eigen::Index arg;
  loading.cwiseAbs().maxCoeff(&arg);
  if (loading[arg] < 0.0) loading = -loading;
  return centered * loading;
}

inline NeighborGraph build_graph(const Matrix& xs, int m) {
  const auto n = static_cast<int>(xs.rows());
  if (m < 1 || m > kMaxNeighbors)
    throw ContractError("neighbor count m must be in [1, " + std::to_string(kMaxNeighbors) + "]");
  if (n < 2) throw ContractError("neighbor graph needs n >= 2");
  NeighborGraph g;
  g.m = m;
  const Vector score = principal_scores(xs);
  g.ordering.resize(static_cast<std::size_t>(n));
  std::iota(g.ordering.begin(), g.ordering.end(), 0);
  std::stable_sort(g.ordering.begin(), g.ordering.end(), [&](int a, int b) { return score[a] < score[b]; });
  g.position.resize(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) g.position[static_cast<std::size_t>(g.ordering[static_cast<std::size_t>(p)])] = p;

  g.neighbors.assign(static_cast<std::size_t>(n), {});
  g.reverse_index.assign(static_cast<std::size_t>(n), {});
  g.point_distances.assign(static_cast<std::size_t>(n), Vector());
  g.neighbor_distances.assign(static_cast<std::size_t>(n), Matrix());
  std::vector<std::pair<double, int>> cand;
  for (int p = 1; p < n; ++p) {
    const int i = g.ordering[static_cast<std::size_t>(p)];
    cand.clear();
    for (int r = 0; r < p; ++r) {
      const int u = g.ordering[static_cast<std::size_t>(r)];
      cand.emplace_back((xs.row(i) - xs.row(u)).squaredNorm(), r);
    }
    const auto k = static_cast<std::size_t>(std::min(m, p));
    // ties broken by earlier ordering position
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    auto& nb = g.neighbors[static_cast<std::size_t>(i)];
    for (std::size_t s = 0; s < k; ++s) nb.push_back(g.ordering[static_cast<std::size_t>(cand[s].second)]);
  }
  for (int i = 0; i < n; ++i) {
    const auto& nb = g.neighbors[static_cast<std::size_t>(i)];
    const auto k = static_cast<Eigen::Index>(nb.size());
    Vector pd(k);
    Matrix nd(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      pd[a] = (xs.row(i) - xs.row(nb[static_cast<std::size_t>(a)])).norm();
      for (Eigen::Index b = 0; b < k; ++b)
        nd(a, b) = (xs.row(nb[static_cast<std::size_t>(a)]) - xs.row(nb[static_cast<std::size_t>(b)])).norm();
    }
    g.point_distances[static_cast<std::size_t>(i)] = std::move(pd);
    g.neighbor_distances[static_cast<std::size_t>(i)] = std::move(nd);
    for (std::size_t s = 0; s < nb.size(); ++s)
      g.reverse_index[static_cast<std::size_t>(nb[s])].push_back({i, static_cast<int>(s)});
  }
  g.packed_offset.assign(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    const auto k = g.point_distances[static_cast<std::size_t>(i)].size();
    g.packed_offset[static_cast<std::size_t>(i) + 1] = g.packed_offset[static_cast<std::size_t>(i)] + k * (k - 1) / 2 + k;
  }
  g.packed_distances.resize(g.packed_offset.back());
  for (int i = 0; i < n; ++i) {
    const auto& nd = g.neighbor_distances[static_cast<std::size_t>(i)];
    const auto& pd = g.point_distances[static_cast<std::size_t>(i)];
    auto o = g.packed_offset[static_cast<std::size_t>(i)];
    for (Eigen::Index a = 0; a < pd.size(); ++a)
      for (Eigen::Index b = a + 1; b < pd.size(); ++b) g.packed_distances[o++] = nd(a, b);
    for (Eigen::Index a = 0; a < pd.size(); ++a) g.packed_distances[o++] = pd[a];
  }
  return g;
}

struct ConditionalTerms {
  std::vector<Vector> B;  // unit -> coefficients on its neighbors
  Vector F;               // unit -> conditional variance fraction, in (0, 1]
  double log_f_sum = 0.0;
  double psi = 0.0;
};

inline void conditional_terms_into(const NeighborGraph& g, double psi, ConditionalTerms& out) {
  if (!(psi > 0.0)) throw ContractError("range parameter psi must be positive");
  const auto n = static_cast<std::size_t>(g.size());
  out.B.resize(n);
  out.F.resize(static_cast<Eigen::Index>(n));
  out.psi = psi;
  thread_local Vector corr;
  corr = (g.packed_distances.array() * (-1.0 / psi)).exp();
  double l[kMaxNeighbors * kMaxNeighbors];
  double w[kMaxNeighbors];
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<int>(g.point_distances[i].size());
    auto& bi = out.B[i];
    bi.resize(k);
    if (k == 0) {
      out.F[static_cast<Eigen::Index>(i)] = 1.0;
      continue;
    }
    // lower triangle of C(N, N), row-major, factorized in place; the jitter
    // is used only when the plain system is numerically singular
    const double* e = corr.data() + g.packed_offset[i];
    auto factor = [&](double jitter) {
      const double* p = e;
      for (int a = 0; a < k; ++a) {
        l[a * k + a] = 1.0 + jitter;
        for (int b = a + 1; b < k; ++b) l[b * k + a] = *p++;
      }
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b <= a; ++b) {
          double v = l[a * k + b];
          for (int c = 0; c < b; ++c) v -= l[a * k + c] * l[b * k + c];
          if (a == b) {
            if (!(v > kPivotFloor)) return false;
            l[a * k + a] = std::sqrt(v);
          } else {
            l[a * k + b] = v / l[b * k + b];
          }
        }
      }
      return true;
    };
    if (!factor(0.0) && !factor(kKernelJitter))
      throw NumericalError("neighbor kernel system not positive definite at point " + std::to_string(i));
    e += k * (k - 1) / 2;
    // w = L^{-1} c, F = 1 - w'w, B = L^{-T} w
    double f = 1.0;
    for (int a = 0; a < k; ++a) {
      double v = e[a];
      for (int c = 0; c < a; ++c) v -= l[a * k + c] * w[c];
      w[a] = v / l[a * k + a];
      f -= w[a] * w[a];
    }
    for (int a = k - 1; a >= 0; --a) {
      double v = w[a];
      for (int c = a + 1; c < k; ++c) v -= l[c * k + a] * bi[c];
      bi[a] = v / l[a * k + a];
    }
    if (f < -1e-12)
      throw NumericalError("negative conditional variance " + std::to_string(f) + " at point " + std::to_string(i));
    out.F[static_cast<Eigen::Index>(i)] = std::clamp(f, kKernelJitter, 1.0);
  }
  out.log_f_sum = out.F.array().log().sum();
}

inline ConditionalTerms conditional_terms(const NeighborGraph& g, double psi) {
  ConditionalTerms t;
  conditional_terms_into(g, psi, t);
  return t;
}

// Sum over units of the conditional residual beta*(i) - B(i)' beta*(N(i)),
// squared and scaled by 1 / F(i); the quadratic form of the joint density.
inline double scaled_residual_ss(const Vector& centered, const ConditionalTerms& t, const NeighborGraph& g) {
  double ss = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const auto& nb = g.neighbors[static_cast<std::size_t>(i)];
    double pred = 0.0;
    for (std::size_t s = 0; s < nb.size(); ++s) pred += t.B[static_cast<std::size_t>(i)][static_cast<Eigen::Index>(s)] * centered[nb[s]];
    const double r = centered[i] - pred;
    ss += r * r / t.F[i];
  }
  return ss;
}

inline double nngp_logdensity(const Vector& beta, double mean, double tau2, const ConditionalTerms& t,
                              const NeighborGraph& g) {
  if (!(tau2 > 0.0)) throw ContractError("tau2 must be positive");
  const Vector centered = beta.array() - mean;
  const double ss = scaled_residual_ss(centered, t, g);
  const double n = static_cast<double>(g.size());
  return -0.5 * (n * (kLog2Pi + std::log(tau2)) + t.log_f_sum + ss / tau2);
}

// Draw from the NNGP prior: units in ordering sequence, each given its
// already-drawn neighbors.
inline Vector sample_prior(const NeighborGraph& g, const ConditionalTerms& t, double mean, double tau2, Rng& rng) {
  Vector centered = Vector::Zero(g.size());
  for (int i : g.ordering) {
    const auto& nb = g.neighbors[static_cast<std::size_t>(i)];
    double cond = 0.0;
    for (std::size_t s = 0; s < nb.size(); ++s)
      cond += t.B[static_cast<std::size_t>(i)][static_cast<Eigen::Index>(s)] * centered[nb[s]];
    centered[i] = cond + std::sqrt(tau2 * t.F[i]) * rng.normal();
  }
  return centered.array() + mean;
}

// Uniform prior support for psi tied to the data scale: (0.05, 2) times the
// mean pairwise distance over an evenly spaced subsample of at most 500 points.
inline std::pair<double, double> psi_bounds(const Matrix& xs, int max_points = 500) {
  const auto n = xs.rows();
  const auto k = std::min<Eigen::Index>(n, max_points);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
  for (Eigen::Index a = 0; a < k; ++a) idx[static_cast<std::size_t>(a)] = a * n / k;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      total += (xs.row(idx[a]) - xs.row(idx[b])).norm();
      ++pairs;
    }
  double mean = pairs ? total / static_cast<double>(pairs) : 1.0;
  if (!(mean > 0.0)) mean = 1.0;
  return {0.05 * mean, 2.0 * mean};
}

}  // namespace brsdr::nngp
