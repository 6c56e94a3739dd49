#pragma once

// Feature maps turn a raw covariate matrix into a regression design. A map is
// stored with every fitted model so that predictions at new covariates go
// through exactly the transform used in fitting.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "brsdr/dataset.hpp"

namespace brsdr {

enum class TermOp { Identity, Square, Cube, Exp, HalfNormalScaled, CubicSpline };

struct FeatureTerm {
  FeatureTerm(TermOp o, Eigen::Index c) : op(o), column(c) {}

  TermOp op;
  Eigen::Index column;
  // CubicSpline only: the raw column is standardized by (center, scale)
  // before building x, x^2, x^3 and truncated cubes at the knots.
  double center = 0.0;
  double scale = 1.0;
  std::vector<double> knots;
  double lower = 0.0;  // fitted range in standardized units, for the penalty
  double upper = 0.0;

  Eigen::Index width() const {
    return op == TermOp::CubicSpline ? 3 + static_cast<Eigen::Index>(knots.size()) : 1;
  }
};

inline std::string describe(const FeatureTerm& t, const std::vector<std::string>& names) {
  const std::string c = t.column < static_cast<Eigen::Index>(names.size())
                            ? names[static_cast<std::size_t>(t.column)]
                            : "x" + std::to_string(t.column + 1);
  switch (t.op) {
    case TermOp::Identity: return c;
    case TermOp::Square: return c + "^2";
    case TermOp::Cube: return c + "^3";
    case TermOp::Exp: return "exp(" + c + ")";
    case TermOp::HalfNormalScaled: return "|" + c + "|/sqrt(1-2/pi)";
    case TermOp::CubicSpline: return "s(" + c + ", " + std::to_string(t.knots.size()) + " knots)";
  }
  return c;
}

class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::vector<FeatureTerm> terms, Eigen::Index input_columns)
      : terms_(std::move(terms)), input_columns_(input_columns) {}

  static FeatureMap identity(Eigen::Index q) {
    std::vector<FeatureTerm> t;
    for (Eigen::Index k = 0; k < q; ++k) t.push_back({TermOp::Identity, k});
    return {std::move(t), q};
  }

  static FeatureMap with_squares(Eigen::Index q) {
    std::vector<FeatureTerm> t;
    for (Eigen::Index k = 0; k < q; ++k) t.push_back({TermOp::Identity, k});
    for (Eigen::Index k = 0; k < q; ++k) t.push_back({TermOp::Square, k});
    return {std::move(t), q};
  }

  const std::vector<FeatureTerm>& terms() const { return terms_; }
  Eigen::Index input_columns() const { return input_columns_; }

  // Number of design columns, intercept included.
  Eigen::Index width() const {
    Eigen::Index w = 1;
    for (const auto& t : terms_) w += t.width();
    return w;
  }

  std::string description(const std::vector<std::string>& names = {}) const {
    std::string s = "1";
    for (const auto& t : terms_) s += " + " + describe(t, names);
    return s;
  }

  // Design matrix with a leading intercept column.
  Matrix design(const Matrix& x) const {
    if (x.cols() != input_columns_)
      throw ContractError("feature map expects " + std::to_string(input_columns_) + " covariate columns, got " +
                          std::to_string(x.cols()));
    const auto n = x.rows();
    Matrix d(n, width());
    d.col(0).setOnes();
    Eigen::Index c = 1;
    for (const auto& t : terms_) {
      const auto col = x.col(t.column);
      switch (t.op) {
        case TermOp::Identity: d.col(c++) = col; break;
        case TermOp::Square: d.col(c++) = col.array().square().matrix(); break;
        case TermOp::Cube: d.col(c++) = col.array().cube().matrix(); break;
        case TermOp::Exp: d.col(c++) = col.array().exp().matrix(); break;
        case TermOp::HalfNormalScaled:
          d.col(c++) = (col.array().abs() / std::sqrt(1.0 - 2.0 / 3.14159265358979323846)).matrix();
          break;
        case TermOp::CubicSpline: {
          for (Eigen::Index i = 0; i < n; ++i) {
            const double s = (col[i] - t.center) / t.scale;
            d(i, c) = s;
            d(i, c + 1) = s * s;
            d(i, c + 2) = s * s * s;
            for (std::size_t k = 0; k < t.knots.size(); ++k) {
              const double r = std::max(0.0, s - t.knots[k]);
              d(i, c + 3 + static_cast<Eigen::Index>(k)) = r * r * r;
            }
          }
          c += t.width();
          break;
        }
      }
    }
    return d;
  }

 private:
  std::vector<FeatureTerm> terms_;
  Eigen::Index input_columns_ = 0;
};

// Integrated squared second derivative of a cubic-spline term over its fitted
// range, as a (3 + K) x (3 + K) Gram matrix on the term's coefficients.
// f'' = 2 c2 + 6 c3 s + sum_k 6 d_k (s - kappa_k)_+ is piecewise linear, so
// two-point Gauss-Legendre per knot interval integrates the products exactly.
inline Matrix spline_penalty(const FeatureTerm& t) {
  const auto w = t.width();
  Matrix pen = Matrix::Zero(w, w);
  std::vector<double> breaks{t.lower};
  for (double k : t.knots)
    if (k > t.lower && k < t.upper) breaks.push_back(k);
  breaks.push_back(t.upper);
  std::sort(breaks.begin(), breaks.end());
  const double g = 1.0 / std::sqrt(3.0);
  Vector dd(w);
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double a = breaks[b], e = breaks[b + 1];
    const double half = 0.5 * (e - a), mid = 0.5 * (e + a);
    for (double node : {-g, g}) {
      const double s = mid + half * node;
      dd.setZero();
      dd[1] = 2.0;
      dd[2] = 6.0 * s;
      for (std::size_t k = 0; k < t.knots.size(); ++k) dd[3 + static_cast<Eigen::Index>(k)] = 6.0 * std::max(0.0, s - t.knots[k]);
      pen.noalias() += half * dd * dd.transpose();
    }
  }
  return pen;
}

}  // namespace brsdr
