#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "brsdr/error.hpp"

namespace brsdr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Propensity means and synthesized propensity draws are clipped to
// [kClipEps, 1 - kClipEps] before entering inverse-probability weights.
inline constexpr double kClipEps = 0.01;

inline double clip_propensity(double p) {
  return std::min(std::max(p, kClipEps), 1.0 - kClipEps);
}

// Observed (Y, X, Z) triples. Immutable once constructed; the constructor
// enforces binary treatments, finiteness, and two non-empty arms.
class Dataset {
 public:
  Dataset(Vector outcomes, Vector treatments, Matrix covariates, std::vector<std::string> column_names,
          std::optional<double> true_ate = std::nullopt)
      : outcomes_(std::move(outcomes)),
        treatments_(std::move(treatments)),
        covariates_(std::move(covariates)),
        column_names_(std::move(column_names)),
        true_ate_(true_ate) {
    validate();
  }

  Eigen::Index size() const { return outcomes_.size(); }
  Eigen::Index num_covariates() const { return covariates_.cols(); }
  const Vector& outcomes() const { return outcomes_; }
  const Vector& treatments() const { return treatments_; }
  const Matrix& covariates() const { return covariates_; }
  const std::vector<std::string>& column_names() const { return column_names_; }
  std::optional<double> true_ate() const { return true_ate_; }

  Eigen::Index num_treated() const {
    return static_cast<Eigen::Index>(treatments_.sum());
  }

  bool treated(Eigen::Index i) const { return treatments_[i] == 1.0; }

 private:
  void validate() const {
    const auto n = outcomes_.size();
    if (n < 2) throw ValidationError("dataset needs at least 2 units, got " + std::to_string(n));
    if (treatments_.size() != n || covariates_.rows() != n)
      throw ValidationError("outcomes, treatments and covariates disagree on the number of units");
    if (static_cast<Eigen::Index>(column_names_.size()) != covariates_.cols())
      throw ValidationError("column_names length does not match covariate columns");
    Eigen::Index treated = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = treatments_[i];
      if (z != 0.0 && z != 1.0)
        throw ValidationError("treatment at row " + std::to_string(i) + " is " + std::to_string(z) +
                              ", expected 0 or 1");
      treated += z == 1.0;
      if (!std::isfinite(outcomes_[i]))
        throw ValidationError("non-finite outcome at row " + std::to_string(i));
      for (Eigen::Index k = 0; k < covariates_.cols(); ++k)
        if (!std::isfinite(covariates_(i, k)))
          throw ValidationError("non-finite covariate at row " + std::to_string(i) + ", column " +
                                std::to_string(k));
    }
    if (treated == 0 || treated == n)
      throw ValidationError("both treatment arms must be non-empty");
  }

  Vector outcomes_;
  Vector treatments_;
  Matrix covariates_;
  std::vector<std::string> column_names_;
  std::optional<double> true_ate_;
};

// Column-wise (x - center) / scale with sample standard deviation; constant
// columns get scale 1 and become all zeros.
struct StandardizedCovariates {
  Matrix values;
  Vector centers;
  Vector scales;

  Matrix destandardize() const {
    Matrix raw = values;
    for (Eigen::Index k = 0; k < raw.cols(); ++k)
      raw.col(k) = raw.col(k).array() * scales[k] + centers[k];
    return raw;
  }
};

inline StandardizedCovariates standardize(const Matrix& x) {
  const auto n = x.rows();
  const auto q = x.cols();
  StandardizedCovariates out{Matrix(n, q), Vector(q), Vector(q)};
  for (Eigen::Index k = 0; k < q; ++k) {
    const double mean = x.col(k).mean();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (x(i, k) - mean) * (x(i, k) - mean);
    double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    // constant up to rounding
    const bool constant = sd <= 1e-14 * std::max(1.0, std::abs(mean));
    if (constant) sd = 1.0;
    out.centers[k] = mean;
    out.scales[k] = sd;
    for (Eigen::Index i = 0; i < n; ++i) out.values(i, k) = constant ? 0.0 : (x(i, k) - mean) / sd;
  }
  return out;
}

inline StandardizedCovariates standardize(const Dataset& data) { return standardize(data.covariates()); }

enum class Target { OutcomeTreated, OutcomeControl, Propensity };

inline const char* to_string(Target t) {
  switch (t) {
    case Target::OutcomeTreated: return "mu1";
    case Target::OutcomeControl: return "mu0";
    case Target::Propensity: return "pi";
  }
  return "?";
}

// Per-unit predictive N(a_ji, b_ji) of each agent j for one nuisance function.
struct AgentPredictive {
  Target target;
  Matrix means;      // n x J
  Matrix variances;  // n x J
  std::vector<std::string> model_labels;

  Eigen::Index num_units() const { return means.rows(); }
  Eigen::Index num_agents() const { return means.cols(); }

  void validate() const {
    if (means.rows() != variances.rows() || means.cols() != variances.cols())
      throw ValidationError("agent means and variances differ in shape");
    if (static_cast<Eigen::Index>(model_labels.size()) != means.cols())
      throw ValidationError("agent labels do not match agent count");
    for (Eigen::Index i = 0; i < means.rows(); ++i)
      for (Eigen::Index j = 0; j < means.cols(); ++j) {
        if (!(variances(i, j) > 0.0) || !std::isfinite(variances(i, j)))
          throw ValidationError("agent variance must be strictly positive");
        if (!std::isfinite(means(i, j))) throw ValidationError("non-finite agent mean");
        if (target == Target::Propensity && (means(i, j) < kClipEps || means(i, j) > 1.0 - kClipEps))
          throw ValidationError("propensity agent mean outside the clipping interval");
      }
  }
};

// Column roles for a delimited table.
struct TableSchema {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> covariates;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

// Reads a comma- or tab-delimited text file with a header row. Rows are kept
// in file order; the returned Dataset is validated.
inline Dataset load_table(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty table '" + path + "'", 0, 0);
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
  const auto names = detail::split(header, delim);

  auto find_column = [&](const std::string& name) -> std::size_t {
    for (std::size_t c = 0; c < names.size(); ++c)
      if (names[c] == name) return c;
    throw SchemaError("column '" + name + "' not found in '" + path + "'");
  };
  if (schema.covariates.empty()) throw SchemaError("schema names no covariate columns");
  const std::size_t y_col = find_column(schema.outcome);
  const std::size_t z_col = find_column(schema.treatment);
  std::vector<std::size_t> x_cols;
  for (const auto& c : schema.covariates) x_cols.push_back(find_column(c));

  std::vector<double> y, z, x;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, delim);
    auto cell = [&](std::size_t c) {
      if (c >= cells.size()) throw ParseError("row has too few cells", row, c + 1);
      double v;
      if (!detail::parse_double(cells[c], v))
        throw ParseError("non-numeric cell '" + cells[c] + "'", row, c + 1);
      return v;
    };
    y.push_back(cell(y_col));
    const double zv = cell(z_col);
    if (zv != 0.0 && zv != 1.0)
      throw ValidationError("treatment column '" + schema.treatment + "' has value " + cells[z_col] +
                            " at row " + std::to_string(row) + ", expected 0 or 1");
    z.push_back(zv);
    for (auto c : x_cols) x.push_back(cell(c));
  }
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto q = static_cast<Eigen::Index>(x_cols.size());
  Matrix cov(n, q);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < q; ++k) cov(i, k) = x[static_cast<std::size_t>(i * q + k)];
  return Dataset(Eigen::Map<Vector>(y.data(), n), Eigen::Map<Vector>(z.data(), n), std::move(cov),
                 schema.covariates);
}

}  // namespace brsdr
