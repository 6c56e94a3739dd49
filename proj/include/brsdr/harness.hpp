#pragma once

// Study orchestration: configuration, per-replication pipelines, metric
// aggregation, the worker pool and result files.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "brsdr/agents.hpp"
#include "brsdr/dr.hpp"
#include "brsdr/synthesis.hpp"

namespace brsdr {

inline constexpr const char* kStudyFormat = "brsdr-study/1";
inline constexpr const char* kVersion = "1.0.0";

enum class Study { Sim1, Sim2, Sim3, Sim4, Empirical };

inline const char* to_string(Study s) {
  switch (s) {
    case Study::Sim1: return "Sim1";
    case Study::Sim2: return "Sim2";
    case Study::Sim3: return "Sim3";
    case Study::Sim4: return "Sim4";
    case Study::Empirical: return "Empirical";
  }
  return "?";
}

inline Study parse_study(const std::string& s) {
  for (auto st : {Study::Sim1, Study::Sim2, Study::Sim3, Study::Sim4, Study::Empirical})
    if (s == to_string(st)) return st;
  throw ConfigError("unknown study '" + s + "' (expected Sim1, Sim2, Sim3, Sim4 or Empirical)");
}

inline const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> m{"GLM", "GQM", "GAM", "M1", "M2", "M3", "SA", "SIC", "BMA", "BRS"};
  return m;
}

inline std::vector<std::string> default_methods(Study s) {
  if (s == Study::Sim3) return {"M1", "M2", "M3", "SA", "SIC", "BMA", "BRS"};
  return {"GLM", "GQM", "GAM", "SA", "SIC", "BMA", "BRS"};
}

inline bool is_single_model(const std::string& m) {
  return m == "GLM" || m == "GQM" || m == "GAM" || m == "M1" || m == "M2" || m == "M3";
}

struct CattaneoSchema {
  static TableSchema defaults() {
    return {"bweight", "mbsmoke",
            {"mage", "medu", "fedu", "nprenatal", "monthslb", "deadkids", "mmarried", "alcohol", "mrace", "fbaby"}};
  }
};

struct StudyConfig {
  Study study = Study::Sim1;
  std::vector<Eigen::Index> n_list{200};
  Eigen::Index q = 0;  // 0: the design default
  std::vector<int> scenarios{1};
  std::vector<bool> omit_x3{false};
  int replications = 1;
  std::vector<std::string> methods;
  SynthesisConfig synthesis{};
  AdditiveOptions additive{};
  std::uint64_t base_seed = 1;
  int workers = 1;
  std::string output_dir = "results";
  double timeout_seconds = 600.0;
  std::vector<int> inject_failures;  // replication indices forced to fail
  std::string data_path;
  TableSchema schema = CattaneoSchema::defaults();

  Eigen::Index effective_q() const {
    if (q > 0) return q;
    return study == Study::Sim4 ? 5 : 4;
  }

  AgentDesign design() const { return study == Study::Sim3 ? AgentDesign::Sim3Models : AgentDesign::GlmGqmGam; }

  void validate() const {
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(timeout_seconds > 0)) throw ConfigError("timeout_seconds must be positive");
    if (methods.empty()) throw ConfigError("no methods requested");
    std::set<std::string> seen;
    for (const auto& m : methods) {
      if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end())
        throw ConfigError("unknown method '" + m + "'");
      if (!seen.insert(m).second) throw ConfigError("method '" + m + "' listed twice");
      const bool sim3_only = m == "M1" || m == "M2" || m == "M3";
      const bool glm_family = m == "GLM" || m == "GQM" || m == "GAM";
      if (sim3_only && study != Study::Sim3) throw ConfigError("method " + m + " is only defined for Sim3");
      if (glm_family && study == Study::Sim3) throw ConfigError("Sim3 uses the M1-M3 candidates, not " + m);
    }
    if (study == Study::Empirical) {
      if (data_path.empty()) throw ConfigError("empirical study needs data.path");
      return;
    }
    if (n_list.empty()) throw ConfigError("n must list at least one sample size");
    for (auto n : n_list)
      if (n < 10) throw ConfigError("sample sizes must be >= 10");
    const auto qe = effective_q();
    if (study == Study::Sim1 && qe != 4) throw ConfigError("Sim1 has q = 4");
    if (study == Study::Sim2 && qe < 4) throw ConfigError("Sim2 needs q >= 4");
    if (study == Study::Sim3 && qe != 4) throw ConfigError("Sim3 has q = 4");
    if (study == Study::Sim4 && qe < 5) throw ConfigError("Sim4 needs q >= 5");
    if (study == Study::Sim3) {
      if (scenarios.empty()) throw ConfigError("Sim3 needs at least one scenario");
      for (int s : scenarios)
        if (s < 1 || s > 4) throw ConfigError("Sim3 scenarios are 1..4");
    }
    if (study == Study::Sim2 && omit_x3.empty()) throw ConfigError("Sim2 needs at least one omit_x3 value");
    synthesis.validate(3);
  }
};

// --- configuration file ------------------------------------------------------

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + key + "' in " + where + ": " + e.what());
  }
}

template <class T>
std::vector<T> scalar_or_list(const json& j, const std::string& key, const std::string& where) {
  if (j.at(key).is_array()) return get_as<std::vector<T>>(j, key, where);
  return {get_as<T>(j, key, where)};
}

inline void apply_synthesis(const json& s, SynthesisConfig& c) {
  const std::string where = "synthesis";
  reject_unknown(s,
                 {"m", "n_iter", "burn_in", "tau_shape", "tau_scale", "sigma_shape", "sigma_scale", "mh_step",
                  "adapt_step", "psi_bounds", "beta_bar", "keep_latent"},
                 where);
  if (s.contains("m")) c.m = get_as<int>(s, "m", where);
  if (s.contains("n_iter")) c.n_iter = get_as<int>(s, "n_iter", where);
  if (s.contains("burn_in")) c.burn_in = get_as<int>(s, "burn_in", where);
  if (s.contains("tau_shape")) c.tau_shape = get_as<double>(s, "tau_shape", where);
  if (s.contains("tau_scale")) c.tau_scale = get_as<double>(s, "tau_scale", where);
  if (s.contains("sigma_shape")) c.sigma_shape = get_as<double>(s, "sigma_shape", where);
  if (s.contains("sigma_scale")) c.sigma_scale = get_as<double>(s, "sigma_scale", where);
  if (s.contains("mh_step")) c.mh_step = get_as<double>(s, "mh_step", where);
  if (s.contains("adapt_step")) c.adapt_step = get_as<bool>(s, "adapt_step", where);
  if (s.contains("keep_latent")) c.keep_latent = get_as<bool>(s, "keep_latent", where);
  if (s.contains("psi_bounds")) {
    const auto b = get_as<std::vector<double>>(s, "psi_bounds", where);
    if (b.size() != 2) throw ConfigError("synthesis.psi_bounds needs two numbers");
    c.psi_bounds = std::pair{b[0], b[1]};
  }
  if (s.contains("beta_bar")) {
    const auto b = get_as<std::vector<double>>(s, "beta_bar", where);
    c.beta_bar = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
}

}  // namespace detail

// Parses a study configuration from JSON text. Unknown keys are errors.
inline StudyConfig parse_study_config(const std::string& text) {
  using detail::get_as;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"format", "study", "n", "q", "scenarios", "omit_x3", "replications", "methods", "synthesis",
                          "additive", "base_seed", "workers", "output_dir", "timeout_seconds", "inject_failures",
                          "data"},
                         "config");
  if (!j.contains("format")) throw ConfigError(std::string("config lacks the format tag \"") + kStudyFormat + "\"");
  if (get_as<std::string>(j, "format", "config") != kStudyFormat)
    throw ConfigError("unsupported config format '" + j["format"].dump() + "', expected " + kStudyFormat);
  StudyConfig c;
  if (!j.contains("study")) throw ConfigError("config lacks 'study'");
  c.study = parse_study(get_as<std::string>(j, "study", "config"));
  if (j.contains("n")) c.n_list = detail::scalar_or_list<Eigen::Index>(j, "n", "config");
  if (j.contains("q")) c.q = get_as<Eigen::Index>(j, "q", "config");
  if (j.contains("scenarios")) c.scenarios = detail::scalar_or_list<int>(j, "scenarios", "config");
  if (j.contains("omit_x3")) c.omit_x3 = detail::scalar_or_list<bool>(j, "omit_x3", "config");
  if (j.contains("replications")) c.replications = get_as<int>(j, "replications", "config");
  c.methods = j.contains("methods") ? get_as<std::vector<std::string>>(j, "methods", "config") : default_methods(c.study);
  if (j.contains("synthesis")) detail::apply_synthesis(j["synthesis"], c.synthesis);
  if (j.contains("additive")) {
    const auto& a = j["additive"];
    detail::reject_unknown(a, {"smooth_df", "max_knots", "min_distinct_for_smooth"}, "additive");
    if (a.contains("smooth_df")) c.additive.smooth_df = get_as<double>(a, "smooth_df", "additive");
    if (a.contains("max_knots")) c.additive.max_knots = get_as<int>(a, "max_knots", "additive");
    if (a.contains("min_distinct_for_smooth"))
      c.additive.min_distinct_for_smooth = get_as<int>(a, "min_distinct_for_smooth", "additive");
  }
  if (j.contains("base_seed")) c.base_seed = get_as<std::uint64_t>(j, "base_seed", "config");
  if (j.contains("workers")) c.workers = get_as<int>(j, "workers", "config");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir", "config");
  if (j.contains("timeout_seconds")) c.timeout_seconds = get_as<double>(j, "timeout_seconds", "config");
  if (j.contains("inject_failures")) c.inject_failures = get_as<std::vector<int>>(j, "inject_failures", "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::reject_unknown(d, {"path", "outcome", "treatment", "covariates"}, "data");
    if (d.contains("path")) c.data_path = get_as<std::string>(d, "path", "data");
    if (d.contains("outcome")) c.schema.outcome = get_as<std::string>(d, "outcome", "data");
    if (d.contains("treatment")) c.schema.treatment = get_as<std::string>(d, "treatment", "data");
    if (d.contains("covariates")) c.schema.covariates = get_as<std::vector<std::string>>(d, "covariates", "data");
  }
  return c;
}

inline StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_study_config(ss.str());
}

// Canonical JSON echo of a configuration (used for the manifest and its hash).
inline nlohmann::json to_json(const StudyConfig& c) {
  nlohmann::json j;
  j["format"] = kStudyFormat;
  j["study"] = to_string(c.study);
  j["n"] = c.n_list;
  j["q"] = c.effective_q();
  j["scenarios"] = c.scenarios;
  j["omit_x3"] = c.omit_x3;
  j["replications"] = c.replications;
  j["methods"] = c.methods;
  const auto& s = c.synthesis;
  j["synthesis"] = {{"m", s.m},
                    {"n_iter", s.n_iter},
                    {"burn_in", s.burn_in},
                    {"tau_shape", s.tau_shape},
                    {"tau_scale", s.tau_scale},
                    {"sigma_shape", s.sigma_shape},
                    {"sigma_scale", s.sigma_scale},
                    {"mh_step", s.mh_step},
                    {"adapt_step", s.adapt_step},
                    {"keep_latent", s.keep_latent}};
  if (s.psi_bounds) j["synthesis"]["psi_bounds"] = {s.psi_bounds->first, s.psi_bounds->second};
  if (s.beta_bar) j["synthesis"]["beta_bar"] = std::vector<double>(s.beta_bar->begin(), s.beta_bar->end());
  j["additive"] = {{"smooth_df", c.additive.smooth_df},
                   {"max_knots", c.additive.max_knots},
                   {"min_distinct_for_smooth", c.additive.min_distinct_for_smooth}};
  j["base_seed"] = c.base_seed;
  j["timeout_seconds"] = c.timeout_seconds;
  j["inject_failures"] = c.inject_failures;
  if (c.study == Study::Empirical)
    j["data"] = {{"path", c.data_path},
                 {"outcome", c.schema.outcome},
                 {"treatment", c.schema.treatment},
                 {"covariates", c.schema.covariates}};
  return j;
}

// Worker count and output directory do not change results and stay out of
// the hash.
inline std::string config_hash(const StudyConfig& c) {
  const auto text = to_json(c).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(derive_seed(0, text)));
  return buf;
}

// --- replications ------------------------------------------------------------

// One (n, scenario, omit) combination of a simulation study.
struct Cell {
  Eigen::Index n = 0;
  int scenario = 0;  // Sim3 only
  bool omit_x3 = false;
};

inline std::vector<Cell> study_cells(const StudyConfig& c) {
  std::vector<Cell> cells;
  for (auto n : c.n_list) {
    if (c.study == Study::Sim3)
      for (int s : c.scenarios) cells.push_back({n, s, false});
    else if (c.study == Study::Sim2)
      for (bool o : c.omit_x3) cells.push_back({n, 0, o});
    else
      cells.push_back({n, 0, false});
  }
  return cells;
}

inline std::uint64_t replication_seed(std::uint64_t base_seed, int r) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(r));
}

struct Record {
  std::string study;
  Eigen::Index n = 0;
  int scenario = 0;
  bool omit_x3 = false;
  int replication = 0;
  std::uint64_t seed = 0;
  std::string method;
  bool ok = false;
  double estimate = NAN;
  double se = NAN;
  double lower = NAN;
  double upper = NAN;
  double true_ate = NAN;
  double runtime_seconds = 0.0;
  std::string error;
};

inline dgp::GeneratedData generate(const StudyConfig& c, const Cell& cell, std::uint64_t seed) {
  switch (c.study) {
    case Study::Sim1: return dgp::gen_sim1(cell.n, seed);
    case Study::Sim2: return dgp::gen_sim2(cell.n, c.effective_q(), cell.omit_x3, seed);
    case Study::Sim3: return dgp::gen_sim3(cell.n, cell.scenario, seed).generated;
    case Study::Sim4: return dgp::gen_sim4(cell.n, c.effective_q(), seed);
    case Study::Empirical: break;
  }
  throw ConfigError("empirical studies have no generator");
}

struct BrsResult {
  DrPosterior posterior;
  SynthesisDraws mu1, mu0, pi;
};

// The three synthesis chains and the Bayesian-bootstrap DR posterior.
inline BrsResult run_brs(const Dataset& data, const AgentPredictions& pred, SynthesisConfig cfg, std::uint64_t seed) {
  const auto n = data.size();
  const auto xs = standardize(data);
  const auto graph = nngp::build_graph(xs.values, cfg.m);
  const auto bounds = cfg.psi_bounds.value_or(nngp::psi_bounds(xs.values));
  std::vector<bool> treated(static_cast<std::size_t>(n)), control(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    treated[static_cast<std::size_t>(i)] = data.treated(i);
    control[static_cast<std::size_t>(i)] = !data.treated(i);
  }
  BrsResult out;
  cfg.seed = derive_seed(seed, "brs/mu1");
  out.mu1 = run_continuous_gibbs(data.outcomes(), treated, pred.mu1, graph, bounds, cfg);
  cfg.seed = derive_seed(seed, "brs/mu0");
  out.mu0 = run_continuous_gibbs(data.outcomes(), control, pred.mu0, graph, bounds, cfg);
  cfg.seed = derive_seed(seed, "brs/pi");
  out.pi = run_binary_gibbs(data.treatments(), pred.pi, graph, bounds, cfg);
  out.posterior = bootstrap_dr_posterior(out.mu1.fitted, out.mu0.fitted, propensity_draws(out.pi), data.outcomes(),
                                         data.treatments(), derive_seed(seed, "brs/bootstrap"));
  return out;
}

struct MethodEstimate {
  std::string method;
  PointEstimate value;
};

// All requested estimators on one dataset. Failures of BRS alone are
// reported per method; agent-fitting failures abort the whole dataset.
inline std::vector<std::pair<std::string, std::optional<PointEstimate>>> estimate_all(
    const Dataset& data, const StudyConfig& c, int scenario, std::uint64_t seed,
    std::optional<std::chrono::steady_clock::time_point> deadline, std::map<std::string, std::string>& errors,
    std::map<std::string, double>& runtimes) {
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  AgentDesignSpec spec{c.design(), scenario, c.additive};
  const auto agents = build_standard_agents(data, spec);
  const auto pred = predict_agents(agents, data.covariates());
  const double agent_time = std::chrono::duration<double>(clock::now() - t0).count();
  std::vector<std::pair<std::string, std::optional<PointEstimate>>> out;
  for (const auto& m : c.methods) {
    t0 = clock::now();
    try {
      if (deadline && clock::now() > *deadline) throw TimeoutError("replication exceeded its deadline");
      if (is_single_model(m)) {
        const auto it = std::find(agents.labels.begin(), agents.labels.end(), m);
        out.emplace_back(m, single_model_dr_estimate(pred, it - agents.labels.begin(), data));
      } else if (m == "BRS") {
        auto cfg = c.synthesis;
        cfg.deadline = deadline;
        const auto brs = run_brs(data, pred, cfg, seed);
        out.emplace_back(m, PointEstimate{brs.posterior.point, brs.posterior.sd, brs.posterior.interval});
      } else {
        const auto method = m == "SA" ? EnsembleMethod::SA : (m == "SIC" ? EnsembleMethod::SIC : EnsembleMethod::BMA);
        const auto w_out = ensemble_weights(method, agents.outcome_aic(), agents.outcome_bic());
        const auto w_pi = ensemble_weights(method, agents.propensity_aic(), agents.propensity_bic());
        out.emplace_back(m, combined_dr_estimate(pred, w_out.w, w_pi.w, data));
      }
    } catch (const Error& e) {
      errors[m] = e.what();
      out.emplace_back(m, std::nullopt);
    }
    runtimes[m] = std::chrono::duration<double>(clock::now() - t0).count() + agent_time;
  }
  return out;
}

inline std::vector<Record> run_replication(const StudyConfig& c, const Cell& cell, int r) {
  using clock = std::chrono::steady_clock;
  const auto seed = replication_seed(c.base_seed, r);
  std::vector<Record> recs;
  auto base = [&](const std::string& m) {
    Record rec;
    rec.study = to_string(c.study);
    rec.n = cell.n;
    rec.scenario = cell.scenario;
    rec.omit_x3 = cell.omit_x3;
    rec.replication = r;
    rec.seed = seed;
    rec.method = m;
    return rec;
  };
  const auto start = clock::now();
  const auto deadline = start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(c.timeout_seconds));
  double true_ate = NAN;
  try {
    if (std::find(c.inject_failures.begin(), c.inject_failures.end(), r) != c.inject_failures.end())
      throw ContractError("injected failure for replication " + std::to_string(r));
    const auto g = generate(c, cell, seed);
    true_ate = g.true_ate;
    std::map<std::string, std::string> errors;
    std::map<std::string, double> runtimes;
    const auto est = estimate_all(g.data, c, cell.scenario, seed, deadline, errors, runtimes);
    for (const auto& [m, v] : est) {
      auto rec = base(m);
      rec.true_ate = true_ate;
      rec.runtime_seconds = runtimes[m];
      if (v) {
        rec.ok = true;
        rec.estimate = v->estimate;
        rec.se = v->se;
        rec.lower = v->ci.lower;
        rec.upper = v->ci.upper;
      } else {
        rec.error = errors[m];
      }
      recs.push_back(rec);
    }
  } catch (const std::exception& e) {
    recs.clear();
    const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
    for (const auto& m : c.methods) {
      auto rec = base(m);
      rec.true_ate = true_ate;
      rec.error = e.what();
      rec.runtime_seconds = elapsed;
      recs.push_back(rec);
    }
  }
  return recs;
}

// --- aggregation -------------------------------------------------------------

struct MetricsRow {
  std::string study;
  Eigen::Index n = 0;
  int scenario = 0;
  bool omit_x3 = false;
  std::string method;
  double bias = 0.0;
  double rmse = 0.0;
  double cp_percent = 0.0;
  double al = 0.0;
  double runtime_seconds = 0.0;
  int R_effective = 0;
  int R_requested = 0;
};

// Metrics of one method over its successful replications.
inline MetricsRow aggregate_method(const std::vector<Record>& recs, double true_ate) {
  MetricsRow row;
  double sum_err = 0.0, sum_sq = 0.0, cover = 0.0, len = 0.0;
  for (const auto& r : recs) {
    ++row.R_requested;
    row.runtime_seconds += r.runtime_seconds;
    if (!r.ok) continue;
    ++row.R_effective;
    const double e = r.estimate - true_ate;
    sum_err += e;
    sum_sq += e * e;
    cover += (r.lower <= true_ate && true_ate <= r.upper) ? 1.0 : 0.0;
    len += r.upper - r.lower;
  }
  if (row.R_effective == 0) throw ContractError("no successful replications to aggregate");
  const double k = row.R_effective;
  row.bias = sum_err / k;
  row.rmse = std::sqrt(sum_sq / k);
  row.cp_percent = 100.0 * cover / k;
  row.al = len / k;
  return row;
}

// One row per (cell, method), in configuration order. Records may arrive in
// any order. Methods without a single success are skipped.
inline std::vector<MetricsRow> aggregate_metrics(const StudyConfig& c, const std::vector<Record>& records) {
  std::vector<MetricsRow> rows;
  for (const auto& cell : study_cells(c)) {
    for (const auto& m : c.methods) {
      std::vector<Record> sel;
      double truth = NAN;
      for (const auto& r : records)
        if (r.n == cell.n && r.scenario == cell.scenario && r.omit_x3 == cell.omit_x3 && r.method == m) {
          sel.push_back(r);
          if (r.ok) truth = r.true_ate;
        }
      std::sort(sel.begin(), sel.end(), [](const Record& a, const Record& b) { return a.replication < b.replication; });
      if (std::none_of(sel.begin(), sel.end(), [](const Record& r) { return r.ok; })) continue;
      auto row = aggregate_method(sel, truth);
      row.study = to_string(c.study);
      row.n = cell.n;
      row.scenario = cell.scenario;
      row.omit_x3 = cell.omit_x3;
      row.method = m;
      rows.push_back(row);
    }
  }
  return rows;
}

// --- result files ------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline double parse_num(const std::string& s, std::size_t row, std::size_t col) {
  if (s == "NA") return NAN;
  double v;
  if (!parse_double(s, v)) throw ParseError("bad number '" + s + "'", row, col);
  return v;
}

inline std::string sanitize(std::string s) {
  for (auto& ch : s)
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

inline std::vector<std::vector<std::string>> read_tsv(const std::string& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file '" + path + "'", 0, 0);
  std::vector<std::string> got;
  {
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) got.push_back(cell);
  }
  if (got != header) throw SchemaError("unexpected header in '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (!line.empty() && line.back() == '\t') cells.emplace_back();
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " cells", row, cells.size());
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

inline const std::vector<std::string>& records_header() {
  static const std::vector<std::string> h{"study", "n",     "scenario", "omit_x3",  "replication",     "seed",
                                          "method", "status", "estimate", "se",       "lower",           "upper",
                                          "true_ate", "runtime_seconds", "error"};
  return h;
}

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h{"study", "n",  "scenario",   "omit_x3", "method",     "bias",
                                          "rmse",  "cp_percent", "al", "R_effective", "R_requested"};
  return h;
}

inline void write_records(const std::string& path, const std::vector<Record>& recs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto& h = records_header();
  for (std::size_t k = 0; k < h.size(); ++k) out << (k ? "\t" : "") << h[k];
  out << '\n';
  using detail::fmt;
  for (const auto& r : recs)
    out << r.study << '\t' << r.n << '\t' << r.scenario << '\t' << (r.omit_x3 ? 1 : 0) << '\t' << r.replication << '\t'
        << r.seed << '\t' << r.method << '\t' << (r.ok ? "ok" : "failed") << '\t' << fmt(r.estimate) << '\t'
        << fmt(r.se) << '\t' << fmt(r.lower) << '\t' << fmt(r.upper) << '\t' << fmt(r.true_ate) << '\t'
        << fmt(r.runtime_seconds) << '\t' << detail::sanitize(r.error) << '\n';
}

inline std::vector<Record> read_records(const std::string& path) {
  std::vector<Record> recs;
  std::size_t row = 0;
  for (const auto& c : detail::read_tsv(path, records_header())) {
    ++row;
    Record r;
    r.study = c[0];
    r.n = static_cast<Eigen::Index>(detail::parse_num(c[1], row, 2));
    r.scenario = static_cast<int>(detail::parse_num(c[2], row, 3));
    r.omit_x3 = c[3] == "1";
    r.replication = static_cast<int>(detail::parse_num(c[4], row, 5));
    r.seed = std::stoull(c[5]);
    r.method = c[6];
    r.ok = c[7] == "ok";
    r.estimate = detail::parse_num(c[8], row, 9);
    r.se = detail::parse_num(c[9], row, 10);
    r.lower = detail::parse_num(c[10], row, 11);
    r.upper = detail::parse_num(c[11], row, 12);
    r.true_ate = detail::parse_num(c[12], row, 13);
    r.runtime_seconds = detail::parse_num(c[13], row, 14);
    r.error = c[14];
    recs.push_back(std::move(r));
  }
  return recs;
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto& h = metrics_header();
  for (std::size_t k = 0; k < h.size(); ++k) out << (k ? "\t" : "") << h[k];
  out << '\n';
  using detail::fmt;
  for (const auto& r : rows)
    out << r.study << '\t' << r.n << '\t' << r.scenario << '\t' << (r.omit_x3 ? 1 : 0) << '\t' << r.method << '\t'
        << fmt(r.bias) << '\t' << fmt(r.rmse) << '\t' << fmt(r.cp_percent) << '\t' << fmt(r.al) << '\t'
        << r.R_effective << '\t' << r.R_requested << '\n';
}

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::vector<MetricsRow> rows;
  std::size_t row = 0;
  for (const auto& c : detail::read_tsv(path, metrics_header())) {
    ++row;
    MetricsRow m;
    m.study = c[0];
    m.n = static_cast<Eigen::Index>(detail::parse_num(c[1], row, 2));
    m.scenario = static_cast<int>(detail::parse_num(c[2], row, 3));
    m.omit_x3 = c[3] == "1";
    m.method = c[4];
    m.bias = detail::parse_num(c[5], row, 6);
    m.rmse = detail::parse_num(c[6], row, 7);
    m.cp_percent = detail::parse_num(c[7], row, 8);
    m.al = detail::parse_num(c[8], row, 9);
    m.R_effective = static_cast<int>(detail::parse_num(c[9], row, 10));
    m.R_requested = static_cast<int>(detail::parse_num(c[10], row, 11));
    rows.push_back(m);
  }
  return rows;
}

// --- study driver ------------------------------------------------------------

struct StudyResult {
  std::vector<Record> records;  // cell-major, then replication, then method
  std::vector<MetricsRow> metrics;
  std::vector<double> success_rate;  // per cell: fraction of replications where every method succeeded
  double wall_seconds = 0.0;
  bool sim4_check_ok = true;
  double sim4_check_value = NAN;

  bool all_cells_ok(double threshold = 0.9) const {
    return std::all_of(success_rate.begin(), success_rate.end(), [&](double s) { return s >= threshold; });
  }
};

inline void ensure_writable_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
  const auto probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory '" + dir + "' is not writable");
  }
  fs::remove(probe, ec);
}

inline nlohmann::json build_manifest(const StudyConfig& c, const StudyResult& res) {
  nlohmann::json j;
  j["format"] = "brsdr-manifest/1";
  j["version"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["compiler"] = __VERSION__;
  j["config"] = to_json(c);
  j["config_hash"] = config_hash(c);
  j["base_seed"] = c.base_seed;
  j["workers"] = c.workers;
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < c.replications; ++r) seeds.push_back(replication_seed(c.base_seed, r));
  j["replication_seeds"] = seeds;
  j["wall_seconds"] = res.wall_seconds;
  if (c.study == Study::Sim4) j["sim4_true_ate_check"] = {{"monte_carlo", res.sim4_check_value}, {"ok", res.sim4_check_ok}};
  nlohmann::json cells = nlohmann::json::array();
  const auto cs = study_cells(c);
  for (std::size_t k = 0; k < cs.size(); ++k)
    cells.push_back({{"n", cs[k].n},
                     {"scenario", cs[k].scenario},
                     {"omit_x3", cs[k].omit_x3},
                     {"success_rate", res.success_rate[k]}});
  j["cells"] = cells;
  std::map<std::string, double> runtime;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : res.records) {
    runtime[r.method] += r.runtime_seconds;
    if (!r.ok)
      failures.push_back({{"n", r.n},
                          {"scenario", r.scenario},
                          {"omit_x3", r.omit_x3},
                          {"replication", r.replication},
                          {"method", r.method},
                          {"error", r.error}});
  }
  j["runtime_seconds_by_method"] = runtime;
  j["failures"] = failures;
  return j;
}

// Runs every (cell, replication) task over a worker pool, then aggregates in
// a fixed order and writes records.tsv, metrics.tsv and manifest.json.
inline StudyResult run_study(const StudyConfig& c, bool write_files = true) {
  c.validate();
  if (c.study == Study::Empirical) throw ConfigError("use run_empirical for the empirical study");
  if (write_files) ensure_writable_dir(c.output_dir);
  const auto t0 = std::chrono::steady_clock::now();
  StudyResult res;
  if (c.study == Study::Sim4) {
    res.sim4_check_value = dgp::sim4_monte_carlo_ate(1000000, c.base_seed);
    res.sim4_check_ok = std::abs(res.sim4_check_value - dgp::kSim4TrueAte) < 0.01;
    if (!res.sim4_check_ok)
      throw NumericalError("Sim4 Monte Carlo ATE " + std::to_string(res.sim4_check_value) + " disagrees with 1.5");
  }
  const auto cells = study_cells(c);
  const std::size_t tasks = cells.size() * static_cast<std::size_t>(c.replications);
  std::vector<std::vector<Record>> slots(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks;) {
      const auto& cell = cells[t / static_cast<std::size_t>(c.replications)];
      slots[t] = run_replication(c, cell, static_cast<int>(t % static_cast<std::size_t>(c.replications)));
    }
  };
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(c.workers), tasks));
  std::vector<std::thread> pool;
  for (int w = 1; w < k; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    int ok = 0;
    for (int r = 0; r < c.replications; ++r) {
      const auto& s = slots[cell * static_cast<std::size_t>(c.replications) + static_cast<std::size_t>(r)];
      ok += std::all_of(s.begin(), s.end(), [](const Record& x) { return x.ok; });
      res.records.insert(res.records.end(), s.begin(), s.end());
    }
    res.success_rate.push_back(static_cast<double>(ok) / c.replications);
  }
  res.metrics = aggregate_metrics(c, res.records);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (write_files) {
    const std::filesystem::path dir(c.output_dir);
    write_records((dir / "records.tsv").string(), res.records);
    write_metrics((dir / "metrics.tsv").string(), res.metrics);
    std::ofstream m(dir / "manifest.json");
    if (!m) throw IoError("cannot write manifest");
    m << build_manifest(c, res).dump(2) << '\n';
  }
  return res;
}

// --- empirical study ---------------------------------------------------------

struct EmpiricalRow {
  std::string method;
  PointEstimate value;
};

struct EmpiricalResult {
  std::vector<EmpiricalRow> rows;
  std::map<std::string, std::string> errors;
  double naive_difference = 0.0;
  Eigen::Index n = 0;
  double wall_seconds = 0.0;
};

inline Dataset load_empirical(const StudyConfig& c) {
  if (!std::filesystem::exists(c.data_path)) {
    std::string cols = c.schema.outcome + ", " + c.schema.treatment;
    for (const auto& x : c.schema.covariates) cols += ", " + x;
    throw IoError("data file '" + c.data_path + "' not found; expected a comma- or tab-delimited table with a header " +
                  "row containing the columns " + cols + " (treatment coded 0/1)");
  }
  return load_table(c.data_path, c.schema);
}

inline double naive_difference(const Dataset& d) {
  double s1 = 0, s0 = 0, n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d.treated(i)) s1 += d.outcomes()[i], ++n1;
    else s0 += d.outcomes()[i], ++n0;
  }
  return s1 / n1 - s0 / n0;
}

inline EmpiricalResult run_empirical(const StudyConfig& c, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  EmpiricalResult res;
  res.n = data.size();
  res.naive_difference = naive_difference(data);
  std::map<std::string, double> runtimes;
  const auto seed = replication_seed(c.base_seed, 0);
  for (auto& [m, v] : estimate_all(data, c, 0, seed, std::nullopt, res.errors, runtimes))
    if (v) res.rows.push_back({m, *v});
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline EmpiricalResult run_empirical(const StudyConfig& c) {
  c.validate();
  return run_empirical(c, load_empirical(c));
}

inline void write_empirical(const std::string& path, const EmpiricalResult& res) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  using detail::fmt;
  out << "method\testimate\tse\tlower\tupper\tlength\n";
  for (const auto& r : res.rows)
    out << r.method << '\t' << fmt(r.value.estimate) << '\t' << fmt(r.value.se) << '\t' << fmt(r.value.ci.lower) << '\t'
        << fmt(r.value.ci.upper) << '\t' << fmt(r.value.ci.length()) << '\n';
  out << "naive\t" << fmt(res.naive_difference) << "\tNA\tNA\tNA\tNA\n";
}

}  // namespace brsdr
