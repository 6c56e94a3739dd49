// brsdr: simulation studies, the empirical study, validation suite and
// sampler diagnostics from one binary.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brsdr/harness.hpp"
#include "brsdr/validation.hpp"

namespace {

using namespace brsdr;

// Flags that mirror config keys. Anything set on the command line wins over
// the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::string> study;
  std::vector<Eigen::Index> n;
  std::optional<Eigen::Index> q;
  std::vector<int> scenarios;
  std::vector<bool> omit_x3;
  std::optional<int> replications;
  std::vector<std::string> methods;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> output_dir;
  std::optional<double> timeout;
  std::vector<int> inject_failures;
  std::optional<int> m, n_iter, burn_in;
  std::optional<std::string> data_path;

  void add_to(CLI::App* app, bool simulation) {
    app->add_option("-c,--config", config_path, "Study config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--study", study, "Sim1, Sim2, Sim3, Sim4 or Empirical");
    app->add_option("-R,--replications", replications);
    app->add_option("--methods", methods, "Subset of GLM GQM GAM M1 M2 M3 SA SIC BMA BRS");
    app->add_option("--seed", seed, "Base seed");
    app->add_option("-j,--workers", workers);
    app->add_option("-o,--output-dir", output_dir);
    app->add_option("--timeout", timeout, "Per-replication timeout in seconds");
    app->add_option("--m", m, "NNGP neighbors");
    app->add_option("--n-iter", n_iter, "Gibbs iterations");
    app->add_option("--burn-in", burn_in);
    if (simulation) {
      app->add_option("-n,--n", n, "Sample sizes");
      app->add_option("-q,--q", q, "Covariate dimension");
      app->add_option("--scenarios", scenarios, "Sim3 scenarios");
      app->add_option("--omit-x3", omit_x3, "Sim2 omitted-covariate arms (0/1)");
      app->add_option("--inject-failures", inject_failures, "Replication indices forced to fail");
    } else {
      app->add_option("--data", data_path, "Data table (CSV or TSV)");
    }
  }

  StudyConfig resolve(Study fallback) const {
    StudyConfig c;
    if (!config_path.empty()) {
      c = load_study_config(config_path);
    } else {
      c.study = study ? parse_study(*study) : fallback;
      c.methods = default_methods(c.study);
    }
    if (study) {
      const auto s = parse_study(*study);
      if (s != c.study && methods.empty()) c.methods = default_methods(s);
      c.study = s;
    }
    if (!n.empty()) c.n_list = n;
    if (q) c.q = *q;
    if (!scenarios.empty()) c.scenarios = scenarios;
    if (!omit_x3.empty()) c.omit_x3 = omit_x3;
    if (replications) c.replications = *replications;
    if (!methods.empty()) c.methods = methods;
    if (seed) c.base_seed = *seed;
    if (workers) c.workers = *workers;
    if (output_dir) c.output_dir = *output_dir;
    if (timeout) c.timeout_seconds = *timeout;
    if (!inject_failures.empty()) c.inject_failures = inject_failures;
    if (m) c.synthesis.m = *m;
    if (n_iter) c.synthesis.n_iter = *n_iter;
    if (burn_in) c.synthesis.burn_in = *burn_in;
    if (data_path) c.data_path = *data_path;
    c.validate();
    return c;
  }
};

int cmd_simulate(const Overrides& o) {
  const auto c = o.resolve(Study::Sim1);
  if (c.study == Study::Empirical) throw ConfigError("use the 'empirical' subcommand for the empirical study");
  std::cerr << "study " << to_string(c.study) << ", " << study_cells(c).size() << " cell(s) x " << c.replications
            << " replication(s), " << c.workers << " worker(s)\n";
  const auto res = run_study(c);
  std::cout << "study\tn\tscenario\tomit_x3\tmethod\tbias\trmse\tcp\tal\tR\n";
  for (const auto& m : res.metrics)
    std::cout << m.study << '\t' << m.n << '\t' << m.scenario << '\t' << m.omit_x3 << '\t' << m.method << '\t'
              << m.bias << '\t' << m.rmse << '\t' << m.cp_percent << '\t' << m.al << '\t' << m.R_effective << '\n';
  std::cerr << "wrote " << c.output_dir << "/{records.tsv,metrics.tsv,manifest.json} in " << res.wall_seconds
            << " s\n";
  if (!res.all_cells_ok(0.9)) {
    std::cerr << "error: at least one cell completed fewer than 90% of its replications\n";
    return 1;
  }
  return 0;
}

int cmd_empirical(const Overrides& o) {
  auto c = o.resolve(Study::Empirical);
  if (c.study != Study::Empirical) throw ConfigError("the 'empirical' subcommand needs study = Empirical");
  const auto res = run_empirical(c);
  ensure_writable_dir(c.output_dir);
  const auto path = (std::filesystem::path(c.output_dir) / "empirical.tsv").string();
  write_empirical(path, res);
  std::cout << "method\testimate\tse\tlower\tupper\tlength\n";
  for (const auto& r : res.rows)
    std::cout << r.method << '\t' << r.value.estimate << '\t' << r.value.se << '\t' << r.value.ci.lower << '\t'
              << r.value.ci.upper << '\t' << r.value.ci.length() << '\n';
  std::cout << "naive\t" << res.naive_difference << '\n';
  for (const auto& [m, e] : res.errors) std::cerr << "method " << m << " failed: " << e << '\n';
  std::cerr << "n = " << res.n << ", wrote " << path << '\n';
  return res.errors.empty() ? 0 : 1;
}

int cmd_validate(bool quick) {
  const auto results = validation::run_suite(quick);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " | " << r.detail << " (" << r.seconds << " s)\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_dump_draws(const Overrides& o, int replication, const std::string& out_path, std::vector<Eigen::Index> probes) {
  const auto c = o.resolve(Study::Sim1);
  const std::uint64_t seed = replication_seed(c.base_seed, replication);
  const int scenario = c.study == Study::Empirical ? 0 : study_cells(c).front().scenario;
  const Dataset data =
      c.study == Study::Empirical ? load_empirical(c) : generate(c, study_cells(c).front(), seed).data;
  const auto agents = build_standard_agents(data, AgentDesignSpec{c.design(), scenario, c.additive});
  const auto pred = predict_agents(agents, data.covariates());
  if (probes.empty()) probes = {0, data.size() / 2, data.size() - 1};
  for (auto i : probes)
    if (i < 0 || i >= data.size()) throw ConfigError("probe unit " + std::to_string(i) + " out of range");
  const auto brs = run_brs(data, pred, c.synthesis, seed);
  std::filesystem::remove(out_path);
  write_draws(out_path, brs.mu1, probes, "mu1");
  write_draws(out_path, brs.mu0, probes, "mu0");
  write_draws(out_path, brs.pi, probes, "pi");
  std::cout << "chain\tacceptance\n";
  auto rates = [](const char* label, const SynthesisDraws& d) {
    for (Eigen::Index j = 0; j < d.acceptance_rates.size(); ++j)
      std::cout << label << "[psi" << j << "]\t" << d.acceptance_rates[j] << '\n';
  };
  rates("mu1", brs.mu1);
  rates("mu0", brs.mu0);
  rates("pi", brs.pi);
  std::cout << "tau\t" << brs.posterior.point << " [" << brs.posterior.interval.lower << ", "
            << brs.posterior.interval.upper << "]\n";
  std::cerr << "wrote " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust Bayesian regression synthesis"};
  app.set_version_flag("--version", std::string(brsdr::kVersion));
  app.require_subcommand(1);

  Overrides sim, emp, dump;
  auto* s = app.add_subcommand("simulate", "Run a simulation study (Sim1-Sim4)");
  sim.add_to(s, true);

  auto* e = app.add_subcommand("empirical", "Run every method on an observational data table");
  emp.add_to(e, false);

  bool quick = false;
  auto* v = app.add_subcommand("validate", "Run the oracle and invariant suites");
  v->add_flag("--quick", quick, "Fewer draws and sweeps");

  int replication = 0;
  std::string out_path = "draws.tsv";
  std::vector<Eigen::Index> probes;
  auto* d = app.add_subcommand("dump-draws", "Write the BRS chains for one dataset");
  dump.add_to(d, true);
  d->add_option("--data", dump.data_path, "Data table for study Empirical");
  d->add_option("-r,--replication", replication, "Replication index whose dataset is used");
  d->add_option("--out", out_path, "Output TSV");
  d->add_option("--probe", probes, "Units whose fitted values are dumped");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return cmd_simulate(sim);
    if (*e) return cmd_empirical(emp);
    if (*v) return cmd_validate(quick);
    if (*d) return cmd_dump_draws(dump, replication, out_path, probes);
  } catch (const brsdr::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
