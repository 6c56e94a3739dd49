#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "brsdr/harness.hpp"

using namespace brsdr;
namespace fs = std::filesystem;

namespace {

StudyConfig small_sim1(int workers) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "n": 80, "replications": 4,
    "methods": ["GLM", "GAM", "SA", "BRS"], "synthesis": {"m": 5, "n_iter": 120, "burn_in": 40}})");
  c.workers = workers;
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

Record rec(double est, double lo, double hi, bool ok = true) {
  Record r;
  r.method = "X";
  r.ok = ok;
  r.estimate = est;
  r.lower = lo;
  r.upper = hi;
  r.true_ate = 2.0;
  return r;
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim2"})");
  EXPECT_EQ(c.study, Study::Sim2);
  EXPECT_EQ(c.effective_q(), 4);
  EXPECT_EQ(c.methods, default_methods(Study::Sim2));
  EXPECT_EQ(c.synthesis.n_iter, 2000);
  EXPECT_EQ(c.synthesis.burn_in, 500);
  EXPECT_EQ(c.timeout_seconds, 600.0);
}

TEST(Config, UnknownKeyIsAnError) {
  EXPECT_THROW(parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "replicatoins": 3})"),
               ConfigError);
  EXPECT_THROW(parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "synthesis": {"iters": 3}})"),
               ConfigError);
}

TEST(Config, FormatTagRequired) {
  EXPECT_THROW(parse_study_config(R"({"study": "Sim1"})"), ConfigError);
  EXPECT_THROW(parse_study_config(R"({"format": "brsdr-study/9", "study": "Sim1"})"), ConfigError);
  EXPECT_THROW(parse_study_config("not json"), ConfigError);
}

TEST(Config, MethodStudyCompatibility) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim3", "methods": ["GLM"]})");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "methods": ["M3"]})");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "methods": ["GLM", "GLM"]})");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim1", "q": 6})");
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Empirical"})");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, RoundTripKeepsHash) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim3", "n": [200, 2000],
    "scenarios": [2, 3], "replications": 7, "base_seed": 99, "synthesis": {"m": 8, "psi_bounds": [0.1, 3]}})");
  const auto back = parse_study_config(to_json(c).dump());
  EXPECT_EQ(config_hash(c), config_hash(back));
  EXPECT_EQ(back.scenarios, (std::vector<int>{2, 3}));
  c.workers = 8;
  c.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(c), config_hash(back));
  c.base_seed = 100;
  EXPECT_NE(config_hash(c), config_hash(back));
}

TEST(Config, ScalarOrList) {
  const auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim2", "n": 300, "omit_x3": true})");
  EXPECT_EQ(c.n_list, (std::vector<Eigen::Index>{300}));
  EXPECT_EQ(c.omit_x3, (std::vector<bool>{true}));
}

TEST(Cells, CartesianProduct) {
  auto c = parse_study_config(
      R"({"format": "brsdr-study/1", "study": "Sim2", "n": [200, 1000], "omit_x3": [false, true]})");
  EXPECT_EQ(study_cells(c).size(), 4u);
  c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim3", "n": [200], "scenarios": [1, 2, 4]})");
  EXPECT_EQ(study_cells(c).size(), 3u);
}

TEST(Seeds, IndependentOfCellAndWorkers) {
  EXPECT_EQ(replication_seed(5, 3), replication_seed(5, 3));
  EXPECT_NE(replication_seed(5, 3), replication_seed(5, 4));
  EXPECT_NE(replication_seed(5, 3), replication_seed(6, 3));
}

TEST(Aggregate, HandArithmetic) {
  const auto row = aggregate_method({rec(1, 0, 4), rec(2, 3, 5), rec(3, 3, 5, false)}, 2.0);
  EXPECT_EQ(row.R_effective, 2);
  EXPECT_EQ(row.R_requested, 3);
  EXPECT_NEAR(row.cp_percent, 50.0, 1e-12);
  EXPECT_NEAR(row.al, 3.0, 1e-12);
  const auto three = aggregate_method({rec(1, 0, 4), rec(2, 0, 4), rec(3, 0, 4)}, 2.0);
  EXPECT_NEAR(three.bias, 0.0, 1e-15);
  EXPECT_NEAR(three.rmse, std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_THROW(aggregate_method({rec(1, 0, 4, false)}, 2.0), ContractError);
}

TEST(Replication, RerunIsBitIdentical) {
  const auto c = small_sim1(1);
  const auto cell = study_cells(c).front();
  const auto a = run_replication(c, cell, 0);
  const auto b = run_replication(c, cell, 0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(a[k].ok) << a[k].error;
    EXPECT_EQ(a[k].estimate, b[k].estimate);
    EXPECT_EQ(a[k].lower, b[k].lower);
    EXPECT_EQ(a[k].upper, b[k].upper);
  }
}

TEST(Study, ParallelismDoesNotChangeMetrics) {
  auto c1 = small_sim1(1);
  auto c8 = small_sim1(8);
  c1.output_dir = temp_dir("brsdr_w1");
  c8.output_dir = temp_dir("brsdr_w8");
  run_study(c1);
  run_study(c8);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto m1 = slurp(c1.output_dir + "/metrics.tsv");
  EXPECT_FALSE(m1.empty());
  EXPECT_EQ(m1, slurp(c8.output_dir + "/metrics.tsv"));
}

TEST(Study, InjectedFailuresAreExcluded) {
  auto clean = small_sim1(2);
  auto faulty = clean;
  faulty.inject_failures = {1};
  const auto a = run_study(clean, false);
  const auto b = run_study(faulty, false);
  EXPECT_DOUBLE_EQ(b.success_rate[0], 0.75);
  std::vector<Record> kept;
  for (const auto& r : a.records)
    if (r.replication != 1) kept.push_back(r);
  const auto expected = aggregate_metrics(clean, kept);
  ASSERT_EQ(expected.size(), b.metrics.size());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    EXPECT_EQ(b.metrics[k].R_effective, 3);
    EXPECT_EQ(b.metrics[k].R_requested, 4);
    EXPECT_DOUBLE_EQ(b.metrics[k].bias, expected[k].bias);
    EXPECT_DOUBLE_EQ(b.metrics[k].rmse, expected[k].rmse);
    EXPECT_DOUBLE_EQ(b.metrics[k].cp_percent, expected[k].cp_percent);
  }
  for (const auto& r : b.records)
    if (r.replication == 1) {
      EXPECT_FALSE(r.ok);
      EXPECT_NE(r.error.find("injected"), std::string::npos);
    }
}

TEST(Study, ThresholdOnSuccessRate) {
  auto c = small_sim1(1);
  c.methods = {"GLM"};
  c.inject_failures = {0};
  const auto r = run_study(c, false);
  EXPECT_FALSE(r.all_cells_ok(0.9));
  EXPECT_TRUE(r.all_cells_ok(0.75));
}

TEST(Study, FilesAndManifest) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim2", "n": [200, 1000],
    "omit_x3": [false, true], "replications": 2, "methods": ["GLM", "SA"], "base_seed": 17})");
  c.output_dir = temp_dir("brsdr_files");
  const auto res = run_study(c);
  EXPECT_EQ(res.metrics.size(), 8u);
  const auto metrics = read_metrics(c.output_dir + "/metrics.tsv");
  ASSERT_EQ(metrics.size(), 8u);
  EXPECT_NEAR(metrics[3].bias, res.metrics[3].bias, 1e-12 * (1.0 + std::abs(res.metrics[3].bias)));
  EXPECT_EQ(read_records(c.output_dir + "/records.tsv").size(), 16u);
  std::ifstream in(c.output_dir + "/manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["base_seed"], 17u);
  EXPECT_EQ(m["replication_seeds"].size(), 2u);
  EXPECT_EQ(m["replication_seeds"][1], replication_seed(17, 1));
  EXPECT_EQ(m["config_hash"], config_hash(c));
  EXPECT_EQ(m["cells"].size(), 4u);
}

TEST(Study, Sim4SelfCheck) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Sim4", "n": 200, "methods": ["GLM"]})");
  const auto res = run_study(c, false);
  EXPECT_TRUE(res.sim4_check_ok);
  EXPECT_NEAR(res.sim4_check_value, 1.5, 0.01);
}

TEST(Study, UnwritableOutput) {
  auto c = small_sim1(1);
  c.output_dir = "/proc/brsdr_cannot_write";
  EXPECT_THROW(run_study(c), IoError);
}

TEST(Brs, DrawCount) {
  const auto g = dgp::gen_sim1(200, 3);
  const auto agents = build_standard_agents(g.data);
  const auto pred = predict_agents(agents, g.data.covariates());
  const auto brs = run_brs(g.data, pred, SynthesisConfig{}, 1);
  EXPECT_EQ(brs.posterior.draws.size(), 1500);
  EXPECT_EQ(brs.mu1.num_draws(), 1500);
  EXPECT_LE(brs.posterior.interval.lower, brs.posterior.point);
  EXPECT_GE(brs.posterior.interval.upper, brs.posterior.point);
}

TEST(Empirical, MissingFileNamesColumns) {
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Empirical",
    "data": {"path": "/nonexistent/cattaneo.csv"}})");
  try {
    run_empirical(c);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("mbsmoke"), std::string::npos);
  }
}

TEST(Empirical, SyntheticTable) {
  const auto path = (fs::temp_directory_path() / "brsdr_emp.csv").string();
  {
    Rng r(3);
    std::ofstream out(path);
    out << "w,smoke,age,parity\n";
    for (int i = 0; i < 300; ++i) {
      const double age = r.uniform(18, 40), parity = static_cast<double>(i % 4);
      const bool smoke = r.bernoulli(dgp::logistic(-1.0 + 0.03 * (age - 28)));
      out << 3300 - 200 * smoke + 5 * (age - 28) + r.normal(0, 300) << ',' << smoke << ',' << age << ',' << parity
          << '\n';
    }
  }
  auto c = parse_study_config(R"({"format": "brsdr-study/1", "study": "Empirical", "methods": ["GLM", "SA"],
    "data": {"outcome": "w", "treatment": "smoke", "covariates": ["age", "parity"]}})");
  c.data_path = path;
  const auto res = run_empirical(c);
  EXPECT_EQ(res.n, 300);
  ASSERT_EQ(res.rows.size(), 2u);
  EXPECT_EQ(res.rows[0].method, "GLM");
  EXPECT_LT(res.rows[0].value.estimate, 0.0);
  const auto out = (fs::temp_directory_path() / "brsdr_emp_out.tsv").string();
  write_empirical(out, res);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "method\testimate\tse\tlower\tupper\tlength");
}
