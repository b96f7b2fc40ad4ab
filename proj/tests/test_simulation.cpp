#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "cudml/simulation.hpp"

using namespace cudml;

namespace {

SimulationConfig small_config() {
  SimulationConfig c;
  c.n = 300;
  c.share = 0.2;
  c.replications = 6;
  c.estimators = {Method::dml, Method::cu_dml, Method::t_dml};
  ForestParams fp;
  fp.n_trees = 15;
  fp.max_depth = 5;
  fp.min_leaf = 5;
  c.params = LearnerParams::uniform(fp);
  c.workers = 1;
  return c;
}

std::vector<MetricsRow> sample_rows() {
  std::vector<double> e{1.1, 0.9}, lo{0.8, 0.7}, hi{1.2, 1.1};
  auto a = compute_metrics(e, lo, hi, 1.0);
  a.estimator = "DML";
  a.n = 4000;
  a.share = 0.05;
  a.sigma = 1.0;
  auto b = a;
  b.estimator = "CU-DML";
  b.rmse = 0.123456789;
  b.failures = 2;
  return {a, b};
}

}  // namespace

TEST(Metrics, WorkedExample) {
  std::vector<double> e{1.1, 0.9}, lo{0.8, 0.7}, hi{1.2, 1.1};
  auto m = compute_metrics(e, lo, hi, 1.0);
  EXPECT_NEAR(m.rmse, 0.1, 1e-12);
  EXPECT_NEAR(m.abs_bias, 0.0, 1e-12);
  EXPECT_NEAR(m.std_dev, 0.1, 1e-12);
  EXPECT_EQ(m.coverage, 1.0);
  EXPECT_EQ(m.replications_used, 2u);
}

TEST(Metrics, DegenerateCases) {
  std::vector<double> e{2, 2, 2}, lo{3, 3, 3}, hi{4, 4, 4};
  auto m = compute_metrics(e, lo, hi, 2.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.abs_bias, 0.0);
  EXPECT_EQ(m.std_dev, 0.0);
  EXPECT_EQ(m.coverage, 0.0);
  std::vector<double> none;
  EXPECT_THROW(compute_metrics(none, none, none, 0.0), Error);
}

TEST(Metrics, BiasVarianceIdentity) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 1 + rng() % 50;
    std::vector<double> e(r), lo(r), hi(r);
    for (std::size_t i = 0; i < r; ++i) {
      e[i] = 3 * uniform01(rng) - 1;
      lo[i] = e[i] - uniform01(rng);
      hi[i] = e[i] + uniform01(rng);
    }
    auto m = compute_metrics(e, lo, hi, 0.7);
    const double lhs = m.rmse * m.rmse;
    const double rhs = m.signed_bias * m.signed_bias + m.std_dev * m.std_dev;
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(lhs, 1e-300));
    EXPECT_GE(m.coverage, 0.0);
    EXPECT_LE(m.coverage, 1.0);
  }
}

TEST(Table, CsvHeaderRowsAndRoundTrip) {
  auto rows = sample_rows();
  std::vector<MetricsRow> one{rows[0]};
  auto text = emit_table(one, TableFormat::csv);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, text.find('\n')), "estimator,n,share,sigma,rmse,bias,sd,coverage,failures");

  auto csv = emit_table(rows, TableFormat::csv);
  // estimator names are text, so drop that column before numeric parsing
  std::string numeric;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);) numeric += line.substr(line.find(',') + 1) + "\n";
  auto table = parse_csv(numeric);
  ASSERT_EQ(table.rows(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(table.column("rmse")[i], rows[i].rmse);
    EXPECT_EQ(table.column("bias")[i], rows[i].abs_bias);
    EXPECT_EQ(table.column("sd")[i], rows[i].std_dev);
    EXPECT_EQ(table.column("coverage")[i], rows[i].coverage);
    EXPECT_EQ(table.column("failures")[i], static_cast<double>(rows[i].failures));
    EXPECT_EQ(table.column("n")[i], 4000.0);
  }
}

TEST(Table, MarkdownOrderAndFormatting) {
  auto rows = sample_rows();
  auto md = emit_table(rows, TableFormat::markdown);
  std::istringstream in(md);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[2].rfind("| DML |", 0), 0u);
  EXPECT_EQ(lines[3].rfind("| CU-DML |", 0), 0u);
  EXPECT_NE(lines[3].find("| 0.123 |"), std::string::npos) << lines[3];
  EXPECT_NE(lines[2].find("| 0.050 | 1.000 | 0.100 | 0.000 | 0.100 | 1.000 | 0 |"), std::string::npos)
      << lines[2];
  std::vector<MetricsRow> empty;
  EXPECT_THROW(emit_table(empty, TableFormat::markdown), Error);
}

TEST(Replication, DeterministicAndIndexDependent) {
  auto c = small_config();
  auto a = run_replication(c, 3);
  auto b = run_replication(c, 3);
  auto d = run_replication(c, 4);
  EXPECT_EQ(a, b);
  ASSERT_TRUE(a.estimates[0].ok);
  EXPECT_NE(a.estimates[0].theta_hat, d.estimates[0].theta_hat);
}

TEST(Replication, BalancedSmoke) {
  auto c = small_config();
  c.n = 200;
  c.share = 0.5;
  c.estimators = {Method::dml};
  auto r = run_replication(c, 0);
  ASSERT_EQ(r.estimates.size(), 1u);
  ASSERT_TRUE(r.estimates[0].ok) << r.estimates[0].failure;
  EXPECT_TRUE(std::isfinite(r.estimates[0].theta_hat));
  EXPECT_LT(r.estimates[0].ci_low, r.estimates[0].ci_high);
}

TEST(Replication, FailuresAreRecorded) {
  auto c = small_config();
  c.n = 40;
  c.share = 0.01;
  c.replications = 10;
  c.params = LearnerParams::uniform(ForestParams{5, 3, 1, 0, true});
  auto res = run_monte_carlo(c);
  for (const auto& row : res.rows) EXPECT_EQ(row.failures + row.replications_used, 10u);
  EXPECT_GT(res.rows[0].failures, 0u);
}

TEST(MonteCarlo, SingleReplicationHasZeroSd) {
  auto c = small_config();
  c.replications = 1;
  auto res = run_monte_carlo(c);
  for (const auto& row : res.rows) {
    if (row.replications_used == 1) EXPECT_EQ(row.std_dev, 0.0);
  }
}

TEST(MonteCarlo, IndependentOfWorkerCount) {
  auto c = small_config();
  auto one = run_monte_carlo(c);
  c.workers = 3;
  auto three = run_monte_carlo(c);
  EXPECT_EQ(emit_table(one.rows, TableFormat::csv), emit_table(three.rows, TableFormat::csv));
  EXPECT_EQ(one.replications, three.replications);
  ASSERT_EQ(one.rows.size(), 3u);
  EXPECT_EQ(one.rows[1].estimator, "CU-DML");
}

TEST(MonteCarlo, OracleCoverage) {
  SimulationConfig c;
  c.n = 4000;
  c.share = 0.05;
  c.sigma = 1.0;
  c.replications = 200;
  c.estimators = {Method::dml};
  c.nuisances = NuisanceSource::oracle;
  auto res = run_monte_carlo(c);
  EXPECT_GE(res.rows[0].coverage, 0.92);
  EXPECT_LE(res.rows[0].coverage, 0.98);
}

TEST(MonteCarlo, TuningLogsChoices) {
  auto c = small_config();
  c.tune = true;
  c.tuning.replications = 2;
  c.tuning.n_trees = 5;
  c.tuning.grid = {{3, 20}, {kUnboundedDepth, 1}};
  std::ostringstream log;
  auto res = run_monte_carlo(c, &log);
  EXPECT_NE(log.str().find("tuning: outcome_treated -> "), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("tuning: propensity_undersampled -> "), std::string::npos);
  EXPECT_EQ(res.params.propensity.n_trees, 15u);
  EXPECT_TRUE(res.params.propensity.max_depth == 3 || res.params.propensity.max_depth == kUnboundedDepth);
}

TEST(MonteCarlo, SemiSyntheticTruthIsZero) {
  CsvTable t;
  t.names = {"y", "d", "p", "x1", "x2"};
  t.columns.resize(5);
  Rng rng(2);
  for (int i = 0; i < 3000; ++i) {
    const double x1 = uniform01(rng), x2 = uniform01(rng);
    t.columns[0].push_back(x1 + 0.5 * uniform01(rng));
    t.columns[1].push_back(i % 10 == 0 ? 1.0 : 0.0);
    t.columns[2].push_back(0.02 + 0.5 * x1);
    t.columns[3].push_back(x1);
    t.columns[4].push_back(x2);
  }
  auto pool = SemiSyntheticPool::from_table(t, "y", "p");
  EXPECT_EQ(pool.x.cols(), 2u);
  for (double p : pool.pscores) {
    EXPECT_GE(p, 0.05);
    EXPECT_LE(p, 0.95);
  }
  auto c = small_config();
  c.dgp = DgpKind::semi_synthetic;
  c.pool = std::make_shared<SemiSyntheticPool>(pool);
  c.n = 800;
  c.share = 0.1;
  c.replications = 4;
  // small forests leave pure-control leaves and floor plain DML weights
  c.params = LearnerParams::uniform(ForestParams{200, 5, 20, 0, true});
  EXPECT_EQ(true_effect(c), 0.0);
  auto res = run_monte_carlo(c);
  EXPECT_TRUE(std::isnan(res.rows[0].sigma));
  for (const auto& row : res.rows) EXPECT_EQ(row.failures, 0u);
  EXPECT_LT(res.rows[1].rmse, 0.3);
  EXPECT_LT(res.rows[2].rmse, 0.3);
}

TEST(Config, Validation) {
  auto c = small_config();
  c.replications = 0;
  EXPECT_THROW(run_monte_carlo(c), Error);
  c = small_config();
  c.estimators.clear();
  EXPECT_THROW(run_monte_carlo(c), Error);
  c = small_config();
  c.dgp = DgpKind::semi_synthetic;
  EXPECT_THROW(run_monte_carlo(c), Error);
  c = small_config();
  c.k_folds = 1;
  EXPECT_THROW(run_monte_carlo(c), Error);
}

TEST(Workers, EnvironmentOverride) {
  EXPECT_EQ(worker_count(3), 3u);
  setenv("CUDML_WORKERS", "5", 1);
  EXPECT_EQ(worker_count(0), 5u);
  setenv("CUDML_WORKERS", "junk", 1);
  EXPECT_GE(worker_count(0), 1u);
  unsetenv("CUDML_WORKERS");
  EXPECT_GE(worker_count(0), 1u);
}

TEST(Workers, ParallelForRethrows) {
  std::vector<int> out(20, 0);
  parallel_for(20, 4, [&](std::size_t i) { out[i] = static_cast<int>(i); });
  for (int i = 0; i < 20; ++i) EXPECT_EQ(out[i], i);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw std::runtime_error("x");
               }),
               std::runtime_error);
}
