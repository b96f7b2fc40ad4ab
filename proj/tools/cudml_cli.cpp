// Command-line front end: simulate, estimate, assign.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cudml/cudml.hpp"

namespace {

using namespace cudml;

std::size_t parse_depth(const std::string& text) {
  if (text == "unbounded" || text == "none" || text == "0") return kUnboundedDepth;
  try {
    std::size_t pos = 0;
    const auto v = std::stoul(text, &pos);
    if (pos == text.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidParams, "invalid depth '" + text + "'");
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_method(item));
  require(!out.empty(), ErrorCode::InvalidParams, "no estimators given");
  return out;
}

struct ForestOptions {
  std::string depth = "unbounded";
  std::size_t min_leaf = 1;
  std::size_t trees = 500;
  std::size_t tune_trees = 100;
  std::size_t tune_reps = 20;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--depth", depth, "maximal tree depth (integer or 'unbounded')");
    cmd.add_option("--min-leaf", min_leaf, "minimal observations per leaf")->check(CLI::PositiveNumber);
    cmd.add_option("--trees", trees, "trees per forest")->check(CLI::PositiveNumber);
    cmd.add_option("--tune-trees", tune_trees, "trees per forest while tuning")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--tune-reps", tune_reps, "tuning replications")->check(CLI::PositiveNumber);
  }

  LearnerParams params() const {
    ForestParams p;
    p.n_trees = trees;
    p.max_depth = parse_depth(depth);
    p.min_leaf = min_leaf;
    return LearnerParams::uniform(p);
  }
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
}

// Per-role CV tuning on a single dataset (estimate --tune).
LearnerParams tune_on_data(const Dataset& data, Method method, const ForestOptions& opt,
                           std::uint64_t seed, std::ostream& log) {
  LearnerParams params = opt.params();
  const auto grid = default_grid();
  auto tune_role = [&](LearnerRole role, const IndexSet& rows, bool outcome) {
    std::vector<double> target;
    for (auto i : rows)
      target.push_back(outcome ? data.y()[i] : static_cast<double>(data.d()[i]));
    ForestParams base = params.for_role(role);
    base.n_trees = opt.tune_trees;
    Rng rng(derive_seed(seed, "tune", static_cast<std::uint64_t>(role)));
    auto tuned = tune_forest(data.x().select_rows(rows), target,
                             outcome ? ForestKind::regression : ForestKind::classification, grid, 5,
                             opt.tune_reps, rng, base);
    auto& slot = params.for_role(role);
    slot.max_depth = tuned.max_depth;
    slot.min_leaf = tuned.min_leaf;
    log << "tuning: role " << static_cast<int>(role) << " -> "
        << to_string(GridPoint{tuned.max_depth, tuned.min_leaf}) << "\n";
  };
  IndexSet treated, control, all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.d()[i] == 1 ? treated : control).push_back(i);
    all.push_back(i);
  }
  tune_role(LearnerRole::outcome_treated, treated, true);
  tune_role(LearnerRole::outcome_control, control, true);
  tune_role(LearnerRole::propensity, all, false);
  if (method == Method::cu_dml || method == Method::u_dml) {
    const double g = estimate_gamma(data.d());
    Rng rng(derive_seed(seed, "tune_undersample"));
    auto kept = g < 1.0 ? undersample_controls(all, data.d(), g, rng) : all;
    tune_role(LearnerRole::propensity_undersampled, kept, false);
  } else {
    params.propensity_undersampled = params.propensity;
  }
  return params;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Double machine learning ATE estimators with calibrated undersampling"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "replicated Monte Carlo experiment");
  std::string dgp = "synthetic";
  std::size_t n = 4000, reps = 200, folds = 5, workers = 0;
  double share = 0.05, sigma = 1.0, lambda = 0.0;
  std::string estimators = "dml,cu-dml,u-dml,w-dml,n-dml,t-dml";
  std::uint64_t seed = 42;
  bool tune = false, oracle = false;
  std::string format = "markdown", out_path;
  std::string data_path, pscores, outcome = "y", treatment = "d";
  ForestOptions sim_forest;
  sim->add_option("--dgp", dgp, "synthetic or semi-synthetic")
      ->check(CLI::IsMember({"synthetic", "semi-synthetic", "semi_synthetic"}));
  sim->add_option("--n", n, "sample size")->check(CLI::PositiveNumber);
  sim->add_option("--share", share, "expected share of treated");
  sim->add_option("--sigma", sigma, "outcome noise standard deviation");
  sim->add_option("--reps", reps, "replications")->check(CLI::PositiveNumber);
  sim->add_option("--folds", folds, "cross-fitting folds");
  sim->add_option("--estimators", estimators, "comma-separated estimator list");
  sim->add_option("--seed", seed, "master seed");
  auto* tune_flag = sim->add_flag("--tune", tune, "cross-validate depth and leaf size first");
  sim_forest.add_to(*sim);
  sim->get_option("--depth")->excludes(tune_flag);
  sim->get_option("--min-leaf")->excludes(tune_flag);
  sim->add_flag("--oracle", oracle, "inject the true nuisance functions (synthetic only)");
  sim->add_option("--format", format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));
  sim->add_option("--out", out_path, "write the table here instead of stdout");
  sim->add_option("--data", data_path, "semi-synthetic: CSV pool of observations");
  sim->add_option("--pscores", pscores, "semi-synthetic: fitted propensity column");
  sim->add_option("--outcome", outcome, "outcome column name");
  sim->add_option("--treatment", treatment, "treatment column name");
  sim->add_option("--lambda", lambda, "semi-synthetic: assignment scale (overrides --share)");
  sim->add_option("--workers", workers, "worker threads (default: CUDML_WORKERS or all cores)");

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate the ATE on a CSV dataset");
  std::string est_data, method = "cu-dml";
  std::size_t est_folds = 5;
  std::uint64_t est_seed = 42;
  bool est_tune = false;
  std::string est_outcome = "y", est_treatment = "d";
  std::vector<std::string> exclude;
  ForestOptions est_forest;
  est->add_option("--data", est_data, "CSV file with header")->required();
  est->add_option("--method", method, "dml, cu-dml, u-dml, w-dml, n-dml or t-dml");
  est->add_option("--folds", est_folds, "cross-fitting folds");
  est->add_option("--seed", est_seed, "random seed");
  est->add_option("--outcome", est_outcome, "outcome column name");
  est->add_option("--treatment", est_treatment, "treatment column name");
  est->add_option("--exclude", exclude, "columns not used as covariates")->delimiter(',');
  est->add_flag("--tune", est_tune, "cross-validate depth and leaf size on this data");
  est_forest.add_to(*est);

  // assign
  auto* asg = app.add_subcommand("assign", "assign treatments D = 1{V < p/lambda}");
  std::string asg_data, asg_pscores, asg_out, asg_treatment = "d";
  double asg_lambda = 1.0;
  std::uint64_t asg_seed = 42;
  asg->add_option("--data", asg_data, "CSV file with header")->required();
  asg->add_option("--pscores", asg_pscores, "propensity column")->required();
  asg->add_option("--lambda", asg_lambda, "assignment scale")->required();
  asg->add_option("--seed", asg_seed, "random seed");
  asg->add_option("--treatment", asg_treatment, "name of the written treatment column");
  asg->add_option("--out", asg_out, "output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      SimulationConfig c;
      c.dgp = dgp == "synthetic" ? DgpKind::synthetic : DgpKind::semi_synthetic;
      c.n = n;
      c.share = share;
      c.sigma = sigma;
      c.k_folds = folds;
      c.estimators = parse_methods(estimators);
      c.replications = reps;
      c.master_seed = seed;
      c.tune = tune;
      c.params = sim_forest.params();
      c.tuning.n_trees = sim_forest.tune_trees;
      c.tuning.replications = sim_forest.tune_reps;
      c.nuisances = oracle ? NuisanceSource::oracle : NuisanceSource::forest;
      c.workers = workers;
      c.lambda = lambda;
      if (c.dgp == DgpKind::semi_synthetic) {
        require(!data_path.empty() && !pscores.empty(), ErrorCode::InvalidParams,
                "semi-synthetic design needs --data and --pscores");
        c.pool = std::make_shared<SemiSyntheticPool>(
            SemiSyntheticPool::from_table(read_csv_table(data_path), outcome, pscores, treatment));
      }
      auto result = run_monte_carlo(c, &std::cerr);
      emit(emit_table(result.rows, format == "csv" ? TableFormat::csv : TableFormat::markdown),
           out_path);
    } else if (*est) {
      CsvSchema schema;
      schema.outcome = est_outcome;
      schema.treatment = est_treatment;
      schema.exclude = exclude;
      const Dataset data = load_csv(est_data, schema);
      const Method m = parse_method(method);
      LearnerParams params = est_tune ? tune_on_data(data, m, est_forest, est_seed, std::cerr)
                                      : est_forest.params();
      const auto r = estimate(data, m, est_folds, ForestLearner{params}, est_seed);
      std::cout << "method       " << method_name(m) << "\n"
                << "n            " << data.size() << "\n"
                << "n_effective  " << r.n_effective << "\n"
                << "treated      " << data.treated_count() << "\n"
                << "theta_hat    " << fmt6(r.theta_hat) << "\n"
                << "std_error    " << fmt6(r.std_error) << "\n"
                << "ci95         [" << fmt6(r.ci_low) << ", " << fmt6(r.ci_high) << "]\n"
                << "gamma_hat    " << (r.gamma_hat ? fmt6(*r.gamma_hat) : "-") << "\n"
                << "propensity   [" << fmt6(r.prop_min) << ", " << fmt6(r.prop_max) << "]\n";
    } else if (*asg) {
      auto table = read_csv_table(asg_data);
      Rng rng(asg_seed);
      auto d = semi_synthetic_assign(table.column(asg_pscores), asg_lambda, rng);
      std::vector<double> col(d.begin(), d.end());
      auto idx = table.find(asg_treatment);
      if (idx >= 0) {
        table.columns[static_cast<std::size_t>(idx)] = std::move(col);
      } else {
        table.names.push_back(asg_treatment);
        table.columns.push_back(std::move(col));
      }
      emit(to_csv(table), asg_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
