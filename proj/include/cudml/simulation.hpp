#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cudml/csv.hpp"
#include "cudml/dataset.hpp"
#include "cudml/dgp.hpp"
#include "cudml/error.hpp"
#include "cudml/estimators.hpp"
#include "cudml/random.hpp"
#include "cudml/tuning.hpp"

namespace cudml {

enum class DgpKind { synthetic, semi_synthetic };
enum class NuisanceSource { forest, oracle };
enum class TableFormat { csv, markdown };

/// Control observations resampled by the empirical Monte Carlo design,
/// with their fitted propensities. Treatment is re-assigned each draw, so
/// the true effect is zero.
struct SemiSyntheticPool {
  Matrix x;
  std::vector<double> y;
  std::vector<double> pscores;

  /// Keeps rows whose propensity lies in [lo, hi] and, when the table has
  /// a treatment column, only its controls. Remaining numeric columns other
  /// than outcome, treatment and propensity become covariates.
  static SemiSyntheticPool from_table(const CsvTable& table, const std::string& outcome,
                                      const std::string& pscore_column,
                                      const std::string& treatment = "d", double lo = 0.05,
                                      double hi = 0.95) {
    const auto& y = table.column(outcome);
    const auto& ps = table.column(pscore_column);
    const bool has_d = table.find(treatment) >= 0;
    std::vector<std::size_t> cov;
    for (std::size_t c = 0; c < table.names.size(); ++c) {
      const auto& name = table.names[c];
      if (name == outcome || name == pscore_column || (has_d && name == treatment)) continue;
      cov.push_back(c);
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < table.rows(); ++i) {
      if (has_d && table.column(treatment)[i] != 0.0) continue;
      if (ps[i] < lo || ps[i] > hi) continue;
      keep.push_back(i);
    }
    require(keep.size() >= 2, ErrorCode::EmptyInput, "semi-synthetic pool has fewer than 2 rows");
    SemiSyntheticPool pool;
    pool.x = Matrix(keep.size(), cov.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      for (std::size_t j = 0; j < cov.size(); ++j) pool.x(r, j) = table.columns[cov[j]][keep[r]];
      pool.y.push_back(y[keep[r]]);
      pool.pscores.push_back(ps[keep[r]]);
    }
    return pool;
  }
};

struct TuningOptions {
  std::vector<GridPoint> grid = default_grid();
  std::size_t folds = 5;
  std::size_t replications = 20;
  std::size_t n_trees = 100;  // ensemble size while scoring grid points
};

struct SimulationConfig {
  DgpKind dgp = DgpKind::synthetic;
  std::size_t n = 4000;
  double share = 0.05;
  double sigma = 1.0;
  std::size_t k_folds = 5;
  std::vector<Method> estimators{std::begin(kAllMethods), std::end(kAllMethods)};
  std::size_t replications = 1000;
  std::uint64_t master_seed = 42;
  bool tune = false;
  LearnerParams params;
  TuningOptions tuning;
  NuisanceSource nuisances = NuisanceSource::forest;
  std::shared_ptr<const SemiSyntheticPool> pool;
  double lambda = 0.0;      // semi-synthetic only; 0 derives it from `share`
  std::size_t workers = 0;  // 0 reads CUDML_WORKERS, then hardware concurrency
};

inline void validate(const SimulationConfig& c) {
  require(c.replications >= 1, ErrorCode::InvalidParams, "replications must be >= 1");
  require(!c.estimators.empty(), ErrorCode::InvalidParams, "estimator set is empty");
  require(c.k_folds >= 2 && c.k_folds <= c.n, ErrorCode::InvalidK, "need 2 <= folds <= n");
  require(c.n >= 2, ErrorCode::InvalidParams, "n must be >= 2");
  if (c.dgp == DgpKind::synthetic) {
    alpha_for_share(c.share);
    require(c.sigma >= 0.0, ErrorCode::OutOfRange, "sigma must be >= 0");
  } else {
    require(c.pool != nullptr, ErrorCode::InvalidParams, "semi-synthetic design needs a data pool");
    require(c.nuisances == NuisanceSource::forest, ErrorCode::InvalidParams,
            "oracle nuisances exist only for the synthetic design");
    require(c.lambda > 0.0 || (c.share > 0.0 && c.share < 1.0), ErrorCode::OutOfRange,
            "share must lie in (0,1)");
  }
}

inline double true_effect(const SimulationConfig& c) {
  return c.dgp == DgpKind::synthetic ? 1.0 : 0.0;
}

struct ReplicationData {
  Dataset data;
  std::optional<SyntheticTruth> truth;
};

inline ReplicationData draw_replication_data(const SimulationConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  if (c.dgp == DgpKind::synthetic) {
    auto s = generate_synthetic(c.n, c.share, c.sigma, rng);
    return {std::move(s.data), s.truth};
  }
  const auto& pool = *c.pool;
  const double lambda = c.lambda > 0.0 ? c.lambda : lambda_for_share(pool.pscores, c.share);
  std::vector<std::size_t> rows(c.n);
  const auto m = pool.y.size();
  for (auto& r : rows) r = std::min(m - 1, static_cast<std::size_t>(uniform01(rng) * m));
  std::vector<double> p = gather(std::span<const double>(pool.pscores), rows);
  auto d = semi_synthetic_assign(p, lambda, rng);
  return {Dataset(pool.x.select_rows(rows), std::move(d), gather(std::span<const double>(pool.y), rows)),
          std::nullopt};
}

struct EstimateOutcome {
  bool ok = false;
  double theta_hat = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string failure;

  friend bool operator==(const EstimateOutcome&, const EstimateOutcome&) = default;
};

struct ReplicationResult {
  std::size_t rep_index = 0;
  std::vector<EstimateOutcome> estimates;  // aligned with config.estimators

  friend bool operator==(const ReplicationResult&, const ReplicationResult&) = default;
};

inline std::uint64_t replication_seed(std::uint64_t master, std::size_t rep_index) {
  return derive_seed(master, "replication", rep_index);
}

/// One dataset draw, every configured estimator run on it. Estimator
/// failures (degenerate folds and the like) are recorded, not thrown.
inline ReplicationResult run_replication(const SimulationConfig& c, std::size_t rep_index) {
  const std::uint64_t seed = replication_seed(c.master_seed, rep_index);
  auto draw = draw_replication_data(c, derive_seed(seed, "data"));
  const std::uint64_t est_seed = derive_seed(seed, "estimate");

  std::vector<MethodResult> results;
  if (c.nuisances == NuisanceSource::oracle)
    results = estimate_methods(draw.data, c.estimators, c.k_folds, OracleLearner{*draw.truth},
                               est_seed);
  else
    results = estimate_methods(draw.data, c.estimators, c.k_folds, ForestLearner{c.params},
                               est_seed);

  ReplicationResult out;
  out.rep_index = rep_index;
  for (auto& r : results) {
    EstimateOutcome e;
    if (r.report) {
      e.ok = true;
      e.theta_hat = r.report->theta_hat;
      e.std_error = r.report->std_error;
      e.ci_low = r.report->ci_low;
      e.ci_high = r.report->ci_high;
    } else {
      e.failure = r.message;
    }
    out.estimates.push_back(std::move(e));
  }
  return out;
}

struct MetricsRow {
  std::string estimator;
  std::size_t n = 0;
  double share = 0.0;
  double sigma = 0.0;
  double rmse = 0.0;
  double abs_bias = 0.0;
  double signed_bias = 0.0;
  double std_dev = 0.0;
  double coverage = 0.0;
  std::size_t replications_used = 0;
  std::size_t failures = 0;
};

/// RMSE, |bias|, population sd and CI coverage against `truth`.
inline MetricsRow compute_metrics(std::span<const double> estimates, std::span<const double> ci_lows,
                                  std::span<const double> ci_highs, double truth) {
  require(!estimates.empty(), ErrorCode::EmptyInput, "no estimates to summarize");
  require(ci_lows.size() == estimates.size() && ci_highs.size() == estimates.size(),
          ErrorCode::DimensionMismatch, "estimate and interval sequences differ in length");
  const double r = static_cast<double>(estimates.size());
  double sum = 0.0, sq_err = 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    sum += estimates[i];
    sq_err += (estimates[i] - truth) * (estimates[i] - truth);
    covered += (ci_lows[i] <= truth && truth <= ci_highs[i]);
  }
  const double mean = sum / r;
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);

  MetricsRow row;
  row.rmse = std::sqrt(sq_err / r);
  row.signed_bias = mean - truth;
  row.abs_bias = std::abs(row.signed_bias);
  row.std_dev = std::sqrt(ss / r);
  row.coverage = static_cast<double>(covered) / r;
  row.replications_used = estimates.size();
  return row;
}

inline std::size_t worker_count(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CUDML_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  const auto hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Runs task(i) for i in [0, count) on a pool of threads. Tasks must write
/// only to their own output slot; the first exception is rethrown.
template <class Task>
void parallel_for(std::size_t count, std::size_t workers, Task&& task) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Cross-validated hyperparameter selection over independent tuning
/// datasets: each dataset votes one grid point per learner role, the modal
/// vote is kept. Tuning draws use their own seed stream.
inline LearnerParams tune_learners(const SimulationConfig& c, std::ostream* log = nullptr) {
  bool need_plain = false, need_undersampled = false;
  for (Method m : c.estimators) {
    if (m == Method::cu_dml || m == Method::u_dml)
      need_undersampled = true;
    else
      need_plain = true;
  }
  struct RoleVotes {
    LearnerRole role;
    const char* name;
    bool active;
    std::vector<GridPoint> votes;
  };
  std::vector<RoleVotes> roles{
      {LearnerRole::outcome_treated, "outcome_treated", true, {}},
      {LearnerRole::outcome_control, "outcome_control", true, {}},
      {LearnerRole::propensity, "propensity", need_plain || need_undersampled, {}},
      {LearnerRole::propensity_undersampled, "propensity_undersampled", need_undersampled, {}},
  };

  std::vector<std::vector<std::optional<GridPoint>>> picks(
      c.tuning.replications, std::vector<std::optional<GridPoint>>(roles.size()));
  parallel_for(c.tuning.replications, worker_count(c.workers), [&](std::size_t t) {
    const std::uint64_t seed = derive_seed(c.master_seed, "tuning", t);
    auto draw = draw_replication_data(c, derive_seed(seed, "data"));
    const auto& data = draw.data;
    for (std::size_t r = 0; r < roles.size(); ++r) {
      if (!roles[r].active) continue;
      IndexSet rows;
      std::vector<double> target;
      switch (roles[r].role) {
        case LearnerRole::outcome_treated:
        case LearnerRole::outcome_control: {
          const int arm = roles[r].role == LearnerRole::outcome_treated ? 1 : 0;
          for (std::size_t i = 0; i < data.size(); ++i)
            if (data.d()[i] == arm) rows.push_back(i);
          target = gather(data.y(), rows);
          break;
        }
        case LearnerRole::propensity:
        case LearnerRole::propensity_undersampled: {
          rows.resize(data.size());
          std::iota(rows.begin(), rows.end(), std::size_t{0});
          if (roles[r].role == LearnerRole::propensity_undersampled) {
            try {
              const double g = estimate_gamma(data.d());
              Rng draw_rng(derive_seed(seed, "undersample"));
              if (g < 1.0) rows = undersample_controls(rows, data.d(), g, draw_rng);
            } catch (const Error&) {
              continue;
            }
          }
          for (auto i : rows) target.push_back(static_cast<double>(data.d()[i]));
          break;
        }
      }
      if (rows.size() < c.tuning.folds) continue;
      auto kind = (roles[r].role == LearnerRole::outcome_treated ||
                   roles[r].role == LearnerRole::outcome_control)
                      ? ForestKind::regression
                      : ForestKind::classification;
      ForestParams base = c.params.for_role(roles[r].role);
      base.n_trees = c.tuning.n_trees;
      Rng cv_rng(derive_seed(seed, "cv", r));
      try {
        picks[t][r] = cv_argmin(data.x().select_rows(rows), target, kind, c.tuning.grid,
                                c.tuning.folds, base, cv_rng);
      } catch (const Error&) {
        // this dataset cannot vote for the role (too few rows, one class)
      }
    }
  });

  LearnerParams tuned = c.params;
  for (std::size_t r = 0; r < roles.size(); ++r) {
    if (!roles[r].active) continue;
    for (std::size_t t = 0; t < picks.size(); ++t)
      if (picks[t][r]) roles[r].votes.push_back(*picks[t][r]);
    if (roles[r].votes.empty()) {
      if (log) *log << "tuning: no valid votes for " << roles[r].name << ", keeping defaults\n";
      continue;
    }
    const GridPoint best = modal_choice(roles[r].votes);
    auto& p = tuned.for_role(roles[r].role);
    p = with_grid_point(p, best);
    if (log) {
      const auto wins = std::count(roles[r].votes.begin(), roles[r].votes.end(), best);
      *log << "tuning: " << roles[r].name << " -> " << to_string(best) << " (" << wins << "/"
           << roles[r].votes.size() << " votes)\n";
    }
  }
  return tuned;
}

struct MonteCarloResult {
  std::vector<MetricsRow> rows;  // in configured estimator order
  LearnerParams params;          // learner settings actually used
  std::vector<ReplicationResult> replications;
};

/// Replicated experiment. Replications run on a worker pool, results are
/// collected by index and aggregated in index order, so output does not
/// depend on the number of workers.
inline MonteCarloResult run_monte_carlo(SimulationConfig c, std::ostream* log = nullptr) {
  validate(c);
  if (c.dgp == DgpKind::semi_synthetic && c.lambda <= 0.0)
    c.lambda = lambda_for_share(c.pool->pscores, c.share);
  if (c.tune && c.nuisances == NuisanceSource::forest) c.params = tune_learners(c, log);

  MonteCarloResult out;
  out.params = c.params;
  out.replications.resize(c.replications);
  parallel_for(c.replications, worker_count(c.workers),
               [&](std::size_t r) { out.replications[r] = run_replication(c, r); });

  const double truth = true_effect(c);
  for (std::size_t e = 0; e < c.estimators.size(); ++e) {
    std::vector<double> est, lo, hi;
    std::size_t failures = 0;
    for (const auto& rep : out.replications) {
      const auto& o = rep.estimates[e];
      if (!o.ok) {
        ++failures;
        continue;
      }
      est.push_back(o.theta_hat);
      lo.push_back(o.ci_low);
      hi.push_back(o.ci_high);
    }
    MetricsRow row;
    if (!est.empty()) {
      row = compute_metrics(est, lo, hi, truth);
    } else {
      const double nan = std::nan("");
      row.rmse = row.abs_bias = row.signed_bias = row.std_dev = row.coverage = nan;
    }
    row.estimator = std::string(method_name(c.estimators[e]));
    row.n = c.n;
    row.share = c.share;
    row.sigma = c.dgp == DgpKind::synthetic ? c.sigma : std::nan("");
    row.failures = failures;
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace detail {

inline std::string fixed3(double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace detail

inline std::string emit_table(std::span<const MetricsRow> rows, TableFormat format) {
  require(!rows.empty(), ErrorCode::EmptyInput, "no rows to emit");
  std::string out;
  if (format == TableFormat::csv) {
    out = "estimator,n,share,sigma,rmse,bias,sd,coverage,failures\n";
    for (const auto& r : rows) {
      out += r.estimator + ',' + std::to_string(r.n) + ',' + format_double(r.share) + ',' +
             format_double(r.sigma) + ',' + format_double(r.rmse) + ',' +
             format_double(r.abs_bias) + ',' + format_double(r.std_dev) + ',' +
             format_double(r.coverage) + ',' + std::to_string(r.failures) + '\n';
    }
    return out;
  }
  out = "| estimator | n | share | sigma | rmse | bias | sd | coverage | failures |\n";
  out += "|---|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += "| " + r.estimator + " | " + std::to_string(r.n) + " | " + detail::fixed3(r.share) +
           " | " + detail::fixed3(r.sigma) + " | " + detail::fixed3(r.rmse) + " | " +
           detail::fixed3(r.abs_bias) + " | " + detail::fixed3(r.std_dev) + " | " +
           detail::fixed3(r.coverage) + " | " + std::to_string(r.failures) + " |\n";
  }
  return out;
}

}  // namespace cudml
