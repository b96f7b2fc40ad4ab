#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <concepts>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cudml/dataset.hpp"
#include "cudml/error.hpp"
#include "cudml/forest.hpp"
#include "cudml/random.hpp"

namespace cudml {

enum class Method { dml, cu_dml, u_dml, w_dml, n_dml, t_dml };

inline constexpr Method kAllMethods[] = {Method::dml,   Method::u_dml, Method::cu_dml,
                                         Method::w_dml, Method::n_dml, Method::t_dml};

constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::dml: return "DML";
    case Method::cu_dml: return "CU-DML";
    case Method::u_dml: return "U-DML";
    case Method::w_dml: return "W-DML";
    case Method::n_dml: return "N-DML";
    case Method::t_dml: return "T-DML";
  }
  return "?";
}

// Accepts "cu-dml", "CU-DML", "cu_dml", ...
inline Method parse_method(std::string_view text) {
  std::string key;
  for (char c : text) key += (c == '_') ? '-' : static_cast<char>(std::tolower(c));
  for (Method m : kAllMethods) {
    std::string name;
    for (char c : method_name(m)) name += static_cast<char>(std::tolower(c));
    if (name == key) return m;
  }
  fail(ErrorCode::InvalidParams, "unknown method '" + std::string(text) + "'");
}

// Propensities fed to the score are clamped into this band before calibration.
inline constexpr double kPropensityFloor = 1e-6;
inline constexpr double kCriticalValue95 = 1.959964;

inline double efficient_score(double y, int d, double mu1, double mu0, double prop) {
  require(prop > 0.0 && prop < 1.0, ErrorCode::PropensityOutOfRange,
          "propensity " + std::to_string(prop) + " outside (0,1)");
  return mu1 - mu0 + d * (y - mu1) / prop - (1 - d) * (y - mu0) / (1.0 - prop);
}

/// Treated-to-control odds, clamped to 1 when treated are not the minority.
inline double estimate_gamma(std::span<const int> d) {
  std::size_t treated = 0;
  for (int v : d) treated += (v == 1);
  const std::size_t controls = d.size() - treated;
  require(controls > 0, ErrorCode::NoControls, "no control observations");
  require(treated > 0, ErrorCode::NoTreated, "no treated observations");
  return std::min(1.0, static_cast<double>(treated) / static_cast<double>(controls));
}

/// Propensity among retained rows when controls are kept with probability gamma.
inline double undersampled_propensity(double p, double gamma) {
  require(p > 0.0 && p < 1.0, ErrorCode::OutOfRange, "p must lie in (0,1)");
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::OutOfRange, "gamma must lie in (0,1]");
  return p / (p + gamma * (1.0 - p));
}

/// Inverse of undersampled_propensity: maps a score learned on the
/// undersampled rows back to the original treated share.
inline double calibrate_propensity(double p_s, double gamma) {
  require(p_s > 0.0 && p_s < 1.0, ErrorCode::OutOfRange, "p_s must lie in (0,1)");
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::OutOfRange, "gamma must lie in (0,1]");
  return gamma * p_s / (gamma * p_s + (1.0 - p_s));
}

// ---------------------------------------------------------------------------
// Nuisance learners

enum class LearnerRole { outcome_treated, outcome_control, propensity, propensity_undersampled };

template <class M>
concept NuisancePredictor = requires(const M& model, const Matrix& x) {
  { model.predict(x) } -> std::convertible_to<std::vector<double>>;
};

/// Anything that turns (rows, target, role) into a predictor. Cross-fitting
/// is written against this so forests, oracles and test doubles share one path.
template <class L>
concept NuisanceLearner =
    requires(const L& learner, const Matrix& x, std::span<const double> t, LearnerRole role,
             Rng& rng) {
      { learner.fit(x, t, role, rng) } -> NuisancePredictor;
    };

struct LearnerParams {
  ForestParams outcome_treated;
  ForestParams outcome_control;
  ForestParams propensity;
  ForestParams propensity_undersampled;

  static LearnerParams uniform(const ForestParams& p) { return {p, p, p, p}; }

  const ForestParams& for_role(LearnerRole role) const {
    switch (role) {
      case LearnerRole::outcome_treated: return outcome_treated;
      case LearnerRole::outcome_control: return outcome_control;
      case LearnerRole::propensity: return propensity;
      case LearnerRole::propensity_undersampled: return propensity_undersampled;
    }
    return propensity;
  }
  ForestParams& for_role(LearnerRole role) {
    return const_cast<ForestParams&>(std::as_const(*this).for_role(role));
  }

  friend bool operator==(const LearnerParams&, const LearnerParams&) = default;
};

struct ForestPredictor {
  FittedModel model;
  std::vector<double> predict(const Matrix& x) const { return cudml::predict(model, x); }
};

/// Random forests for every role: regression for outcomes, classification
/// for propensities. min_leaf is lowered to half the training rows when a
/// fold's arm is too small to host two leaves of the configured size.
struct ForestLearner {
  LearnerParams params;

  ForestPredictor fit(const Matrix& x, std::span<const double> target, LearnerRole role,
                      Rng& rng) const {
    ForestParams p = params.for_role(role);
    p.min_leaf = std::max<std::size_t>(1, std::min(p.min_leaf, x.rows() / 2));
    const bool is_propensity =
        role == LearnerRole::propensity || role == LearnerRole::propensity_undersampled;
    return {fit_forest(x, target, is_propensity ? ForestKind::classification : ForestKind::regression,
                       p, rng)};
  }
};

struct NuisanceEvaluations {
  std::vector<double> mu1;
  std::vector<double> mu0;
  std::vector<double> prop;
};

enum class PropensityMode { plain, undersample_calibrate };

namespace detail {

inline void check_fold_classes(const Dataset& data, const IndexSet& rows, std::size_t k) {
  std::size_t treated = 0;
  for (auto i : rows) treated += (data.d()[i] == 1);
  require(treated > 0 && treated < rows.size(), ErrorCode::DegenerateFold,
          "training complement of fold " + std::to_string(k) + " has " + std::to_string(treated) +
              " treated out of " + std::to_string(rows.size()));
}

inline std::vector<double> treatment_as_double(const Dataset& data, const IndexSet& rows) {
  std::vector<double> t;
  t.reserve(rows.size());
  for (auto i : rows) t.push_back(static_cast<double>(data.d()[i]));
  return t;
}

}  // namespace detail

/// Cross-fitted outcome regressions: for fold k, mu1 is trained on treated
/// rows of the complement, mu0 on its control rows, both evaluated on fold k.
template <NuisanceLearner Learner>
void cross_fit_outcomes(const Dataset& data, const FoldPartition& partition,
                        const Learner& learner, std::uint64_t seed, std::vector<double>& mu1,
                        std::vector<double>& mu0) {
  const std::size_t n = data.size();
  mu1.assign(n, 0.0);
  mu0.assign(n, 0.0);
  // every complement is checked before anything is fit
  for (std::size_t k = 0; k < partition.fold_count(); ++k)
    detail::check_fold_classes(data, partition.complement(k), k);
  for (std::size_t k = 0; k < partition.fold_count(); ++k) {
    const auto train = partition.complement(k);
    IndexSet treated, control;
    for (auto i : train) (data.d()[i] == 1 ? treated : control).push_back(i);
    const auto& eval_rows = partition.fold(k);
    const Matrix eval_x = data.x().select_rows(eval_rows);

    Rng rng1(derive_seed(seed, "outcome_treated", k));
    auto m1 = learner.fit(data.x().select_rows(treated), gather(data.y(), treated),
                          LearnerRole::outcome_treated, rng1);
    Rng rng0(derive_seed(seed, "outcome_control", k));
    auto m0 = learner.fit(data.x().select_rows(control), gather(data.y(), control),
                          LearnerRole::outcome_control, rng0);
    const std::vector<double> p1 = m1.predict(eval_x);
    const std::vector<double> p0 = m0.predict(eval_x);
    for (std::size_t j = 0; j < eval_rows.size(); ++j) {
      mu1[eval_rows[j]] = p1[j];
      mu0[eval_rows[j]] = p0[j];
    }
  }
}

/// Cross-fitted propensity. In undersample_calibrate mode each complement's
/// controls are thinned with probability gamma_hat, the classifier is fit on
/// the survivors, and its clamped output is mapped back through
/// calibrate_propensity. gamma_hat == 1 takes the plain path unchanged.
/// `plain_role` is the learner role of the plain-path classifier; data that
/// is already undersampled uses propensity_undersampled.
template <NuisanceLearner Learner>
std::vector<double> cross_fit_propensity(const Dataset& data, const FoldPartition& partition,
                                         const Learner& learner, PropensityMode mode,
                                         std::optional<double> gamma_hat, std::uint64_t seed,
                                         LearnerRole plain_role = LearnerRole::propensity) {
  const bool undersample = mode == PropensityMode::undersample_calibrate && gamma_hat.has_value() &&
                           *gamma_hat < 1.0;
  if (mode == PropensityMode::undersample_calibrate) {
    require(gamma_hat.has_value(), ErrorCode::InvalidParams,
            "undersample_calibrate needs an estimated gamma");
    require(*gamma_hat > 0.0 && *gamma_hat <= 1.0, ErrorCode::OutOfRange,
            "gamma_hat must lie in (0,1]");
  }
  std::vector<double> prop(data.size(), 0.0);
  for (std::size_t k = 0; k < partition.fold_count(); ++k) {
    auto train = partition.complement(k);
    detail::check_fold_classes(data, train, k);
    const auto& eval_rows = partition.fold(k);
    const Matrix eval_x = data.x().select_rows(eval_rows);

    std::vector<double> raw;
    if (undersample) {
      Rng draw_rng(derive_seed(seed, "undersample", k));
      auto kept = undersample_controls(train, data.d(), *gamma_hat, draw_rng);
      if (std::none_of(kept.begin(), kept.end(), [&](auto i) { return data.d()[i] == 0; }))
        fail(ErrorCode::DegenerateFold,
             "undersampling removed every control in fold " + std::to_string(k));
      Rng fit_rng(derive_seed(seed, "propensity_undersampled", k));
      auto model = learner.fit(data.x().select_rows(kept), detail::treatment_as_double(data, kept),
                               LearnerRole::propensity_undersampled, fit_rng);
      raw = model.predict(eval_x);
    } else {
      Rng fit_rng(derive_seed(seed, "propensity", k));
      auto model = learner.fit(data.x().select_rows(train), detail::treatment_as_double(data, train),
                               plain_role, fit_rng);
      raw = model.predict(eval_x);
    }
    for (std::size_t j = 0; j < eval_rows.size(); ++j) {
      double p = std::clamp(raw[j], kPropensityFloor, 1.0 - kPropensityFloor);
      if (undersample) p = calibrate_propensity(p, *gamma_hat);
      prop[eval_rows[j]] = p;
    }
  }
  return prop;
}

template <NuisanceLearner Learner>
NuisanceEvaluations cross_fit_nuisances(const Dataset& data, const FoldPartition& partition,
                                        const Learner& learner, PropensityMode mode,
                                        std::optional<double> gamma_hat, std::uint64_t seed) {
  require(partition.size() == data.size(), ErrorCode::DimensionMismatch,
          "partition does not match dataset size");
  NuisanceEvaluations out;
  cross_fit_outcomes(data, partition, learner, seed, out.mu1, out.mu0);
  out.prop = cross_fit_propensity(data, partition, learner, mode, gamma_hat, seed);
  return out;
}

// ---------------------------------------------------------------------------
// Point estimate and inference

struct Adjustment {
  enum class Kind { none, winsorize, normalize, truncate_normalize };
  Kind kind = Kind::none;
  double lo = 0.01;
  double hi = 0.99;
  double cap = 0.04;

  static Adjustment none() { return {}; }
  static Adjustment winsorize(double lo = 0.01, double hi = 0.99) {
    return {Kind::winsorize, lo, hi, 0.04};
  }
  static Adjustment normalize() { return {Kind::normalize}; }
  static Adjustment truncate_normalize(double cap = 0.04) {
    return {Kind::truncate_normalize, 0.01, 0.99, cap};
  }
};

inline Adjustment adjustment_for(Method m) {
  switch (m) {
    case Method::w_dml: return Adjustment::winsorize(0.01, 0.99);
    case Method::n_dml: return Adjustment::normalize();
    case Method::t_dml: return Adjustment::truncate_normalize(0.04);
    default: return Adjustment::none();
  }
}

struct Inference {
  double theta_hat = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Influence-function inference: V = mean((s - mean)^2), se = sqrt(V/n).
inline Inference estimate_inference(std::span<const double> scores) {
  require(scores.size() >= 2, ErrorCode::TooFewScores, "inference needs at least two scores");
  const double n = static_cast<double>(scores.size());
  double sum = 0.0;
  for (double s : scores) sum += s;
  const double theta = sum / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - theta) * (s - theta);
  const double se = std::sqrt(ss / n / n);
  return {theta, se, theta - kCriticalValue95 * se, theta + kCriticalValue95 * se};
}

/// Scales non-negative weights to sum to one.
inline std::vector<double> normalize_weights(std::span<const double> w) {
  double sum = 0.0;
  for (double v : w) sum += v;
  require(sum > 0.0, ErrorCode::ZeroWeightSum, "weight group sums to zero");
  std::vector<double> out(w.begin(), w.end());
  for (double& v : out) v /= sum;
  return out;
}

/// Caps normalized weights at `cap`, then normalizes once more. A single
/// pass: after renormalization a weight may sit slightly above the cap.
inline std::vector<double> truncate_weights(std::span<const double> normalized, double cap) {
  require(cap > 0.0, ErrorCode::OutOfRange, "cap must be positive");
  std::vector<double> capped(normalized.begin(), normalized.end());
  for (double& v : capped) v = std::min(v, cap);
  return normalize_weights(capped);
}

/// Winsorized copy of the propensities.
inline std::vector<double> winsorize(std::span<const double> prop, double lo, double hi) {
  std::vector<double> out(prop.begin(), prop.end());
  for (double& p : out) p = std::clamp(p, lo, hi);
  return out;
}

struct EstimateReport {
  double theta_hat = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> scores;
  std::optional<double> gamma_hat;
  double prop_min = 0.0;
  double prop_max = 0.0;
  std::size_t n_effective = 0;

  friend bool operator==(const EstimateReport&, const EstimateReport&) = default;
};

inline void validate(const NuisanceEvaluations& nuis, std::size_t n) {
  require(nuis.mu1.size() == n && nuis.mu0.size() == n && nuis.prop.size() == n,
          ErrorCode::DimensionMismatch, "nuisance evaluations do not match the dataset");
  for (std::size_t i = 0; i < n; ++i) {
    require(std::isfinite(nuis.mu1[i]) && std::isfinite(nuis.mu0[i]), ErrorCode::InvalidDataset,
            "non-finite outcome evaluation at row " + std::to_string(i));
    require(nuis.prop[i] > 0.0 && nuis.prop[i] < 1.0, ErrorCode::PropensityOutOfRange,
            "propensity at row " + std::to_string(i) + " outside (0,1)");
  }
}

/// ATE from cross-fitted nuisances. With normalized weights the per-row
/// score uses n times the normalized weight, so the estimate is still the
/// score mean and inference is shared with the plain estimator.
inline EstimateReport dml_point_estimate(const Dataset& data, const NuisanceEvaluations& nuis,
                                         Adjustment adjustment = {}) {
  const std::size_t n = data.size();
  validate(nuis, n);
  const auto y = data.y();
  const auto d = data.d();

  std::vector<double> prop = nuis.prop;
  if (adjustment.kind == Adjustment::Kind::winsorize)
    prop = winsorize(nuis.prop, adjustment.lo, adjustment.hi);

  EstimateReport report;
  report.scores.resize(n);
  if (adjustment.kind == Adjustment::Kind::none || adjustment.kind == Adjustment::Kind::winsorize) {
    for (std::size_t i = 0; i < n; ++i)
      report.scores[i] = efficient_score(y[i], d[i], nuis.mu1[i], nuis.mu0[i], prop[i]);
  } else {
    std::vector<double> w1(n), w0(n);
    for (std::size_t i = 0; i < n; ++i) {
      w1[i] = d[i] / prop[i];
      w0[i] = (1 - d[i]) / (1.0 - prop[i]);
    }
    // Hajek normalization over the whole sample, separately per arm
    w1 = normalize_weights(w1);
    w0 = normalize_weights(w0);
    if (adjustment.kind == Adjustment::Kind::truncate_normalize) {
      w1 = truncate_weights(w1, adjustment.cap);
      w0 = truncate_weights(w0, adjustment.cap);
    }
    const double scale = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      report.scores[i] = nuis.mu1[i] - nuis.mu0[i] + scale * w1[i] * (y[i] - nuis.mu1[i]) -
                         scale * w0[i] * (y[i] - nuis.mu0[i]);
  }

  const auto inf = estimate_inference(report.scores);
  report.theta_hat = inf.theta_hat;
  report.std_error = inf.std_error;
  report.ci_low = inf.ci_low;
  report.ci_high = inf.ci_high;
  auto [lo, hi] = std::minmax_element(prop.begin(), prop.end());
  report.prop_min = *lo;
  report.prop_max = *hi;
  report.n_effective = n;
  return report;
}

// ---------------------------------------------------------------------------
// Full estimators

struct MethodResult {
  Method method;
  std::optional<EstimateReport> report;
  std::optional<ErrorCode> error;
  std::string message;
};

namespace detail {

template <NuisanceLearner Learner>
class EstimationSession {
 public:
  EstimationSession(const Dataset& data, std::size_t k, const Learner& learner, std::uint64_t seed,
                    LearnerRole propensity_role = LearnerRole::propensity)
      : data_(data), k_(k), learner_(learner), seed_(seed), propensity_role_(propensity_role) {}

  // gamma_hat is reported for every method as an imbalance diagnostic.
  EstimateReport run(Method m) {
    auto report = run_unlabelled(m);
    report.gamma_hat = gamma();
    return report;
  }

 private:
  EstimateReport run_unlabelled(Method m) {
    switch (m) {
      case Method::dml:
      case Method::w_dml:
      case Method::n_dml:
      case Method::t_dml:
        return dml_point_estimate(data_, plain(), adjustment_for(m));
      case Method::cu_dml: {
        const double g = gamma();
        if (g >= 1.0) return dml_point_estimate(data_, plain());
        NuisanceEvaluations nuis;
        nuis.mu1 = outcomes().mu1;
        nuis.mu0 = outcomes().mu0;
        nuis.prop = cross_fit_propensity(data_, partition(), learner_,
                                         PropensityMode::undersample_calibrate, g, seed_);
        return dml_point_estimate(data_, nuis);
      }
      case Method::u_dml: {
        const double g = gamma();
        if (g >= 1.0) return dml_point_estimate(data_, plain());
        std::vector<std::size_t> all(data_.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        Rng draw(derive_seed(seed_, "u_dml_subsample"));
        auto kept = undersample_controls(all, data_.d(), g, draw);
        require(kept.size() >= 2, ErrorCode::DegenerateFold, "undersampled sample too small");
        const Dataset sub = data_.subset(kept);
        EstimationSession inner(sub, k_, learner_, seed_, LearnerRole::propensity_undersampled);
        return inner.run_unlabelled(Method::dml);
      }
    }
    fail(ErrorCode::InvalidParams, "unhandled method");
  }

  double gamma() {
    if (!gamma_) gamma_ = estimate_gamma(data_.d());
    return *gamma_;
  }
  const FoldPartition& partition() {
    if (!partition_) {
      Rng rng(derive_seed(seed_, "partition"));
      partition_ = partition_folds(data_.size(), k_, rng);
    }
    return *partition_;
  }
  const NuisanceEvaluations& outcomes() {
    if (!outcomes_) {
      NuisanceEvaluations e;
      cross_fit_outcomes(data_, partition(), learner_, seed_, e.mu1, e.mu0);
      outcomes_ = std::move(e);
    }
    return *outcomes_;
  }
  const NuisanceEvaluations& plain() {
    if (!plain_) {
      NuisanceEvaluations e = outcomes();
      e.prop = cross_fit_propensity(data_, partition(), learner_, PropensityMode::plain,
                                    std::nullopt, seed_, propensity_role_);
      plain_ = std::move(e);
    }
    return *plain_;
  }

  const Dataset& data_;
  std::size_t k_;
  const Learner& learner_;
  std::uint64_t seed_;
  LearnerRole propensity_role_;
  std::optional<double> gamma_;
  std::optional<FoldPartition> partition_;
  std::optional<NuisanceEvaluations> outcomes_;
  std::optional<NuisanceEvaluations> plain_;
};

inline void check_estimable(const Dataset& data) {
  const auto treated = data.treated_count();
  require(treated > 0, ErrorCode::NoTreated, "no treated observations");
  require(treated < data.size(), ErrorCode::NoControls, "no control observations");
}

}  // namespace detail

/// Runs one estimator end to end. All randomness derives from `seed`:
/// the fold partition, per-fold fits and undersampling draws are keyed by
/// stage and fold, so methods sharing a seed share those draws.
template <NuisanceLearner Learner>
EstimateReport estimate(const Dataset& data, Method method, std::size_t k, const Learner& learner,
                        std::uint64_t seed) {
  detail::check_estimable(data);
  detail::EstimationSession<Learner> session(data, k, learner, seed);
  return session.run(method);
}

/// Several estimators on the same data and seed. Partition and nuisance
/// fits common to several methods are computed once; each result equals
/// what estimate() returns for that method alone. Failures are captured
/// per method.
template <NuisanceLearner Learner>
std::vector<MethodResult> estimate_methods(const Dataset& data, std::span<const Method> methods,
                                           std::size_t k, const Learner& learner,
                                           std::uint64_t seed) {
  std::vector<MethodResult> out;
  detail::EstimationSession<Learner> session(data, k, learner, seed);
  for (Method m : methods) {
    MethodResult r{m, std::nullopt, std::nullopt, {}};
    try {
      detail::check_estimable(data);
      r.report = session.run(m);
    } catch (const Error& e) {
      r.error = e.code();
      r.message = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline EstimateReport estimate(const Dataset& data, Method method, std::size_t k,
                               const LearnerParams& params, std::uint64_t seed) {
  return estimate(data, method, k, ForestLearner{params}, seed);
}

}  // namespace cudml
