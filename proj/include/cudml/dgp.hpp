#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "cudml/dataset.hpp"
#include "cudml/error.hpp"
#include "cudml/estimators.hpp"
#include "cudml/random.hpp"

namespace cudml {

inline constexpr std::size_t kSyntheticDim = 20;

// E[D] = (31/21) * alpha under the synthetic design.
inline constexpr double kShareOverAlpha = 31.0 / 21.0;

/// Beta(2,4) CDF, the regularized incomplete beta I_x(2,4) in closed form.
inline double beta24_cdf(double x) {
  require(x >= 0.0 && x <= 1.0, ErrorCode::OutOfRange, "beta24_cdf argument outside [0,1]");
  const double q = 1.0 - x;
  const double x2 = x * x;
  return 10.0 * x2 * q * q * q + 10.0 * x2 * x * q * q + 5.0 * x2 * x2 * q + x2 * x2 * x;
}

/// Scaled Friedman function: sin(pi x1 x2) + 2(x3 - 0.5)^2 + x4 + 0.5 x5.
inline double friedman_baseline(std::span<const double> x) {
  require(x.size() >= 5, ErrorCode::DimensionTooSmall, "baseline needs five coordinates");
  return std::sin(std::numbers::pi * x[0] * x[1]) + 2.0 * (x[2] - 0.5) * (x[2] - 0.5) + x[3] +
         0.5 * x[4];
}

inline double synthetic_propensity(std::span<const double> x, double alpha) {
  require(alpha > 0.0 && alpha < 0.5, ErrorCode::OutOfRange, "alpha must lie in (0, 0.5)");
  require(x.size() >= 2, ErrorCode::DimensionTooSmall, "propensity needs two coordinates");
  return alpha * (1.0 + beta24_cdf(std::min(x[0], x[1])));
}

inline double alpha_for_share(double share) {
  require(share > 0.0 && share < 31.0 / 42.0, ErrorCode::OutOfRange,
          "treated share must lie in (0, 31/42)");
  return share / kShareOverAlpha;
}

/// Ground truth of the synthetic design; the ATE is E[x1 + x2] = 1.
struct SyntheticTruth {
  double ate = 1.0;
  double alpha = 0.0;
  double sigma = 0.0;

  double mu(int d, std::span<const double> x) const {
    return friedman_baseline(x) + (d - 0.5) * (x[0] + x[1]);
  }
  double mu1(std::span<const double> x) const { return mu(1, x); }
  double mu0(std::span<const double> x) const { return mu(0, x); }
  double propensity(std::span<const double> x) const { return synthetic_propensity(x, alpha); }
};

struct SyntheticSample {
  Dataset data;
  SyntheticTruth truth;
};

/// X ~ U[0,1]^20, D | X ~ Bernoulli(p(X)), Y = b(X) + (D - 0.5)(X1 + X2) + sigma * eps.
/// Per row the stream is consumed as 20 covariate uniforms, one treatment
/// uniform, one standard normal.
inline SyntheticSample generate_synthetic(std::size_t n, double share, double sigma, Rng& rng) {
  require(n >= 2, ErrorCode::InvalidDataset, "need at least two rows");
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::OutOfRange, "sigma must be >= 0");
  SyntheticTruth truth{1.0, alpha_for_share(share), sigma};
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(n, kSyntheticDim);
  std::vector<int> d(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    for (auto& v : row) v = uniform01(rng);
    d[i] = uniform01(rng) < truth.propensity(row) ? 1 : 0;
    const double eps = normal(rng);
    y[i] = truth.mu(d[i], row) + sigma * eps;
  }
  return {Dataset(std::move(x), std::move(d), std::move(y)), truth};
}

struct OracleVariance {
  double v_star = 0.0;
  std::size_t mc_samples = 0;
  double mc_std_error = 0.0;
  double effect_variance = 1.0 / 6.0;  // Var[X1 + X2]
  double mean_inverse_propensity = 0.0;
  double mean_inverse_control_propensity = 0.0;
};

/// Efficiency bound V* = Var[mu1 - mu0] + E[s^2/p] + E[s^2/(1-p)] for the
/// synthetic design. The first term is exact (1/6); the propensity moments
/// are Monte Carlo averages over (X1, X2), the only coordinates p uses.
inline OracleVariance oracle_variance(double share, double sigma, std::size_t mc_samples,
                                      Rng& rng) {
  require(mc_samples >= 10000, ErrorCode::OutOfRange, "need at least 1e4 Monte Carlo samples");
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::OutOfRange, "sigma must be >= 0");
  const double alpha = alpha_for_share(share);
  OracleVariance out;
  out.mc_samples = mc_samples;

  double sum_inv_p = 0.0, sum_inv_q = 0.0, sum_t = 0.0, sum_t2 = 0.0;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const double xy[2] = {uniform01(rng), uniform01(rng)};
    const double p = synthetic_propensity(xy, alpha);
    const double inv_p = 1.0 / p;
    const double inv_q = 1.0 / (1.0 - p);
    sum_inv_p += inv_p;
    sum_inv_q += inv_q;
    sum_t += inv_p + inv_q;
    sum_t2 += (inv_p + inv_q) * (inv_p + inv_q);
  }
  const double m = static_cast<double>(mc_samples);
  out.mean_inverse_propensity = sum_inv_p / m;
  out.mean_inverse_control_propensity = sum_inv_q / m;
  const double mean_t = sum_t / m;
  const double var_t = std::max(0.0, sum_t2 / m - mean_t * mean_t);
  const double s2 = sigma * sigma;
  out.v_star = out.effect_variance + s2 * mean_t;
  out.mc_std_error = s2 * std::sqrt(var_t / m);
  return out;
}

/// D_i = 1{V_i < p_i / lambda} with V_i ~ U[0,1).
inline std::vector<int> semi_synthetic_assign(std::span<const double> p_hat, double lambda,
                                              Rng& rng) {
  require(lambda > 0.0, ErrorCode::OutOfRange, "lambda must be positive");
  std::vector<int> d(p_hat.size());
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    require(p_hat[i] > 0.0 && p_hat[i] < 1.0, ErrorCode::OutOfRange,
            "propensity at row " + std::to_string(i) + " outside (0,1)");
    d[i] = uniform01(rng) < p_hat[i] / lambda ? 1 : 0;
  }
  return d;
}

inline double expected_assigned_share(std::span<const double> p_hat, double lambda) {
  double s = 0.0;
  for (double p : p_hat) s += std::min(p / lambda, 1.0);
  return s / static_cast<double>(p_hat.size());
}

/// lambda whose expected assigned share equals `share` (bisection; the
/// share is decreasing in lambda).
inline double lambda_for_share(std::span<const double> p_hat, double share) {
  require(!p_hat.empty(), ErrorCode::EmptyInput, "no propensities");
  require(share > 0.0 && share < 1.0, ErrorCode::OutOfRange, "share must lie in (0,1)");
  double lo = *std::min_element(p_hat.begin(), p_hat.end());  // share 1 at or below this
  double hi = 1.0;
  while (expected_assigned_share(p_hat, hi) > share) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_assigned_share(p_hat, mid) > share ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Oracle nuisances for the synthetic design, usable wherever a learner is
/// expected: training data are ignored and the true functions returned. The
/// undersampled-propensity role answers with the exact undersampled
/// propensity at the design's gamma.
struct OracleLearner {
  SyntheticTruth truth;

  struct Predictor {
    SyntheticTruth truth;
    LearnerRole role;
    std::vector<double> predict(const Matrix& x) const {
      std::vector<double> out(x.rows());
      const double share = kShareOverAlpha * truth.alpha;
      const double gamma = share / (1.0 - share);
      for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.row(i);
        switch (role) {
          case LearnerRole::outcome_treated: out[i] = truth.mu1(row); break;
          case LearnerRole::outcome_control: out[i] = truth.mu0(row); break;
          case LearnerRole::propensity: out[i] = truth.propensity(row); break;
          case LearnerRole::propensity_undersampled:
            out[i] = undersampled_propensity(truth.propensity(row), std::min(gamma, 1.0));
            break;
        }
      }
      return out;
    }
  };

  Predictor fit(const Matrix&, std::span<const double>, LearnerRole role, Rng&) const {
    return {truth, role};
  }
};

/// Evaluates the true nuisances at every row without any fitting.
inline NuisanceEvaluations oracle_evaluations(const Dataset& data, const SyntheticTruth& truth) {
  NuisanceEvaluations e;
  e.mu1.resize(data.size());
  e.mu0.resize(data.size());
  e.prop.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.x().row(i);
    e.mu1[i] = truth.mu1(row);
    e.mu0[i] = truth.mu0(row);
    e.prop[i] = truth.propensity(row);
  }
  return e;
}

}  // namespace cudml
