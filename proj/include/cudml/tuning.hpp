#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cudml/dataset.hpp"
#include "cudml/error.hpp"
#include "cudml/forest.hpp"
#include "cudml/random.hpp"

namespace cudml {

struct GridPoint {
  std::size_t max_depth = kUnboundedDepth;
  std::size_t min_leaf = 1;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

inline std::string to_string(const GridPoint& g) {
  return "(max_depth=" + depth_label(g.max_depth) + ", min_leaf=" + std::to_string(g.min_leaf) +
         ")";
}

// Tie-break order: shallower first, then larger leaves.
inline bool preferred(const GridPoint& a, const GridPoint& b) {
  if (a.max_depth != b.max_depth) return a.max_depth < b.max_depth;
  return a.min_leaf > b.min_leaf;
}

inline std::vector<GridPoint> default_grid() {
  std::vector<GridPoint> grid;
  for (std::size_t depth : {std::size_t{3}, std::size_t{5}, std::size_t{8}, kUnboundedDepth})
    for (std::size_t leaf : {1, 5, 20, 50}) grid.push_back({depth, leaf});
  return grid;
}

inline ForestParams with_grid_point(ForestParams base, const GridPoint& g) {
  base.max_depth = g.max_depth;
  base.min_leaf = g.min_leaf;
  return base;
}

/// One cross-validation pass: a fresh fold partition, every feasible grid
/// point scored by held-out squared error (the Brier score for 0/1
/// targets). Grid points whose leaves cannot fit in the smallest training
/// split are skipped.
inline GridPoint cv_argmin(const Matrix& x, std::span<const double> target, ForestKind kind,
                           std::span<const GridPoint> grid, std::size_t folds,
                           const ForestParams& base, Rng& rng) {
  require(!grid.empty(), ErrorCode::InvalidParams, "tuning grid is empty");
  require(folds >= 2, ErrorCode::InvalidK, "cross-validation needs at least two folds");
  const std::size_t n = x.rows();
  auto partition = partition_folds(n, folds, rng);
  const std::uint64_t fit_seed = rng();

  std::vector<Matrix> train_x, test_x;
  std::vector<std::vector<double>> train_y, test_y;
  std::size_t smallest_train = n;
  for (std::size_t k = 0; k < folds; ++k) {
    auto train = partition.complement(k);
    const auto& test = partition.fold(k);
    train_x.push_back(x.select_rows(train));
    train_y.push_back(gather(target, train));
    test_x.push_back(x.select_rows(test));
    test_y.push_back(gather(target, test));
    smallest_train = std::min(smallest_train, train.size());
  }

  bool found = false;
  GridPoint best{};
  double best_loss = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (2 * grid[g].min_leaf > smallest_train) continue;
    const auto params = with_grid_point(base, grid[g]);
    double loss = 0.0;
    for (std::size_t k = 0; k < folds; ++k) {
      Rng fit_rng(derive_seed(fit_seed, g * folds + k));
      auto model = fit_forest(train_x[k], train_y[k], kind, params, fit_rng);
      auto pred = predict(model, test_x[k]);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - test_y[k][i];
        loss += e * e;
      }
    }
    loss /= static_cast<double>(n);
    if (!found || loss < best_loss || (loss == best_loss && preferred(grid[g], best))) {
      found = true;
      best = grid[g];
      best_loss = loss;
    }
  }
  require(found, ErrorCode::TooFewRows,
          "no grid point fits " + std::to_string(smallest_train) + " training rows");
  return best;
}

/// Most frequent grid point; ties resolved by preferred().
inline GridPoint modal_choice(std::span<const GridPoint> picks) {
  require(!picks.empty(), ErrorCode::EmptyInput, "no selections to aggregate");
  std::vector<std::pair<GridPoint, std::size_t>> counts;
  for (const auto& p : picks) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](auto& c) { return c.first == p; });
    if (it == counts.end())
      counts.emplace_back(p, 1);
    else
      ++it->second;
  }
  auto best = counts.front();
  for (const auto& c : counts)
    if (c.second > best.second || (c.second == best.second && preferred(c.first, best.first)))
      best = c;
  return best.first;
}

/// Repeated cross-validated grid search: each replication draws a new
/// partition and votes for its argmin, the modal vote wins. Returns `base`
/// with the winning depth and leaf size.
inline ForestParams tune_forest(const Matrix& x, std::span<const double> target, ForestKind kind,
                                std::span<const GridPoint> grid, std::size_t folds,
                                std::size_t replications, Rng& rng, ForestParams base = {}) {
  require(replications >= 1, ErrorCode::InvalidParams, "need at least one tuning replication");
  std::vector<GridPoint> picks;
  picks.reserve(replications);
  for (std::size_t r = 0; r < replications; ++r)
    picks.push_back(cv_argmin(x, target, kind, grid, folds, base, rng));
  return with_grid_point(base, modal_choice(picks));
}

}  // namespace cudml
