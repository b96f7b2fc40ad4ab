#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cudml/error.hpp"
#include "cudml/matrix.hpp"
#include "cudml/random.hpp"

namespace cudml {

using IndexSet = std::vector<std::size_t>;

/// Observations Z_i = (X_i, D_i, Y_i). Immutable once constructed.
class Dataset {
 public:
  Dataset(Matrix x, std::vector<int> d, std::vector<double> y)
      : x_(std::move(x)), d_(std::move(d)), y_(std::move(y)) {
    require(x_.rows() == d_.size() && d_.size() == y_.size(), ErrorCode::InvalidDataset,
            "x, d and y must share the row count");
    require(d_.size() >= 2, ErrorCode::InvalidDataset, "a dataset needs at least two rows");
    for (std::size_t i = 0; i < d_.size(); ++i) {
      require(d_[i] == 0 || d_[i] == 1, ErrorCode::InvalidTreatment,
              "treatment at row " + std::to_string(i) + " is not 0/1");
      require(std::isfinite(y_[i]), ErrorCode::InvalidDataset,
              "non-finite outcome at row " + std::to_string(i));
    }
    for (double v : x_.data())
      require(std::isfinite(v), ErrorCode::InvalidDataset, "non-finite covariate");
  }

  std::size_t size() const noexcept { return d_.size(); }
  std::size_t dim() const noexcept { return x_.cols(); }
  const Matrix& x() const noexcept { return x_; }
  std::span<const int> d() const noexcept { return d_; }
  std::span<const double> y() const noexcept { return y_; }

  std::size_t treated_count() const noexcept {
    return static_cast<std::size_t>(std::count(d_.begin(), d_.end(), 1));
  }
  std::size_t control_count() const noexcept { return size() - treated_count(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    return Dataset(x_.select_rows(rows), gather(std::span<const int>(d_), rows),
                   gather(std::span<const double>(y_), rows));
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Matrix x_;
  std::vector<int> d_;
  std::vector<double> y_;
};

/// K disjoint index sets covering {0..n-1}; sizes differ by at most one.
class FoldPartition {
 public:
  FoldPartition(std::vector<IndexSet> folds, std::size_t n) : folds_(std::move(folds)), n_(n) {}

  std::size_t fold_count() const noexcept { return folds_.size(); }
  std::size_t size() const noexcept { return n_; }
  const IndexSet& fold(std::size_t k) const { return folds_.at(k); }
  const std::vector<IndexSet>& folds() const noexcept { return folds_; }

  // I_{-k}, ascending.
  IndexSet complement(std::size_t k) const {
    std::vector<char> in_fold(n_, 0);
    for (auto i : folds_.at(k)) in_fold[i] = 1;
    IndexSet out;
    out.reserve(n_ - folds_[k].size());
    for (std::size_t i = 0; i < n_; ++i)
      if (!in_fold[i]) out.push_back(i);
    return out;
  }

  friend bool operator==(const FoldPartition&, const FoldPartition&) = default;

 private:
  std::vector<IndexSet> folds_;
  std::size_t n_;
};

/// Uniformly random partition of {0..n-1} into k folds. The first n mod k
/// folds receive one extra index; indices inside a fold are ascending.
inline FoldPartition partition_folds(std::size_t n, std::size_t k, Rng& rng) {
  require(k >= 2 && k <= n, ErrorCode::InvalidK,
          "need 2 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  IndexSet perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<IndexSet> folds(k);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  auto it = perm.begin();
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(it, it + static_cast<std::ptrdiff_t>(len));
    std::sort(folds[f].begin(), folds[f].end());
    it += static_cast<std::ptrdiff_t>(len);
  }
  return FoldPartition(std::move(folds), n);
}

/// Keeps every treated index and each control independently with
/// probability gamma. One uniform draw is consumed per control.
inline IndexSet undersample_controls(std::span<const std::size_t> indices, std::span<const int> d,
                                     double gamma, Rng& rng) {
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::OutOfRange, "gamma must lie in (0, 1]");
  IndexSet kept;
  kept.reserve(indices.size());
  for (auto i : indices) {
    if (d[i] == 1) {
      kept.push_back(i);
    } else if (uniform01(rng) < gamma) {
      kept.push_back(i);
    }
  }
  require(!kept.empty(), ErrorCode::EmptyResult, "undersampling left no observations");
  return kept;
}

}  // namespace cudml
