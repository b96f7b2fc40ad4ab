#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cudml/error.hpp"
#include "cudml/matrix.hpp"
#include "cudml/random.hpp"

namespace cudml {

enum class ForestKind { regression, classification };

inline constexpr std::size_t kUnboundedDepth = std::numeric_limits<std::size_t>::max();

struct ForestParams {
  std::size_t n_trees = 500;
  std::size_t max_depth = kUnboundedDepth;
  std::size_t min_leaf = 1;
  std::size_t mtry = 0;  // 0 selects the default for the forest kind
  bool bootstrap = true;

  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

/// ceil(p/3) for regression, ceil(sqrt(p)) for classification.
inline std::size_t default_mtry(std::size_t p, ForestKind kind) {
  if (p == 0) return 0;
  if (kind == ForestKind::regression) return std::max<std::size_t>(1, (p + 2) / 3);
  auto m = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  return std::clamp<std::size_t>(m, 1, p);
}

inline std::string depth_label(std::size_t depth) {
  return depth == kUnboundedDepth ? std::string("unbounded") : std::to_string(depth);
}

class Tree {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    double threshold = 0.0;
    double value = 0.0;
  };

  double predict(std::span<const double> row) const {
    std::uint32_t i = 0;
    while (nodes_[i].feature >= 0) {
      const auto& nd = nodes_[i];
      i = row[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[i].value;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, dep] = stack.back();
      stack.pop_back();
      best = std::max(best, dep);
      if (nodes_[i].feature >= 0) {
        stack.emplace_back(nodes_[i].left, dep + 1);
        stack.emplace_back(nodes_[i].right, dep + 1);
      }
    }
    return best;
  }

 private:
  friend class TreeBuilder;
  std::vector<Node> nodes_;
};

/// Random-forest fit. Prediction is a pure function of the model and row.
class FittedModel {
 public:
  ForestKind kind() const noexcept { return kind_; }
  const ForestParams& params() const noexcept { return params_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t train_fingerprint() const noexcept { return fingerprint_; }
  std::size_t tree_count() const noexcept { return trees_.size(); }
  const Tree& tree(std::size_t t) const { return trees_.at(t); }

  double predict_row(std::span<const double> row) const {
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(row);
    double v = sum / static_cast<double>(trees_.size());
    if (kind_ == ForestKind::classification) v = std::clamp(v, 0.0, 1.0);
    return v;
  }

 private:
  friend FittedModel fit_forest(const Matrix&, std::span<const double>, ForestKind,
                                const ForestParams&, Rng&);
  ForestKind kind_ = ForestKind::regression;
  ForestParams params_;
  std::size_t dim_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::vector<Tree> trees_;
};

inline std::uint64_t fingerprint_rows(const Matrix& x, std::span<const double> target) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto data = x.data();
  feed(data.data(), data.size() * sizeof(double));
  feed(target.data(), target.size() * sizeof(double));
  return h;
}

// Grows CART trees on one training set. Feature orderings are sorted once
// per forest; each tree filters them by its bootstrap sample and then
// stably partitions every feature's ordering at each split, so node rows
// are always available in sorted order without re-sorting.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const double> y, const ForestParams& params)
      : n_(x.rows()), p_(x.cols()), y_(y), params_(params) {
    xcol_.resize(n_ * p_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t f = 0; f < p_; ++f) xcol_[f * n_ + i] = x(i, f);

    order_.resize(n_ * p_);
    for (std::size_t f = 0; f < p_; ++f) {
      auto* ord = order_.data() + f * n_;
      std::iota(ord, ord + n_, std::uint32_t{0});
      const double* col = xcol_.data() + f * n_;
      std::stable_sort(ord, ord + n_,
                       [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    weight_.resize(n_);
    wy_.resize(n_);
    sorted_.resize(n_ * p_);
    scratch_.resize(n_);
    go_left_.resize(n_);
    in_bag_.resize(n_);
    features_.resize(p_);
  }

  Tree grow(Rng& rng) {
    const std::size_t mtry = params_.mtry;
    std::fill(weight_.begin(), weight_.end(), 0.0);
    if (params_.bootstrap) {
      for (std::size_t i = 0; i < n_; ++i) {
        auto r = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n_));
        weight_[std::min(r, n_ - 1)] += 1.0;
      }
    } else {
      std::fill(weight_.begin(), weight_.end(), 1.0);
    }
    for (std::size_t i = 0; i < n_; ++i) {
      wy_[i] = weight_[i] * y_[i];
      in_bag_[i] = weight_[i] > 0.0 ? 1 : 0;
    }

    m_ = 0;
    for (std::size_t f = 0; f < p_; ++f) {
      const auto* ord = order_.data() + f * n_;
      auto* dst = sorted_.data() + f * n_;
      std::size_t k = 0;
      for (std::size_t j = 0; j < n_; ++j) {
        dst[k] = ord[j];
        k += in_bag_[ord[j]];
      }
      m_ = k;
    }

    Tree tree;
    struct Pending {
      std::uint32_t node;
      std::size_t begin, end, depth;
    };
    tree.nodes_.emplace_back();
    std::vector<Pending> stack{{0, 0, m_, 0}};
    const double min_leaf = static_cast<double>(params_.min_leaf);

    while (!stack.empty()) {
      Pending cur = stack.back();
      stack.pop_back();

      // node statistics from feature 0's ordering (any feature would do)
      const std::uint32_t* rows0 = sorted_.data() + cur.begin;
      double w_tot = 0.0, s_tot = 0.0;
      double y_min = std::numeric_limits<double>::infinity();
      double y_max = -y_min;
      for (std::size_t j = 0; j < cur.end - cur.begin; ++j) {
        auto r = rows0[j];
        w_tot += weight_[r];
        s_tot += wy_[r];
        y_min = std::min(y_min, y_[r]);
        y_max = std::max(y_max, y_[r]);
      }
      auto& leaf = tree.nodes_[cur.node];
      leaf.value = (y_min == y_max) ? y_min : s_tot / w_tot;

      if (y_min == y_max || cur.depth >= params_.max_depth || w_tot < 2.0 * min_leaf) continue;

      // sample mtry features without replacement, scan them in index order
      std::iota(features_.begin(), features_.end(), std::size_t{0});
      for (std::size_t j = 0; j < mtry; ++j) {
        auto pick = j + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(p_ - j));
        std::swap(features_[j], features_[std::min(pick, p_ - 1)]);
      }
      std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry));

      const double parent_score = s_tot * s_tot / w_tot;
      double best_score = parent_score + 1e-12 * std::max(1.0, std::abs(parent_score));
      std::size_t best_feature = p_;
      double best_threshold = 0.0;

      for (std::size_t fi = 0; fi < mtry; ++fi) {
        const std::size_t f = features_[fi];
        const std::uint32_t* rows = sorted_.data() + f * n_ + cur.begin;
        const double* col = xcol_.data() + f * n_;
        const std::size_t len = cur.end - cur.begin;
        double wl = 0.0, sl = 0.0;
        for (std::size_t j = 0; j + 1 < len; ++j) {
          const auto r = rows[j];
          wl += weight_[r];
          sl += wy_[r];
          if (wl < min_leaf) continue;
          const double wr = w_tot - wl;
          if (wr < min_leaf) break;
          const double xa = col[r];
          const double xb = col[rows[j + 1]];
          if (!(xa < xb)) continue;
          const double sr = s_tot - sl;
          const double score = sl * sl / wl + sr * sr / wr;
          // ties within rounding keep the earlier (feature, threshold)
          if (score > best_score + 1e-12 * std::abs(best_score)) {
            best_score = score;
            best_feature = f;
            double mid = 0.5 * (xa + xb);
            best_threshold = (mid < xb) ? mid : xa;
          }
        }
      }
      if (best_feature == p_) continue;

      // partition every feature's ordering around the split
      const double* split_col = xcol_.data() + best_feature * n_;
      const std::uint32_t* split_rows = sorted_.data() + best_feature * n_ + cur.begin;
      std::size_t n_left = 0;
      double w_left = 0.0;
      for (std::size_t j = 0; j < cur.end - cur.begin; ++j) {
        auto r = split_rows[j];
        bool left = split_col[r] <= best_threshold;
        go_left_[r] = left;
        if (left) {
          ++n_left;
          w_left += weight_[r];
        }
      }
      const double w_right = w_tot - w_left;
      const std::size_t child_depth = cur.depth + 1;
      const bool left_splittable = child_depth < params_.max_depth && w_left >= 2.0 * min_leaf;
      const bool right_splittable = child_depth < params_.max_depth && w_right >= 2.0 * min_leaf;
      // leaves only need their statistics, which feature 0's ordering provides
      const std::size_t parts = (left_splittable || right_splittable) ? p_ : 1;
      for (std::size_t f = 0; f < parts; ++f) {
        std::uint32_t* rows = sorted_.data() + f * n_ + cur.begin;
        const std::size_t len = cur.end - cur.begin;
        std::size_t li = 0;
        std::uint32_t* right_buf = scratch_.data();
        for (std::size_t j = 0; j < len; ++j) {
          const auto r = rows[j];
          rows[li] = r;
          right_buf[j - li] = r;
          li += go_left_[r];
        }
        std::memcpy(rows + li, right_buf, (len - li) * sizeof(std::uint32_t));
      }

      const auto left_id = static_cast<std::uint32_t>(tree.nodes_.size());
      tree.nodes_.emplace_back();
      tree.nodes_.emplace_back();
      auto& parent = tree.nodes_[cur.node];
      parent.feature = static_cast<std::int32_t>(best_feature);
      parent.threshold = best_threshold;
      parent.left = left_id;
      parent.right = left_id + 1;
      stack.push_back({left_id + 1, cur.begin + n_left, cur.end, child_depth});
      stack.push_back({left_id, cur.begin, cur.begin + n_left, child_depth});
    }
    return tree;
  }

 private:
  std::size_t n_, p_;
  std::span<const double> y_;
  ForestParams params_;
  std::vector<double> xcol_;
  std::vector<std::uint32_t> order_;
  std::vector<double> weight_, wy_;
  std::vector<std::uint32_t> sorted_, scratch_;
  std::vector<unsigned char> go_left_, in_bag_;
  std::vector<std::size_t> features_;
  std::size_t m_ = 0;
};

/// Fits a random forest of CART trees. Regression splits minimize
/// within-node squared error; for 0/1 targets that criterion coincides with
/// Gini impurity, and leaf values are class-1 proportions.
inline FittedModel fit_forest(const Matrix& x, std::span<const double> target, ForestKind kind,
                              const ForestParams& params, Rng& rng) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  require(target.size() == n, ErrorCode::DimensionMismatch, "target length differs from rows");
  require(p >= 1, ErrorCode::DimensionMismatch, "need at least one covariate");
  require(params.n_trees >= 1, ErrorCode::InvalidParams, "n_trees must be >= 1");
  require(params.min_leaf >= 1, ErrorCode::InvalidParams, "min_leaf must be >= 1");
  require(params.max_depth >= 1, ErrorCode::InvalidParams, "max_depth must be >= 1");
  require(params.mtry <= p, ErrorCode::InvalidParams, "mtry exceeds covariate count");
  require(n >= 2 * params.min_leaf && n >= 2, ErrorCode::TooFewRows,
          std::to_string(n) + " rows cannot host two leaves of " +
              std::to_string(params.min_leaf));
  for (double t : target) require(std::isfinite(t), ErrorCode::InvalidDataset, "non-finite target");
  if (kind == ForestKind::classification) {
    bool has0 = false, has1 = false;
    for (double t : target) {
      require(t == 0.0 || t == 1.0, ErrorCode::InvalidParams, "classification target not 0/1");
      (t == 1.0 ? has1 : has0) = true;
    }
    require(has0 && has1, ErrorCode::SingleClass, "classification target has a single class");
  }

  FittedModel model;
  model.kind_ = kind;
  model.params_ = params;
  if (model.params_.mtry == 0) model.params_.mtry = default_mtry(p, kind);
  model.dim_ = p;
  model.fingerprint_ = fingerprint_rows(x, target);

  const std::uint64_t forest_seed = rng();
  TreeBuilder builder(x, target, model.params_);
  model.trees_.reserve(params.n_trees);
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    Rng tree_rng(derive_seed(forest_seed, "tree", t));
    model.trees_.push_back(builder.grow(tree_rng));
  }
  return model;
}

inline std::vector<double> predict(const FittedModel& model, const Matrix& x) {
  require(x.cols() == model.dim(), ErrorCode::DimensionMismatch,
          "model trained on " + std::to_string(model.dim()) + " columns, got " +
              std::to_string(x.cols()));
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = model.predict_row(x.row(i));
  return out;
}

inline std::vector<double> predict_tree(const FittedModel& model, std::size_t t, const Matrix& x) {
  require(x.cols() == model.dim(), ErrorCode::DimensionMismatch, "column count mismatch");
  const auto& tree = model.tree(t);
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = tree.predict(x.row(i));
  return out;
}

}  // namespace cudml
