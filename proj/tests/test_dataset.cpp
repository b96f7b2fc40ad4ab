#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cudml/dataset.hpp"

using namespace cudml;

namespace {

Dataset tiny(std::vector<int> d) {
  const std::size_t n = d.size();
  Matrix x(n, 1);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i);
    y[i] = 0.5 * static_cast<double>(i);
  }
  return Dataset(std::move(x), std::move(d), std::move(y));
}

void expect_partition_invariants(const FoldPartition& part, std::size_t n, std::size_t k) {
  ASSERT_EQ(part.fold_count(), k);
  std::vector<int> seen(n, 0);
  std::size_t lo = n, hi = 0;
  for (const auto& f : part.folds()) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
    for (auto i : f) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  EXPECT_LE(hi - lo, 1u);
  for (int c : seen) EXPECT_EQ(c, 1);
}

}  // namespace

TEST(Dataset, RejectsMismatchedLengths) {
  EXPECT_THROW(Dataset(Matrix(3, 1), {0, 1}, {0, 0, 0}), Error);
  EXPECT_THROW(Dataset(Matrix(3, 1), {0, 1, 0}, {0, 0}), Error);
}

TEST(Dataset, RejectsTooFewRows) {
  try {
    Dataset(Matrix(1, 1), {1}, {0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidDataset);
  }
}

TEST(Dataset, RejectsNonBinaryTreatment) {
  try {
    Dataset(Matrix(2, 1), {0, 2}, {0.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidTreatment);
  }
}

TEST(Dataset, RejectsNonFinite) {
  EXPECT_THROW(Dataset(Matrix(2, 1), {0, 1}, {0.0, NAN}), Error);
  Matrix x(2, 1);
  x(1, 0) = INFINITY;
  EXPECT_THROW(Dataset(std::move(x), {0, 1}, {0.0, 0.0}), Error);
}

TEST(Dataset, CountsAndSubset) {
  auto data = tiny({1, 0, 0, 1, 0});
  EXPECT_EQ(data.treated_count(), 2u);
  EXPECT_EQ(data.control_count(), 3u);
  std::vector<std::size_t> rows{4, 0};
  auto sub = data.subset(rows);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.d()[0], 0);
  EXPECT_EQ(sub.d()[1], 1);
  EXPECT_DOUBLE_EQ(sub.x()(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(sub.y()[1], 0.0);
}

TEST(PartitionFolds, DivisibleCase) {
  Rng rng(1);
  auto part = partition_folds(10, 5, rng);
  for (const auto& f : part.folds()) EXPECT_EQ(f.size(), 2u);
  expect_partition_invariants(part, 10, 5);
}

TEST(PartitionFolds, RemainderGoesToLeadingFolds) {
  Rng rng(2);
  auto part = partition_folds(11, 5, rng);
  std::vector<std::size_t> sizes;
  for (const auto& f : part.folds()) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
  expect_partition_invariants(part, 11, 5);
}

TEST(PartitionFolds, DeterministicGivenSeed) {
  Rng a(77), b(77), c(78);
  auto pa = partition_folds(50, 4, a);
  auto pb = partition_folds(50, 4, b);
  auto pc = partition_folds(50, 4, c);
  EXPECT_EQ(pa, pb);
  EXPECT_NE(pa, pc);
}

TEST(PartitionFolds, InvalidK) {
  Rng rng(3);
  for (auto [n, k] : {std::pair<std::size_t, std::size_t>{10, 1}, {10, 0}, {5, 6}}) {
    try {
      partition_folds(n, k, rng);
      FAIL() << n << " " << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidK);
    }
  }
}

TEST(PartitionFolds, PropertyOverRandomShapes) {
  Rng meta(123);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + meta() % 200;
    const std::size_t k = 2 + meta() % (n - 1);
    Rng rng(meta());
    expect_partition_invariants(partition_folds(n, k, rng), n, k);
  }
}

TEST(PartitionFolds, ComplementIsSortedRest) {
  Rng rng(4);
  auto part = partition_folds(23, 4, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    auto comp = part.complement(k);
    EXPECT_TRUE(std::is_sorted(comp.begin(), comp.end()));
    EXPECT_EQ(comp.size() + part.fold(k).size(), 23u);
    std::set<std::size_t> all(comp.begin(), comp.end());
    for (auto i : part.fold(k)) EXPECT_FALSE(all.count(i));
  }
}

TEST(PartitionFolds, EveryIndexEquallyLikelyInFirstFold) {
  // uniformity: 20 indices, 4 folds, first fold holds 5 -> each index w.p. 1/4
  Rng rng(5);
  std::vector<int> hits(20, 0);
  const int trials = 8000;
  for (int t = 0; t < trials; ++t)
  {
    const auto part = partition_folds(20, 4, rng);
    for (auto i : part.fold(0)) ++hits[i];
  }
  const double sd = std::sqrt(trials * 0.25 * 0.75);
  for (int h : hits) EXPECT_LT(std::abs(h - trials * 0.25), 4.5 * sd);
}

TEST(Undersample, GammaOneKeepsEverything) {
  std::vector<int> d{0, 1, 0, 0, 1, 0};
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  Rng rng(6);
  EXPECT_EQ(undersample_controls(idx, d, 1.0, rng), idx);
}

TEST(Undersample, TinyGammaKeepsOnlyTreated) {
  std::vector<int> d(1000, 0);
  d[3] = d[500] = 1;
  std::vector<std::size_t> idx(1000);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(7);
  auto kept = undersample_controls(idx, d, 1e-12, rng);
  EXPECT_EQ(kept, (std::vector<std::size_t>{3, 500}));
}

TEST(Undersample, BinomialConcentration) {
  std::vector<int> d(10000, 0);
  std::vector<std::size_t> idx(10000);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(8);
  auto kept = undersample_controls(idx, d, 0.5, rng);
  EXPECT_LT(std::abs(static_cast<double>(kept.size()) - 5000.0), 4 * 50.0);
}

TEST(Undersample, NeverDropsTreatedAndMatchesGammaOnAverage) {
  Rng meta(9);
  double kept_controls = 0, controls = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 50 + meta() % 100;
    std::vector<int> d(n);
    for (auto& v : d) v = (meta() % 5 == 0);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (meta() % 3) idx.push_back(i);
    Rng rng(meta());
    std::vector<std::size_t> kept;
    try {
      kept = undersample_controls(idx, d, 0.3, rng);
    } catch (const Error&) {
      continue;
    }
    EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
    std::set<std::size_t> ks(kept.begin(), kept.end());
    for (auto i : idx) {
      if (d[i] == 1) {
        EXPECT_TRUE(ks.count(i));
      } else {
        controls += 1;
        kept_controls += ks.count(i);
      }
    }
  }
  const double sd = std::sqrt(controls * 0.3 * 0.7);
  EXPECT_LT(std::abs(kept_controls - 0.3 * controls), 4 * sd);
}

TEST(Undersample, EmptyResultAndRange) {
  std::vector<int> d{0, 0, 0};
  std::vector<std::size_t> idx{0, 1, 2};
  Rng rng(10);
  try {
    undersample_controls(idx, d, 1e-15, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyResult);
  }
  EXPECT_THROW(undersample_controls(idx, d, 0.0, rng), Error);
  EXPECT_THROW(undersample_controls(idx, d, 1.5, rng), Error);
}
