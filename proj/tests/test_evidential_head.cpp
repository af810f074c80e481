#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "eviadapt/evidential_head.hpp"

using namespace eviadapt;

namespace {

FeatureBatch random_features(std::size_t n, std::size_t w, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-scale, scale);
  FeatureBatch f{Matrix(n, w), {}};
  for (auto& v : f.features.data()) v = d(rng);
  return f;
}

}  // namespace

TEST(QuantileConstants, PublishedValues) {
  const auto m = quantile_constants(0.5);
  EXPECT_DOUBLE_EQ(m.tau, 0.0);
  EXPECT_DOUBLE_EQ(m.omega, 8.0);
  const auto lo = quantile_constants(0.25);
  EXPECT_NEAR(lo.tau, 8.0 / 3.0, 1e-15);
  EXPECT_NEAR(lo.omega, 32.0 / 3.0, 1e-14);
  const auto hi = quantile_constants(0.75);
  EXPECT_NEAR(hi.tau, -8.0 / 3.0, 1e-15);
  EXPECT_NEAR(hi.omega, 32.0 / 3.0, 1e-14);
}

TEST(QuantileConstants, RejectsOutsideOpenUnitInterval) {
  for (double q : {0.0, 1.0, -0.2, 1.5, std::nan("")}) EXPECT_THROW(quantile_constants(q), UsageError);
}

TEST(QuantileConstants, SymmetryAboutOneHalf) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(1e-3, 1 - 1e-3);
  for (int i = 0; i < 1000; ++i) {
    const double q = d(rng);
    const auto a = quantile_constants(q), b = quantile_constants(1 - q);
    EXPECT_NEAR(a.tau, -b.tau, 1e-9 * std::max(1.0, std::abs(a.tau)));
    EXPECT_NEAR(a.omega, b.omega, 1e-9 * a.omega);
  }
}

TEST(QuantileSet, Validation) {
  EXPECT_EQ(QuantileSet().values(), (std::vector<double>{0.25, 0.75}));
  EXPECT_THROW(QuantileSet(std::vector<double>{}), UsageError);
  EXPECT_THROW(QuantileSet(std::vector<double>{0.5, 0.25}), UsageError);
  EXPECT_THROW(QuantileSet(std::vector<double>{0.5, 0.5}), UsageError);
  EXPECT_THROW(QuantileSet(std::vector<double>{0.0, 0.5}), UsageError);
  EXPECT_NO_THROW(QuantileSet(std::vector<double>{0.1, 0.5, 0.9}));
}

TEST(EvidentialHead, ZeroPreActivationValues) {
  const QuantileSet q;
  const EvidentialHead head = EvidentialHead::zeros(6, q);
  std::mt19937_64 rng(3);
  const auto out = predict_evidential(head, random_features(4, 6, 1.0, rng));
  const double ln2 = std::log(2.0);
  for (std::size_t i = 0; i < out.gamma.size(); ++i) {
    EXPECT_EQ(out.gamma[i], 0.0);
    EXPECT_NEAR(out.nu[i], ln2, 1e-9);
    EXPECT_NEAR(out.beta[i], ln2, 1e-9);
    EXPECT_NEAR(out.alpha[i], 1.0 + ln2, 1e-9);
  }
}

TEST(EvidentialHead, ConstraintsHoldForExtremeFeatures) {
  const QuantileSet q(std::vector<double>{0.1, 0.5, 0.9});
  std::mt19937_64 rng(4);
  const EvidentialHead head(8, q, 9);
  for (int trial = 0; trial < 1000; ++trial) {
    const double scale = trial % 2 ? 1e3 : 1.0;
    const auto out = predict_evidential(head, random_features(5, 8, scale, rng));
    for (std::size_t i = 0; i < out.nu.size(); ++i) {
      ASSERT_TRUE(std::isfinite(out.gamma[i]));
      ASSERT_GT(out.nu[i], 0.0);
      ASSERT_GT(out.beta[i], 0.0);
      ASSERT_GT(out.alpha[i], 1.0);
      ASSERT_TRUE(std::isfinite(out.nu[i]) && std::isfinite(out.alpha[i]) && std::isfinite(out.beta[i]));
    }
  }
}

TEST(EvidentialHead, RowPermutationPermutesOutputs) {
  const QuantileSet q;
  std::mt19937_64 rng(5);
  const EvidentialHead head(4, q, 2);
  const FeatureBatch f = random_features(6, 4, 2.0, rng);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  FeatureBatch g{Matrix(6, 4), {}};
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) g.features(r, c) = f.features(perm[r], c);
  const auto a = predict_evidential(head, f), b = predict_evidential(head, g);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < q.size(); ++c) {
      EXPECT_EQ(b.gamma(r, c), a.gamma(perm[r], c));
      EXPECT_EQ(b.nu(r, c), a.nu(perm[r], c));
      EXPECT_EQ(b.alpha(r, c), a.alpha(perm[r], c));
      EXPECT_EQ(b.beta(r, c), a.beta(perm[r], c));
    }
}

TEST(EvidentialHead, FeatureWidthMismatchRejected) {
  const EvidentialHead head(4, QuantileSet(), 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(predict_evidential(head, random_features(2, 5, 1.0, rng)), ShapeError);
}

TEST(EvidentialHead, TriplesLayout) {
  EvidentialOutput o{Matrix::row({1, 2}), Matrix::row({3, 4}), Matrix::row({5, 6}), Matrix::row({7, 8})};
  EXPECT_EQ(o.triples(), Matrix::row({3, 4, 5, 6, 7, 8}));
  const Matrix z = o.z_mean();
  EXPECT_DOUBLE_EQ(z[0], 7.0 / 4.0);
  EXPECT_DOUBLE_EQ(z[1], 8.0 / 5.0);
}

TEST(PointRul, MeanOfGamma) {
  EvidentialOutput o{Matrix(1, 2, std::vector<double>{10, 20}), Matrix(1, 2, 1.0), Matrix(1, 2, 2.0),
                     Matrix(1, 2, 1.0)};
  EXPECT_EQ(point_rul(o), std::vector<double>{15.0});

  EvidentialOutput single{Matrix(3, 1, std::vector<double>{4, 5, 6}), Matrix(3, 1, 1.0),
                          Matrix(3, 1, 2.0), Matrix(3, 1, 1.0)};
  EXPECT_EQ(point_rul(single), (std::vector<double>{4, 5, 6}));

  EvidentialOutput flat{Matrix(2, 3, 7.5), Matrix(2, 3, 1.0), Matrix(2, 3, 2.0), Matrix(2, 3, 1.0)};
  EXPECT_EQ(point_rul(flat), (std::vector<double>{7.5, 7.5}));
}

TEST(PointRul, InvariantToQuantileColumnOrder) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(0, 100);
  for (int trial = 0; trial < 50; ++trial) {
    EvidentialOutput o{Matrix(4, 3), Matrix(4, 3, 1.0), Matrix(4, 3, 2.0), Matrix(4, 3, 1.0)};
    for (auto& v : o.gamma.data()) v = std::round(d(rng));  // exact sums in any order
    EvidentialOutput p = o;
    for (std::size_t r = 0; r < 4; ++r) std::swap(p.gamma(r, 0), p.gamma(r, 2));
    EXPECT_EQ(point_rul(o), point_rul(p));
  }
}
