#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "eviadapt/encoder.hpp"

using namespace eviadapt;

namespace {

std::vector<TimeWindow> random_windows(std::size_t n, std::size_t m, std::size_t l, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<TimeWindow> out;
  for (std::size_t i = 0; i < n; ++i) {
    TimeWindow w{Matrix(m, l), std::nullopt, static_cast<int>(i / 10 + 1), static_cast<int>(i + l)};
    for (auto& v : w.sensors.data()) v = d(rng);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST(Encoder, ZeroInputZeroParametersGiveZeroFeatures) {
  const EncoderConfig cfg{4, 2, 8, 0.0};
  const LstmEncoder enc = LstmEncoder::zeros(cfg);
  std::vector<TimeWindow> w(3, TimeWindow{Matrix(4, 10), std::nullopt, 1, 10});
  const FeatureBatch f = encode(enc, w);
  ASSERT_EQ(f.features.rows(), 3u);
  ASSERT_EQ(f.features.cols(), 8u);
  for (double v : f.features.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, SingleWindowMatchesRowInsideLargeBatch) {
  const EncoderConfig cfg{5, 2, 12, 0.5};
  const LstmEncoder enc(cfg, 3);
  const auto batch = random_windows(256, 5, 15, 9);
  const FeatureBatch all = encode(enc, batch, Mode::Eval);
  for (std::size_t i : {0u, 77u, 255u}) {
    const FeatureBatch one = encode(enc, std::span<const TimeWindow>(&batch[i], 1), Mode::Eval);
    for (std::size_t c = 0; c < cfg.hidden_size; ++c) EXPECT_EQ(one.features(0, c), all.features(i, c));
  }
}

TEST(Encoder, SeededConstructionIsBitIdentical) {
  const EncoderConfig cfg{3, 3, 6, 0.1};
  const auto w = random_windows(8, 3, 12, 1);
  const FeatureBatch a = encode(LstmEncoder(cfg, 42), w);
  const FeatureBatch b = encode(LstmEncoder(cfg, 42), w);
  EXPECT_EQ(a.features, b.features);
  const FeatureBatch c = encode(LstmEncoder(cfg, 43), w);
  EXPECT_FALSE(a.features == c.features);
}

TEST(Encoder, CloneIsIdenticalAndIndependent) {
  const EncoderConfig cfg{3, 2, 6, 0.0};
  const LstmEncoder src(cfg, 5);
  const auto w = random_windows(6, 3, 10, 2);
  LstmEncoder copy = src.clone();
  for (std::size_t k = 0; k < src.parameters().size(); ++k)
    EXPECT_EQ(copy.parameters()[k].value, src.parameters()[k].value);
  EXPECT_EQ(encode(copy, w).features, encode(src, w).features);

  const Matrix before = encode(src, w).features;
  for (auto& p : copy.parameters())
    for (auto& v : p.value.data()) v += 0.01;
  EXPECT_EQ(encode(src, w).features, before);
  EXPECT_FALSE(encode(copy, w).features == before);
}

TEST(Encoder, InitializationWithinInverseSqrtHidden) {
  const EncoderConfig cfg{14, 5, 32, 0.5};
  const LstmEncoder enc(cfg, 1);
  const double bound = 1.0 / std::sqrt(32.0);
  double lo = 1.0, hi = -1.0;
  for (const auto& p : enc.parameters())
    for (double v : p.value.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.9 * bound);
  EXPECT_GT(hi, 0.9 * bound);
}

TEST(Encoder, OutputShapeForPublishedConfigs) {
  const EncoderConfig configs[] = {{14, 5, 32, 0.5}, {14, 1, 64, 0.1}, {14, 5, 32, 0.1}};
  const auto w = random_windows(7, 14, 30, 4);
  for (const auto& cfg : configs) {
    const FeatureBatch f = encode(LstmEncoder(cfg, 2), w);
    EXPECT_EQ(f.features.rows(), 7u);
    EXPECT_EQ(f.features.cols(), cfg.hidden_size);
    EXPECT_TRUE(f.features.all_finite());
    ASSERT_EQ(f.provenance.size(), 7u);
    EXPECT_EQ(f.provenance[3].unit, w[3].unit);
    EXPECT_EQ(f.provenance[3].cycle, w[3].end_cycle);
  }
}

TEST(Encoder, NonFiniteInputReportsProvenance) {
  const LstmEncoder enc(EncoderConfig{2, 1, 4, 0.0}, 1);
  auto w = random_windows(3, 2, 5, 1);
  w[1].unit = 17;
  w[1].end_cycle = 88;
  w[1].sensors(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    encode(enc, w);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unit 17"), std::string::npos) << msg;
    EXPECT_NE(msg.find("cycle 88"), std::string::npos) << msg;
  }
}

TEST(Encoder, MismatchedWindowShapesRejected) {
  const LstmEncoder enc(EncoderConfig{2, 1, 4, 0.0}, 1);
  auto w = random_windows(2, 2, 5, 1);
  w[1].sensors = Matrix(2, 6);
  EXPECT_THROW(encode(enc, w), ShapeError);
  EXPECT_THROW(encode(enc, random_windows(2, 3, 5, 1)), ShapeError);
}

TEST(Encoder, ConfigValidation) {
  EXPECT_THROW(LstmEncoder(EncoderConfig{2, 0, 4, 0.0}, 1), UsageError);
  EXPECT_THROW(LstmEncoder(EncoderConfig{2, 1, 0, 0.0}, 1), UsageError);
  EXPECT_THROW(LstmEncoder(EncoderConfig{2, 1, 4, 1.0}, 1), UsageError);
  EXPECT_THROW(LstmEncoder(EncoderConfig{2, 1, 4, -0.1}, 1), UsageError);
}

TEST(Encoder, DropoutOnlyInTrainMode) {
  const EncoderConfig cfg{3, 3, 8, 0.5};
  const LstmEncoder enc(cfg, 7);
  const auto w = random_windows(5, 3, 8, 3);
  const Matrix eval1 = encode(enc, w, Mode::Eval).features;
  const Matrix eval2 = encode(enc, w, Mode::Eval).features;
  EXPECT_EQ(eval1, eval2);
  std::mt19937_64 rng(1);
  const Matrix train = encode(enc, w, Mode::Train, &rng).features;
  EXPECT_FALSE(train == eval1);
  EXPECT_THROW(encode(enc, w, Mode::Train, nullptr), UsageError);

  // A single layer has no inter-layer sequence, so train mode changes nothing.
  const LstmEncoder one(EncoderConfig{3, 1, 8, 0.5}, 7);
  EXPECT_EQ(encode(one, w, Mode::Train, &rng).features, encode(one, w, Mode::Eval).features);
}

TEST(Encoder, ParameterGradientsMatchFiniteDifferences) {
  const EncoderConfig cfg{3, 2, 5, 0.0};
  LstmEncoder enc(cfg, 11);
  const auto w = random_windows(4, 3, 6, 5);
  const auto steps = to_time_major(w);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-1, 1);
  Matrix weights(4, cfg.hidden_size);
  for (auto& v : weights.data()) v = d(rng);

  auto loss = [&](LstmEncoder& e, bool grad) {
    ad::Tape t;
    ad::Var f = e.forward(t, steps, Mode::Eval);
    ad::Var y = ad::sum(ad::square(f) * t.constant(weights) + f);
    if (grad) t.backward(y);
    return y.item();
  };
  for (auto& p : enc.parameters()) p.zero_grad();
  loss(enc, true);
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& p : enc.parameters()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss(enc, false);
      p.value[i] = orig - h;
      const double down = loss(enc, false);
      p.value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(p.grad[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - p.grad[i]) / denom);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Encoder, FrozenForwardLeavesParametersUntouched) {
  const EncoderConfig cfg{3, 2, 5, 0.0};
  LstmEncoder enc(cfg, 11);
  const auto steps = to_time_major(random_windows(4, 3, 6, 5));
  ad::Tape t;
  ad::Var f = enc.forward_frozen(t, steps, Mode::Eval);
  t.backward(ad::sum(f));
  for (const auto& p : enc.parameters()) EXPECT_TRUE(p.grad.empty());
}
