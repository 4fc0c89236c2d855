// Copyright (c) 2026 The dfq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "dfq/ops.hpp"
#include "dfq/quantizer.hpp"
#include "support.hpp"

using namespace dfq;
using dfq::testing::error_code;

TEST(Quantize, HandExamples) {
  EXPECT_EQ(quantize(Tensor({1}, {0.0}), 2.0, 4).ints, std::vector<std::int32_t>{0});

  // S = 4/15; 2 / S = 7.5 rounds away from zero to 8 and clamps to 7.
  const QuantizedTensor q = quantize(Tensor({3}, {-2.0, 1.0, 2.0}), 2.0, 4);
  EXPECT_EQ(q.ints, (std::vector<std::int32_t>{-8, 4, 7}));
  EXPECT_DOUBLE_EQ(q.scale, 4.0 / 15.0);
  EXPECT_EQ(q.bits, 4);

  EXPECT_EQ(quantize(Tensor({1}, {1.0}), 1.0, 8).ints, std::vector<std::int32_t>{127});
}

TEST(Quantize, TiesRoundAwayFromZero) {
  const double s = quant_scale(1.0, 8);
  const QuantizedTensor q = quantize(Tensor({4}, {0.5 * s, -0.5 * s, 2.5 * s, -2.5 * s}), 1.0, 8);
  EXPECT_EQ(q.ints, (std::vector<std::int32_t>{1, -1, 3, -3}));
}

TEST(Dequantize, HandExamples) {
  QuantizedTensor q;
  q.shape = {3};
  q.ints = {-8, 4, 7};
  q.scale = 4.0 / 15.0;
  q.clip = 2.0;
  q.bits = 4;
  const Tensor x = dequantize(q);
  EXPECT_NEAR(x[0], -2.1333, 1e-4);
  EXPECT_NEAR(x[1], 1.0667, 1e-4);
  EXPECT_NEAR(x[2], 1.8667, 1e-4);

  q.shape = {1};
  q.ints = {0};
  EXPECT_EQ(dequantize(q)[0], 0.0);
}

TEST(FakeQuantize, HandExamples) {
  EXPECT_EQ(fake_quantize(Tensor({1}, {0.1}), 2.0, 4)[0], 0.0);
  EXPECT_NEAR(fake_quantize(Tensor({1}, {1.0}), 2.0, 4)[0], 1.0667, 1e-4);
}

TEST(FakeQuantize, GridPointsAreFixed) {
  for (int bits : {2, 4, 8}) {
    const double s = quant_scale(1.5, bits);
    for (int k = quant_min(bits) + 1; k <= quant_max(bits); ++k) {
      const double x = k * s;
      EXPECT_EQ(fake_quantize(Tensor({1}, {x}), 1.5, bits)[0], x) << "bits " << bits << " k " << k;
    }
  }
}

TEST(Quantize, ScaleIdentity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1e-3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double alpha = u(rng);
    for (int bits = 2; bits <= 16; ++bits) {
      const double s = quant_scale(alpha, bits);
      const double lhs = s * (std::ldexp(1.0, bits) - 1.0);
      EXPECT_LE(std::abs(lhs - 2.0 * alpha), std::abs(std::nextafter(2.0 * alpha, 1e300) - 2.0 * alpha));
    }
  }
}

TEST(Quantize, Errors) {
  EXPECT_EQ(error_code([] { quantize(Tensor({1}, {1.0}), 0.0, 4); }), Errc::InvalidRange);
  EXPECT_EQ(error_code([] { quantize(Tensor({1}, {1.0}), -1.0, 4); }), Errc::InvalidRange);
  EXPECT_EQ(error_code([] { quantize(Tensor({1}, {1.0}), 1.0, 1); }), Errc::InvalidRange);
  EXPECT_EQ(error_code([] { quantize(Tensor({1}, {1.0}), 1.0, 17); }), Errc::InvalidRange);
  EXPECT_EQ(error_code([] { quantize(Tensor({1}, {std::nan("")}), 1.0, 4); }), Errc::InvalidInput);
  EXPECT_EQ(error_code([] { fake_quantize(Tensor({1}, {INFINITY}), 1.0, 4); }), Errc::InvalidInput);
}

TEST(QuantConfig, Validation) {
  QuantConfig c;
  EXPECT_NO_THROW(c.validate());
  c.weight_bits = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.act_bits = 17;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.range_momentum = 1.5;
  EXPECT_THROW(c.validate(), Error);
}

// Randomized properties over many small tensors.
class QuantizerProperty : public ::testing::TestWithParam<int> {};

TEST_P(QuantizerProperty, ErrorBoundIdempotenceAndRange) {
  const int bits = GetParam();
  std::mt19937_64 rng(100 + bits);
  std::uniform_real_distribution<double> ua(0.01, 10.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double alpha = ua(rng);
    const double s = quant_scale(alpha, bits);
    const Tensor x = dfq::testing::random_tensor({16}, rng, -alpha, alpha);
    const Tensor fq = fake_quantize(x, alpha, bits);
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LE(std::abs(x[i] - fq[i]), s / 2 * (1 + 1e-12));
    ASSERT_EQ(fake_quantize(fq, alpha, bits), fq);

    const Tensor wide = dfq::testing::random_tensor({16}, rng, -10 * alpha, 10 * alpha);
    for (auto v : quantize(wide, alpha, bits).ints) {
      ASSERT_GE(v, quant_min(bits));
      ASSERT_LE(v, quant_max(bits));
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Bits, QuantizerProperty, ::testing::Values(2, 4, 8));

TEST(FakeQuantSte, GradientPassesInsideRangeOnly) {
  const double alpha = 1.0;
  Var x = parameter(Tensor({4}, {-0.37, 0.21, 1.7, -2.4}));
  Var y = ops::fake_quant_ste(x, alpha, 4);
  backward(ops::linear(ops::reshape(y, {1, 4}), constant(Tensor({1, 4}, {1.0, 2.0, 3.0, 4.0})), nullptr));
  EXPECT_EQ(x->grad[0], 1.0);
  EXPECT_EQ(x->grad[1], 2.0);
  EXPECT_EQ(x->grad[2], 0.0);
  EXPECT_EQ(x->grad[3], 0.0);
}

TEST(FakeQuantSte, MatchesIdentityGradientInsideRange) {
  // Loss ||fq(x) - t||^2: the STE gradient is 2 (fq(x) - t), the
  // identity-replaced gradient evaluated at the quantized point.
  std::mt19937_64 rng(9);
  const Tensor t = dfq::testing::random_tensor({8}, rng);
  Var x = parameter(dfq::testing::random_tensor({8}, rng, -0.9, 0.9));
  Var y = ops::fake_quant_ste(x, 1.0, 8);
  backward(ops::sq_dist(y, t));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(x->grad[i], 2.0 * (y->value[i] - t[i]));
}

TEST(RangeTracker, ObserveRule) {
  RangeTracker t(0.1);
  EXPECT_FALSE(t.initialized());
  EXPECT_EQ(error_code([&] { (void)t.alpha(); }), Errc::UninitializedTracker);
  t.observe(Tensor({2}, {-3.0, 1.0}));
  EXPECT_EQ(t.running_max(), 3.0);
  t.observe(Tensor({2}, {5.0, -1.0}));
  EXPECT_NEAR(t.running_max(), 3.2, 1e-15);

  RangeTracker still(0.0);
  still.observe(Tensor({1}, {3.0}));
  still.observe(Tensor({1}, {50.0}));
  EXPECT_EQ(still.running_max(), 3.0);
}

TEST(RangeTracker, FreezeStopsUpdates) {
  RangeTracker t(0.5);
  EXPECT_EQ(error_code([&] { t.freeze(); }), Errc::UninitializedTracker);
  t.observe(Tensor({1}, {3.0}));
  t.freeze();
  EXPECT_TRUE(t.frozen());
  EXPECT_EQ(error_code([&] { t.observe(Tensor({1}, {9.0})); }), Errc::FrozenTracker);
  EXPECT_EQ(t.alpha(), 3.0);
  EXPECT_EQ(t.running_max(), 3.0);
}

TEST(RangeTracker, Validation) {
  EXPECT_EQ(error_code([] { RangeTracker t(-0.1); }), Errc::InvalidRange);
  RangeTracker t(0.1);
  EXPECT_EQ(error_code([&] { t.observe(Tensor({1}, {std::nan("")})); }), Errc::InvalidInput);
}
