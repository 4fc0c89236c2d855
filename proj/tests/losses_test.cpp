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
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dfq/classifier.hpp"
#include "dfq/generator.hpp"
#include "dfq/losses.hpp"
#include "dfq/ops.hpp"
#include "dfq/stats.hpp"
#include "support.hpp"
#include "toy_graph.hpp"

using namespace dfq;
using dfq::testing::error_code;
using dfq::testing::gradcheck;
using dfq::testing::random_tensor;
using dfq::testing::ToyGraph;

namespace {

Var scalar(double v) { return constant(Tensor::scalar(v)); }

ClassStat stat(int layer, int cls, std::vector<double> mean, std::vector<double> std) {
  const int c = static_cast<int>(mean.size());
  return {layer, cls, 2, parameter(Tensor({c}, std::move(mean))), parameter(Tensor({c}, std::move(std)))};
}

ClassBatchStats stats_of(std::vector<ClassStat> entries, int num_classes) {
  ClassBatchStats s;
  s.num_layers = 1;
  s.num_classes = num_classes;
  s.entries = std::move(entries);
  return s;
}

}  // namespace

TEST(CrossEntropy, Examples) {
  Var uniform = constant(Tensor({2, 10}));
  EXPECT_NEAR(ce_loss(uniform, std::vector<int>{3, 7})->value[0], std::log(10.0), 1e-12);

  // Exact value log(1 + (K - 1) e^-20); below 1e-8 only for K <= 4.
  Tensor confident({1, 10});
  confident[4] = 20.0;
  EXPECT_NEAR(ce_loss(constant(confident), std::vector<int>{4})->value[0], std::log1p(9.0 * std::exp(-20.0)), 1e-12);
  EXPECT_LE(ce_loss(constant(Tensor({1, 2}, {0.0, 20.0})), std::vector<int>{1})->value[0], 1e-8);

  std::mt19937_64 rng(1);
  const Tensor z = random_tensor({3, 4}, rng, -3, 3);
  const std::vector<int> y = {0, 3, 1};
  const int perm[4] = {2, 0, 3, 1};
  Tensor zp({3, 4});
  std::vector<int> yp(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 4; ++k) zp[i * 4 + perm[k]] = z[i * 4 + k];
    yp[i] = perm[y[i]];
  }
  EXPECT_NEAR(ce_loss(constant(z), y)->value[0], ce_loss(constant(zp), yp)->value[0], 1e-14);
}

TEST(BnsLoss, Examples) {
  BNLayerParams p = BNLayerParams::make(1);
  p.running_mu = Tensor({1}, {0.25});
  p.running_sigma = Tensor({1}, {2.0});
  BnTaps taps;
  taps.mean = {constant(Tensor({1}, {0.75}))};
  taps.std = {constant(Tensor({1}, {2.0}))};
  const BNLayerParams* one[] = {&p};
  EXPECT_DOUBLE_EQ(bns_loss(taps, one)->value[0], 0.25);

  taps.mean[0] = constant(Tensor({1}, {0.25}));
  EXPECT_EQ(bns_loss(taps, one)->value[0], 0.0);

  BNLayerParams q = BNLayerParams::make(2);
  q.running_mu = Tensor({2}, {1.0, -1.0});
  q.running_sigma = Tensor({2}, {1.0, 1.0});
  BnTaps two = taps;
  two.mean[0] = constant(Tensor({1}, {0.75}));
  two.mean.push_back(constant(Tensor({2}, {0.0, 0.0})));
  two.std.push_back(constant(Tensor({2}, {1.5, 1.0})));
  const BNLayerParams* both[] = {&p, &q};
  const BNLayerParams* second[] = {&q};
  BnTaps only_second;
  only_second.mean = {two.mean[1]};
  only_second.std = {two.std[1]};
  EXPECT_DOUBLE_EQ(bns_loss(two, both)->value[0], 0.25 + bns_loss(only_second, second)->value[0]);

  EXPECT_EQ(error_code([&] { bns_loss(taps, both); }), Errc::ShapeMismatch);
}

TEST(FdaLoss, Examples) {
  CentroidBank bank(1, 0, 3, {2}, 0.2);
  bank.set(0, 0, Tensor({2}, {0.0, 0.0}), Tensor({2}, {1.0, 1.0}));
  bank.set(0, 1, Tensor({2}, {1.0, 1.0}), Tensor({2}, {1.0, 1.0}));

  EXPECT_EQ(fda_loss(stats_of({stat(0, 0, {0, 0}, {1, 1})}, 3), bank)->value[0], 0.0);
  const auto a = stats_of({stat(0, 0, {1, 0}, {1, 2})}, 3);
  EXPECT_EQ(fda_loss(a, bank)->value[0], 2.0);
  const auto b = stats_of({stat(0, 1, {3, 1}, {1, 1})}, 3);
  const auto ab = stats_of({a.entries[0], b.entries[0]}, 3);
  EXPECT_EQ(fda_loss(ab, bank)->value[0], fda_loss(a, bank)->value[0] + fda_loss(b, bank)->value[0]);

  // Class 2 has no centroid, so its entry is skipped.
  const auto with_unset = stats_of({a.entries[0], stat(0, 2, {9, 9}, {9, 9})}, 3);
  EXPECT_EQ(fda_loss(with_unset, bank)->value[0], 2.0);
  EXPECT_EQ(fda_loss(stats_of({}, 3), bank)->value[0], 0.0);
}

TEST(FdaLoss, OrderInvariantAndHomogeneous) {
  CentroidBank bank(1, 0, 2, {3}, 0.2);
  bank.set(0, 0, Tensor({3}, {0.1, 0.2, 0.3}), Tensor({3}, {1, 1, 1}));
  bank.set(0, 1, Tensor({3}, {-1, 0, 1}), Tensor({3}, {2, 2, 2}));
  const ClassStat s0 = stat(0, 0, {0.5, 0.2, -0.3}, {1.5, 0.5, 1.0});
  const ClassStat s1 = stat(0, 1, {0.0, 1.0, 1.0}, {2.5, 2.0, 1.0});
  EXPECT_EQ(fda_loss(stats_of({s0, s1}, 2), bank)->value[0], fda_loss(stats_of({s0, s1}, 2), bank)->value[0]);
  EXPECT_NEAR(fda_loss(stats_of({s0, s1}, 2), bank)->value[0], fda_loss(stats_of({s1, s0}, 2), bank)->value[0], 1e-15);

  // Residuals scaled by k give k^2 times the loss.
  const double k = 3.0;
  auto scaled = [&](const ClassStat& s) {
    std::vector<double> m, d;
    for (std::size_t i = 0; i < 3; ++i) {
      m.push_back(bank.mean(0, s.cls)[i] + k * (s.mean->value[i] - bank.mean(0, s.cls)[i]));
      d.push_back(bank.std(0, s.cls)[i] + k * (s.std->value[i] - bank.std(0, s.cls)[i]));
    }
    return stat(0, s.cls, m, d);
  };
  EXPECT_NEAR(fda_loss(stats_of({scaled(s0), scaled(s1)}, 2), bank)->value[0],
              k * k * fda_loss(stats_of({s0, s1}, 2), bank)->value[0], 1e-12);
}

TEST(DeLoss, ZeroNoiseEqualsFda) {
  CentroidBank bank(1, 0, 2, {2}, 0.2);
  bank.set(0, 0, Tensor({2}, {0.3, -0.1}), Tensor({2}, {1.0, 0.7}));
  const auto s = stats_of({stat(0, 0, {1, 0}, {1, 2}), stat(0, 1, {5, 5}, {5, 5})}, 2);
  DEConfig cfg{0.0, 0.0, 42};
  EXPECT_EQ(de_loss(s, bank, cfg, 7)->value[0], fda_loss(s, bank)->value[0]);
}

TEST(DeLoss, DeterministicPerStep) {
  CentroidBank bank(1, 0, 2, {2}, 0.2);
  bank.set(0, 0, Tensor({2}, {0.3, -0.1}), Tensor({2}, {1.0, 0.7}));
  const auto s = stats_of({stat(0, 0, {1, 0}, {1, 2})}, 2);
  DEConfig cfg{0.3, 0.15, 42};
  EXPECT_EQ(de_loss(s, bank, cfg, 3)->value[0], de_loss(s, bank, cfg, 3)->value[0]);
  EXPECT_NE(de_loss(s, bank, cfg, 3)->value[0], de_loss(s, bank, cfg, 4)->value[0]);
  cfg.lambda_mu = -1.0;
  EXPECT_EQ(error_code([&] { de_loss(s, bank, cfg, 0); }), Errc::InvalidConfig);
}

TEST(DeLoss, ExpectationAddsPerturbationVariance) {
  CentroidBank bank(2, 0, 2, {3, 2}, 0.2);
  bank.set(0, 0, Tensor({3}, {0.3, -0.1, 0.0}), Tensor({3}, {1.0, 0.7, 0.2}));
  bank.set(1, 1, Tensor({2}, {2.0, 1.0}), Tensor({2}, {0.5, 0.5}));
  const auto s = stats_of({stat(0, 0, {1, 0, 0.5}, {1, 2, 0.3}), stat(1, 1, {1.5, 1.0}, {0.4, 0.9})}, 2);
  const DEConfig cfg{0.3, 0.15, 9};
  const int draws = 20000;
  double acc = 0.0;
  for (int t = 0; t < draws; ++t) acc += de_loss(s, bank, cfg, static_cast<std::uint64_t>(t))->value[0];
  const double dims = 5.0;
  const double expect = fda_loss(s, bank)->value[0] + dims * (0.3 * 0.3 + 0.15 * 0.15);
  EXPECT_NEAR(acc / draws, expect, 0.02 * expect);
}

TEST(KdLoss, Examples) {
  EXPECT_EQ(kd_loss(constant(Tensor({1, 3}, {0.1, 2.0, -1.0})), Tensor({1, 3}, {0.1, 2.0, -1.0}))->value[0], 0.0);
  // Teacher probabilities [0.5, 0.5], student [0.25, 0.75].
  EXPECT_NEAR(kd_loss(constant(Tensor({1, 2}, {0.0, std::log(3.0)})), Tensor({1, 2}, {0.0, 0.0}))->value[0], 0.1438,
              1e-3);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const Tensor s = random_tensor({1, 4}, rng, -5, 5), t = random_tensor({1, 4}, rng, -5, 5);
    ASSERT_GE(kd_loss(constant(s), t)->value[0], 0.0);
  }
  EXPECT_THROW(kd_loss(constant(Tensor({1, 3})), Tensor({1, 2})), Error);
}

TEST(Composites, Arithmetic) {
  LossWeights w;
  EXPECT_NEAR(combine_warmup(scalar(2.0), scalar(1.0), w)->value[0], 2.1, 1e-15);
  LossWeights no_bns = w;
  no_bns.alpha1 = 0.0;
  EXPECT_EQ(combine_warmup(scalar(2.0), scalar(1.0), no_bns)->value[0], 2.0);
  EXPECT_NEAR(combine_full(scalar(2.1), scalar(1.0), scalar(0.5), w)->value[0], 3.3, 1e-15);
  LossWeights off = w;
  off.alpha2 = off.alpha3 = 0.0;
  EXPECT_EQ(combine_full(scalar(2.1), scalar(1.0), scalar(0.5), off)->value[0], 2.1);
  EXPECT_NEAR(combine_finetune(scalar(2.3026), scalar(0.1438), 1.0)->value[0], 2.4464, 1e-12);
  EXPECT_EQ(combine_finetune(scalar(2.3026), scalar(0.1438), 0.0)->value[0], 2.3026);
}

TEST(Composites, FinetuneJointMinimum) {
  Tensor t({2, 3});
  t[0] = 30.0;
  t[5] = 30.0;
  const auto terms = finetune_objective(constant(t), t, std::vector<int>{0, 2}, 1.0);
  EXPECT_LT(terms.total->value[0], 1e-10);
  EXPECT_EQ(terms.kd->value[0], 0.0);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.alpha2 = -0.1;
  w.gamma = std::nan("");
  try {
    w.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("alpha2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
  }
}

TEST(LossGradients, StatisticLossesMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  Var f = parameter(random_tensor({6, 3, 2, 2}, rng));
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  const Tensor logits = [&] {
    Tensor t({6, 2});
    for (int i = 0; i < 6; ++i) t[i * 2 + labels[i]] = 1.0;
    return t;
  }();
  CentroidBank bank(1, 0, 2, {3}, 0.2);
  bank.set(0, 0, random_tensor({3}, rng), random_tensor({3}, rng, 0.5, 1.0));
  bank.set(0, 1, random_tensor({3}, rng), random_tensor({3}, rng, 0.5, 1.0));
  const DEConfig de{0.3, 0.15, 11};
  auto stats = [&] { return class_batch_stats(std::vector<Var>{f}, labels, logits, 0); };
  EXPECT_LT(gradcheck([&] { return fda_loss(stats(), bank); }, {f}), 1e-5);
  EXPECT_LT(gradcheck([&] { return de_loss(stats(), bank, de, 5); }, {f}), 1e-5);

  BNLayerParams p = BNLayerParams::make(3);
  p.running_mu = random_tensor({3}, rng);
  p.running_sigma = random_tensor({3}, rng, 0.5, 1.5);
  const BNLayerParams* ps[] = {&p};
  auto taps = [&] {
    BnTaps t;
    t.mean = {ops::channel_mean(f)};
    t.std = {ops::channel_std(f)};
    return t;
  };
  EXPECT_LT(gradcheck([&] { return bns_loss(taps(), ps); }, {f}), 1e-5);

  Var z = parameter(random_tensor({4, 3}, rng, -2, 2));
  const Tensor tz = random_tensor({4, 3}, rng, -2, 2);
  EXPECT_LT(gradcheck([&] { return kd_loss(z, tz); }, {z}), 1e-5);
  EXPECT_LT(gradcheck([&] { return finetune_objective(z, tz, std::vector<int>{0, 2, 1, 1}, 0.7).total; }, {z}), 1e-5);
}

TEST(LossGradients, GeneratorObjectivesMatchFiniteDifferences) {
  ToyGraph g;
  const auto params = g.gen.parameters();
  ASSERT_LE(dfq::testing::param_count(params), 100u);
  const LossWeights w;
  EXPECT_LT(gradcheck([&] { return generator_objective_warmup(g.run(), g.pseudo, g.teacher, w).total; }, params), 1e-5);

  const CentroidBank bank = g.bank();
  const DEConfig de{0.3, 0.15, 3};
  auto full = [&] { return generator_objective_full(g.run(), g.pseudo, g.teacher, bank, w, de, 2); };
  ASSERT_FALSE(full().stats.entries.empty());
  EXPECT_LT(gradcheck([&] { return full().total; }, params), 1e-5);
}

TEST(LossGradients, ObjectiveComponentsAddUp) {
  ToyGraph g;
  const LossWeights w;
  const CentroidBank bank = g.bank();
  const DEConfig de{0.3, 0.15, 3};
  NoGradGuard ng;
  const auto t = generator_objective_full(g.run(), g.pseudo, g.teacher, bank, w, de, 2);
  const double expect = t.ce->value[0] + w.alpha1 * t.bns->value[0] + w.alpha2 * t.fda->value[0] +
                        w.alpha3 * t.de->value[0];
  EXPECT_NEAR(t.total->value[0], expect, 1e-12);

  LossWeights off = w;
  off.alpha2 = off.alpha3 = 0.0;
  const auto warm = generator_objective_warmup(g.run(), g.pseudo, g.teacher, w);
  EXPECT_EQ(generator_objective_full(g.run(), g.pseudo, g.teacher, bank, off, de, 2).total->value[0],
            warm.total->value[0]);
}
