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
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "dfq/batchnorm.hpp"
#include "dfq/checkpoint.hpp"
#include "dfq/classifier.hpp"
#include "dfq/fake_quant_model.hpp"
#include "dfq/generator.hpp"
#include "dfq/hashing.hpp"
#include "dfq/ops.hpp"
#include "dfq/optim.hpp"
#include "dfq/quantizer.hpp"
#include "support.hpp"

using namespace dfq;
using dfq::testing::error_code;
using dfq::testing::random_tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dfq_modelkit_" + name);
}

Classifier small_net(const std::string& arch = "micro-cnn-4", std::uint64_t seed = 1) {
  return Classifier::build(make_arch(arch, 3, 8, 4), seed);
}

}  // namespace

TEST(BnForward, TrainModeNeedsTwoSamples) {
  BNLayerParams p = BNLayerParams::make(2);
  Var x = constant(Tensor({1, 2}, {1.0, 2.0}));
  EXPECT_EQ(error_code([&] { bn_forward(x, p, BnMode::Train); }), Errc::DegenerateBatch);
  EXPECT_NO_THROW(bn_forward(x, p, BnMode::Eval));
}

TEST(BnForward, RunningStatsConvergeToBatchStats) {
  BNLayerParams p = BNLayerParams::make(3);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  const double mu[3] = {2.0, -1.0, 0.5}, sd[3] = {0.5, 2.0, 1.0};
  for (int it = 0; it < 300; ++it) {
    Tensor x({64, 3});
    for (int i = 0; i < 64; ++i)
      for (int c = 0; c < 3; ++c) x[i * 3 + c] = mu[c] + sd[c] * g(rng);
    bn_forward(constant(x), p, BnMode::Train, true);
  }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(p.running_mu[c], mu[c], 0.05 * std::max(1.0, std::abs(mu[c])));
    EXPECT_NEAR(p.running_sigma[c], sd[c], 0.05 * sd[c]);
  }
}

TEST(BnParams, Validation) {
  BNLayerParams p = BNLayerParams::make(2);
  EXPECT_NO_THROW(p.validate());
  p.running_sigma[1] = -1.0;
  EXPECT_EQ(error_code([&] { p.validate(); }), Errc::InvalidInput);
  p = BNLayerParams::make(2);
  p.running_mu = Tensor({3});
  EXPECT_EQ(error_code([&] { p.validate(); }), Errc::ShapeMismatch);
}

TEST(Classifier, RegisteredArchitectures) {
  for (const auto& name : registered_architectures()) {
    Classifier m = Classifier::build(make_arch(name, 3, 32, 10), 1);
    EXPECT_GE(m.num_bn_layers(), 4) << name;
    const auto& ids = m.bn_layer_ids();
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    const Tensor logits = m.predict(Tensor({2, 3, 32, 32}));
    EXPECT_EQ(logits.shape(), (Shape{2, 10}));
    EXPECT_TRUE(logits.all_finite()) << name;
  }
  EXPECT_EQ(Classifier::build(make_arch("tiny-cnn-6", 3, 32, 10), 1).num_bn_layers(), 6);
  EXPECT_EQ(Classifier::build(make_arch("tiny-resnet-8", 3, 32, 10), 1).num_bn_layers(), 8);
  EXPECT_EQ(error_code([] { make_arch("resnet-18", 3, 32, 10); }), Errc::UnknownArchitecture);
}

TEST(Classifier, DeterministicInitialization) {
  Classifier a = small_net("tiny-resnet-8", 5), b = small_net("tiny-resnet-8", 5), c = small_net("tiny-resnet-8", 6);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}

TEST(Classifier, InputShapeChecked) {
  Classifier m = small_net();
  EXPECT_EQ(error_code([&] { m.predict(Tensor({1, 3, 16, 16})); }), Errc::ShapeMismatch);
}

TEST(Classifier, TapsMatchPlainForwardAndRecomputedMoments) {
  Classifier m = small_net("tiny-resnet-8", 2);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5, 3, 8, 8}, rng);
  const Tensor plain = m.predict(x);
  NoGradGuard ng;
  auto [logits, taps] = forward_with_taps(m, constant(x));
  EXPECT_EQ(logits->value, plain);
  ASSERT_EQ(static_cast<int>(taps.mean.size()), m.num_bn_layers());
  for (int l = 0; l < m.num_bn_layers(); ++l) {
    const Tensor& f = taps.features[static_cast<std::size_t>(l)]->value;
    const int n = f.dim(0), c = f.dim(1), s = f.dim(2) * f.dim(3);
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < s; ++p) sum += f[(i * c + ch) * s + p];
      const double mean = sum / (n * s);
      double ss = 0.0;
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < s; ++p) ss += (f[(i * c + ch) * s + p] - mean) * (f[(i * c + ch) * s + p] - mean);
      EXPECT_NEAR(taps.mean[l]->value[ch], mean, 1e-12);
      EXPECT_NEAR(taps.std[l]->value[ch], std::sqrt(ss / (n * s - 1)), 1e-12);
    }
  }
}

TEST(Classifier, CloneIsIndependent) {
  Classifier a = small_net();
  Classifier b = a.clone();
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.parameters()[0]->value[0] += 1.0;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(Generator, DeterministicBoundedAndConditional) {
  const GeneratorSpec spec = make_generator_spec("cgan-small", 10, 3, 32);
  Generator a = Generator::build(spec, 4), b = Generator::build(spec, 4);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  const std::vector<int> labels = balanced_labels(20, 10);
  for (int c = 0; c < 10; ++c) EXPECT_EQ(std::count(labels.begin(), labels.end(), c), 2);

  const Tensor noise = sample_noise(20, spec.noise_dim, 9);
  Tensor raw;
  {
    NoGradGuard ng;
    raw = a.forward(labels, noise)->value;
  }
  EXPECT_EQ(raw.shape(), (Shape{20, 3, 32, 32}));
  for (double v : raw.values()) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
  }

  const Normalization norm{{0.5, 0.4, 0.3}, {0.2, 0.25, 0.3}};
  const SyntheticBatch s1 = sample_synthetic(a, labels, 9, norm);
  const SyntheticBatch s2 = sample_synthetic(b, labels, 9, norm);
  EXPECT_EQ(s1.images, s2.images);
  EXPECT_EQ(s1.pseudo_labels, labels);
  EXPECT_TRUE(s1.teacher_logits.empty());
  EXPECT_EQ(error_code([&] { sample_synthetic(a, std::vector<int>{0, 10}, 1, norm); }), Errc::LabelOutOfRange);

  // Same noise, different labels: the embedding makes the images differ.
  std::vector<int> shifted = labels;
  for (auto& y : shifted) y = (y + 1) % 10;
  EXPECT_NE(sample_synthetic(a, shifted, 9, norm).images, s1.images);
}

TEST(Generator, NoiseIsStandardGaussian) {
  const Tensor z = sample_noise(10000, 4, 123);
  for (int d = 0; d < 4; ++d) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < 10000; ++i) m += z[i * 4 + d];
    m /= 10000;
    for (int i = 0; i < 10000; ++i) v += (z[i * 4 + d] - m) * (z[i * 4 + d] - m);
    EXPECT_NEAR(m, 0.0, 0.05);
    EXPECT_NEAR(v / 9999, 1.0, 0.05);
  }
}

TEST(Generator, ModelInputInvertsNormalization) {
  const Normalization norm{{0.5, 0.25}, {0.2, 0.1}};
  // raw r in [-1, 1] is the pixel (r + 1) / 2, then normalized.
  Var x = to_model_input(constant(Tensor({1, 2, 1, 1}, {0.0, 1.0})), norm);
  EXPECT_NEAR(x->value[0], (0.5 - 0.5) / 0.2, 1e-14);
  EXPECT_NEAR(x->value[1], (1.0 - 0.25) / 0.1, 1e-14);
}

TEST(FakeQuantModel, QuantizationSetup) {
  Classifier m = small_net();
  QuantConfig cfg;
  FakeQuantModel q = quantize_model(m, cfg);
  EXPECT_EQ(static_cast<int>(q.trackers().size()), m.num_relus());
  for (const auto& t : q.trackers()) EXPECT_FALSE(t.initialized());
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    const Var& w = m.layers()[i].weight;
    if (!w) {
      EXPECT_EQ(q.weight_alpha()[i], 0.0);
      continue;
    }
    double mx = 0.0;
    for (double v : w->value.values()) mx = std::max(mx, std::abs(v));
    EXPECT_EQ(q.weight_alpha()[i], mx);
  }

  Classifier bad = small_net();
  bad.parameters()[0]->value[0] = std::nan("");
  EXPECT_EQ(error_code([&] { quantize_model(bad, cfg); }), Errc::InvalidInput);
}

TEST(FakeQuantModel, SixteenBitsNearlyLossless) {
  Classifier m = small_net("tiny-resnet-8", 3);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({6, 3, 8, 8}, rng, -2, 2);
  QuantConfig cfg;
  cfg.weight_bits = cfg.act_bits = 16;
  FakeQuantModel q = quantize_model(m, cfg);
  q.observe(x);
  q.freeze_ranges();
  const Tensor a = m.predict(x), b = q.predict(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-2);
}

TEST(FakeQuantModel, GridWeightsAreFixedPoints) {
  // Weights already on the model's grid pass through weight quantization
  // unchanged, so swapping them in (same clip ranges) keeps the logits.
  Classifier m = small_net();
  QuantConfig cfg;
  FakeQuantModel q = quantize_model(m, cfg);
  Classifier snapped = m.clone();
  for (std::size_t i = 0; i < snapped.layers().size(); ++i) {
    auto& w = snapped.layers()[i].weight;
    if (w) w->value = fake_quantize(w->value, q.weight_alpha()[i], cfg.weight_bits);
  }
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  q.observe(x);
  q.freeze_ranges();
  FakeQuantModel on_grid = FakeQuantModel::restore(std::move(snapped), cfg, q.weight_alpha(), q.trackers());
  EXPECT_EQ(on_grid.predict(x), q.predict(x));
}

TEST(FakeQuantModel, ObservationAndFreezing) {
  Classifier m = small_net();
  FakeQuantModel q = quantize_model(m, QuantConfig{});
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  EXPECT_FALSE(q.ranges_frozen());
  q.observe(x);
  for (const auto& t : q.trackers()) EXPECT_TRUE(t.initialized());
  q.freeze_ranges();
  EXPECT_TRUE(q.ranges_frozen());
  const Tensor first = q.predict(x);
  EXPECT_EQ(q.clone().predict(x), first);
  EXPECT_EQ(q.predict(x), first);
}

TEST(FakeQuantModel, FineTuningKeepsBnStatistics) {
  Classifier m = small_net();
  FakeQuantModel q = quantize_model(m, QuantConfig{});
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({8, 3, 8, 8}, rng);
  q.observe(x);
  std::vector<Tensor> mu, sigma;
  for (int l = 0; l < q.network().num_bn_layers(); ++l) {
    mu.push_back(q.network().bn(l).running_mu);
    sigma.push_back(q.network().bn(l).running_sigma);
  }
  Optimizer opt(OptimizerKind::Adam, q.network().parameters(), 1e-2);
  const std::vector<int> y = {0, 1, 2, 3, 0, 1, 2, 3};
  for (int step = 0; step < 5; ++step) {
    opt.zero_grad();
    backward(ops::cross_entropy(q.forward(constant(x), true).logits, y));
    opt.step();
  }
  for (int l = 0; l < q.network().num_bn_layers(); ++l) {
    EXPECT_EQ(q.network().bn(l).running_mu, mu[static_cast<std::size_t>(l)]);
    EXPECT_EQ(q.network().bn(l).running_sigma, sigma[static_cast<std::size_t>(l)]);
  }
}

TEST(Optimizer, ZeroLearningRateIsNoOp) {
  Classifier m = small_net();
  const auto before = m.fingerprint();
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::RmsProp}) {
    Optimizer opt(kind, m.parameters(), 0.0);
    std::mt19937_64 rng(8);
    opt.zero_grad();
    backward(ops::cross_entropy(m.forward(constant(random_tensor({4, 3, 8, 8}, rng)), BnMode::Eval).logits,
                                std::vector<int>{0, 1, 2, 3}));
    opt.step();
    EXPECT_EQ(m.fingerprint(), before);
  }
  EXPECT_EQ(parse_optimizer_kind("adam"), OptimizerKind::Adam);
  EXPECT_EQ(parse_optimizer_kind("rmsprop"), OptimizerKind::RmsProp);
  EXPECT_THROW(parse_optimizer_kind("sgd"), Error);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  Var p = parameter(Tensor({2}, {1.0, -1.0}));
  Optimizer opt(OptimizerKind::Adam, {p}, 0.1);
  opt.zero_grad();
  backward(ops::sq_dist(p, Tensor({2}, {0.0, 0.0})));
  opt.step();
  EXPECT_NEAR(p->value[0], 0.9, 1e-6);
  EXPECT_NEAR(p->value[1], -0.9, 1e-6);
}

TEST(Checkpoint, ClassifierRoundTripIsBitExact) {
  Classifier m = small_net("tiny-resnet-8", 9);
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_classifier(p1, m, R"({"seed":9})");
  Classifier back = load_classifier(p1);
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  EXPECT_EQ(back.arch().name, "tiny-resnet-8");
  save_classifier(p2, back, R"({"seed":9})");
  EXPECT_EQ(file_hash(p1), file_hash(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, FakeQuantAndGeneratorRoundTrip) {
  Classifier m = small_net();
  FakeQuantModel q = quantize_model(m, QuantConfig{});
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  q.observe(x);
  q.freeze_ranges();
  Generator g = Generator::build(make_generator_spec("cgan-small", 4, 3, 8), 2);

  Container c;
  c.descriptor = "test";
  store_fake_quant(c, q, "student.");
  store_generator(c, g, "generator.");
  const auto bytes = c.to_bytes();
  const Container back = Container::from_bytes(bytes);
  EXPECT_EQ(back.to_bytes(), bytes);

  FakeQuantModel q2 = restore_fake_quant(back, classifier_descriptor(q.network().arch()), "student.");
  EXPECT_EQ(q2.predict(x), q.predict(x));
  EXPECT_TRUE(q2.ranges_frozen());
  Generator g2 = restore_generator(back, generator_descriptor(g.spec()), "generator.");
  EXPECT_EQ(g2.fingerprint(), g.fingerprint());
}

TEST(Checkpoint, CorruptBytesRejected) {
  Classifier m = small_net();
  Container c;
  c.descriptor = classifier_descriptor(m.arch());
  store_classifier(c, m);
  auto bytes = c.to_bytes();
  bytes.resize(bytes.size() / 2);
  EXPECT_EQ(error_code([&] { Container::from_bytes(bytes); }), Errc::MalformedFile);
  bytes = c.to_bytes();
  bytes[0] ^= 0xff;
  EXPECT_EQ(error_code([&] { Container::from_bytes(bytes); }), Errc::MalformedFile);
  EXPECT_EQ(error_code([] { load_classifier(temp_path("does_not_exist.ckpt")); }), Errc::MissingArtifact);
}
