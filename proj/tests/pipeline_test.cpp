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
#include <numeric>

#include <gtest/gtest.h>

#include "dfq/hashing.hpp"
#include "dfq/ops.hpp"
#include "dfq/pipeline.hpp"
#include "dfq/teacher.hpp"
#include "support.hpp"

using namespace dfq;
using dfq::testing::error_code;

namespace {

struct Toy {
  LabeledDataset train, test;
  std::optional<Classifier> teacher;
};

// Small dataset and a briefly trained teacher shared by the whole suite.
const Toy& toy() {
  static const Toy t = [] {
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 50;
    spec.image_size = 16;
    auto [train, test] = make_toy_dataset(spec);
    Classifier m = Classifier::build(make_arch("micro-cnn-4", 3, 16, 4), 1);
    TeacherSchedule sched;
    sched.epochs = 3;
    train_teacher(m, train, sched);
    Toy out{std::move(train), std::move(test), std::nullopt};
    out.teacher.emplace(std::move(m));
    return out;
  }();
  return t;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.schedule.total_epochs = 3;
  c.schedule.warmup_epochs = 1;
  c.schedule.steps_per_epoch = 3;
  c.schedule.batch_size = 8;
  c.centroid_init_batches = 2;
  c.calibration_batches = 2;
  c.probe_size = 16;
  return c;
}

std::vector<std::uint64_t> param_prints(const FakeQuantModel& q) {
  std::vector<std::uint64_t> out;
  for (const auto& p : q.network().parameters()) out.push_back(hash_tensor(p->value));
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dfq_pipeline_" + name);
}

}  // namespace

TEST(Schedule, Validation) {
  TrainSchedule s;
  EXPECT_NO_THROW(s.validate());
  s.steps_per_epoch = 0;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.warmup_epochs = s.total_epochs + 1;
  EXPECT_THROW(s.validate(), Error);
  PipelineConfig c;
  c.beta_fd = 1.5;
  EXPECT_THROW(c.validate(), Error);
}

TEST(MetricsCsv, HeaderAndEmptyFieldsForNan) {
  EXPECT_EQ(metrics_csv_header(), "epoch,step,L_CE,L_BNS,L_FDA,L_DE,L_KD,student_acc,fisher_ratio,diversity");
  EpochMetrics m;
  m.epoch = 2;
  m.step = 20;
  m.ce = 0.5;
  m.bns = 1.25;
  m.fda = m.de = m.kd = m.student_acc = std::nan("");
  m.fisher_ratio = 3.0;
  m.diversity = 0.125;
  const std::string csv = format_metrics_csv({m});
  EXPECT_EQ(csv, metrics_csv_header() + "\n2,20,0.5,1.25,,,,,3,0.125\n");
}

TEST(Evaluate, HandCountedAccuracy) {
  const Toy& t = toy();
  Classifier m = t.teacher->clone();
  LabeledDataset four = t.test;
  four.pixels.resize(4 * four.image_numel());
  four.labels.resize(4);
  const auto pred = ops::argmax_rows(m.predict(four.batch(std::vector<int>{0, 1, 2, 3})));
  int hits = 0;
  for (int i = 0; i < 4; ++i) hits += pred[i] == four.labels[i];
  EXPECT_EQ(evaluate(m, four), hits / 4.0);

  LabeledDataset empty = four;
  empty.pixels.clear();
  empty.labels.clear();
  EXPECT_EQ(error_code([&] { evaluate(m, empty); }), Errc::InvalidInput);

  FakeQuantModel q = quantize_model(m, QuantConfig{});
  EXPECT_THROW(evaluate(q, four), Error);
}

TEST(Evaluate, UntrainedModelNearChance) {
  DatasetSpec spec;
  spec.num_classes = 10;
  spec.samples_per_class = 100;
  spec.image_size = 16;
  auto [train, test] = make_toy_dataset(spec);
  double acc = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Classifier m = Classifier::build(make_arch("micro-cnn-4", 3, 16, 10), seed);
    acc += evaluate(m, train);
  }
  EXPECT_NEAR(acc / 5, 0.10, 0.03);
}

TEST(Experiment, WarmupLeavesStudentAbsentAndTeacherFixed) {
  const Toy& t = toy();
  Experiment ex(small_config(), *t.teacher, t.train.norm);
  const auto print = ex.teacher().fingerprint();
  EXPECT_EQ(ex.phase(), Phase::Warmup);
  EXPECT_EQ(error_code([&] { ex.generator_step(); }), Errc::InvalidInput);
  EXPECT_EQ(error_code([&] { ex.finetune_step(); }), Errc::InvalidInput);
  for (int i = 0; i < 3; ++i) ex.warmup_step();
  EXPECT_FALSE(ex.has_student());
  EXPECT_FALSE(ex.has_bank());
  EXPECT_EQ(ex.global_step(), 3);
  EXPECT_EQ(ex.teacher().fingerprint(), print);
}

TEST(Experiment, AlternatingStepContracts) {
  const Toy& t = toy();
  PipelineConfig cfg = small_config();
  Experiment ex(cfg, *t.teacher, t.train.norm);
  ex.warmup_step();
  ex.start_alternating(t.test);
  ASSERT_TRUE(ex.has_student());
  ASSERT_TRUE(ex.has_bank());
  EXPECT_EQ(ex.phase(), Phase::Alternating);
  EXPECT_EQ(error_code([&] { ex.warmup_step(); }), Errc::InvalidInput);

  std::vector<Tensor> mu;
  for (int l = 0; l < ex.student().network().num_bn_layers(); ++l) mu.push_back(ex.student().network().bn(l).running_mu);
  const CentroidBank before = ex.bank();
  const StepLosses g = ex.generator_step();
  EXPECT_TRUE(std::isfinite(g.fda));
  EXPECT_TRUE(std::isfinite(g.de));
  // The bank moves only at entries seen this step; with beta 0.2 every
  // observed initialized entry changes.
  EXPECT_FALSE(ex.bank() == before);
  const auto params_before = param_prints(ex.student());
  ex.finetune_step();
  EXPECT_NE(param_prints(ex.student()), params_before);
  for (int l = 0; l < ex.student().network().num_bn_layers(); ++l)
    EXPECT_EQ(ex.student().network().bn(l).running_mu, mu[static_cast<std::size_t>(l)]);
}

TEST(Experiment, ZeroStudentLearningRateLeavesStudent) {
  const Toy& t = toy();
  PipelineConfig cfg = small_config();
  cfg.schedule.student_lr = 0.0;
  Experiment ex(cfg, *t.teacher, t.train.norm);
  ex.warmup_step();
  ex.start_alternating(t.test);
  const auto before = param_prints(ex.student());
  ex.generator_step();
  ex.finetune_step();
  EXPECT_EQ(param_prints(ex.student()), before);
}

TEST(Experiment, DegenerateFullStepMatchesWarmupStep) {
  // With alpha2 = alpha3 = 0 the full objective reduces to the warm-up one,
  // so both paths produce the same generator update.
  const Toy& t = toy();
  PipelineConfig cfg = small_config();
  cfg.weights.alpha2 = cfg.weights.alpha3 = 0.0;
  cfg.beta_fd = 0.0;
  Experiment a(cfg, *t.teacher, t.train.norm);
  Experiment b(cfg, *t.teacher, t.train.norm);
  a.warmup_step();
  b.warmup_step();
  b.start_alternating(t.test);
  const StepLosses la = a.warmup_step();
  const StepLosses lb = b.generator_step();
  EXPECT_EQ(la.ce, lb.ce);
  EXPECT_EQ(la.bns, lb.bns);
  EXPECT_EQ(la.generator_total, lb.generator_total);
  EXPECT_EQ(a.generator().fingerprint(), b.generator().fingerprint());
}

TEST(Pipeline, NoFineTuneReportsPostQuantAccuracy) {
  const Toy& t = toy();
  PipelineConfig cfg = small_config();
  cfg.schedule.total_epochs = cfg.schedule.warmup_epochs;
  const Report r = run_dfq(cfg, *t.teacher, t.test);
  EXPECT_EQ(r.final_accuracy, r.post_quant_accuracy);
  EXPECT_EQ(r.metrics.size(), 1u);
}

TEST(Pipeline, DeterministicAndTeacherImmutable) {
  const Toy& t = toy();
  const PipelineConfig cfg = small_config();
  const auto print = t.teacher->fingerprint();
  const Report a = run_dfq(cfg, *t.teacher, t.test);
  const Report b = run_dfq(cfg, *t.teacher, t.test);
  EXPECT_EQ(format_metrics_csv(a.metrics), format_metrics_csv(b.metrics));
  EXPECT_EQ(a.final_accuracy, b.final_accuracy);
  EXPECT_EQ(a.teacher_fingerprint, print);
  EXPECT_EQ(t.teacher->fingerprint(), print);
  ASSERT_EQ(a.metrics.size(), 3u);
  // Warm-up rows carry no alignment or distillation terms.
  EXPECT_TRUE(std::isnan(a.metrics[0].fda));
  EXPECT_TRUE(std::isnan(a.metrics[0].kd));
  EXPECT_TRUE(std::isfinite(a.metrics[2].fda));
  EXPECT_TRUE(std::isfinite(a.metrics[2].kd));
  EXPECT_EQ(a.metrics[2].step, 9);
}

TEST(Pipeline, RangesFrozenBeforeFinalEvaluation) {
  const Toy& t = toy();
  PipelineConfig cfg = small_config();
  Experiment ex(cfg, *t.teacher, t.train.norm);
  const Report r = run_experiment(ex, t.test);
  EXPECT_TRUE(ex.student().ranges_frozen());
  EXPECT_EQ(ex.phase(), Phase::Finished);
  EXPECT_EQ(evaluate(ex.student(), t.test), r.final_accuracy);
  EXPECT_EQ(evaluate(ex.student(), t.test), r.final_accuracy);
}

TEST(Pipeline, ResumeMatchesUninterruptedRun) {
  const Toy& t = toy();
  const PipelineConfig cfg = small_config();
  const Report straight = run_dfq(cfg, *t.teacher, t.test);

  const auto path = temp_path("state.ckpt");
  {
    Experiment ex(cfg, *t.teacher, t.train.norm);
    ex.run_epoch(t.test);
    ex.run_epoch(t.test);
    ex.save(path);
  }
  Experiment resumed = Experiment::load(path, cfg, *t.teacher, t.train.norm);
  EXPECT_EQ(resumed.epoch(), 2);
  const Report r = run_experiment(resumed, t.test);
  EXPECT_EQ(format_metrics_csv(r.metrics), format_metrics_csv(straight.metrics));
  EXPECT_EQ(r.final_accuracy, straight.final_accuracy);

  Classifier other = Classifier::build(make_arch("micro-cnn-4", 3, 16, 4), 99);
  EXPECT_EQ(error_code([&] { Experiment::load(path, cfg, other, t.train.norm); }), Errc::InvalidInput);
  std::filesystem::remove(path);
}

TEST(Ablation, VariantConfigs) {
  const PipelineConfig base = small_config();
  EXPECT_EQ(ablation_config(base, "full").weights.alpha3, base.weights.alpha3);
  EXPECT_EQ(ablation_config(base, "no_DE").weights.alpha3, 0.0);
  EXPECT_EQ(ablation_config(base, "no_EMA").beta_fd, 0.0);
  const PipelineConfig n = ablation_config(base, "neither");
  EXPECT_EQ(n.weights.alpha3, 0.0);
  EXPECT_EQ(n.beta_fd, 0.0);
  EXPECT_EQ(error_code([&] { ablation_config(base, "bogus"); }), Errc::InvalidConfig);

  const Toy& t = toy();
  PipelineConfig quick = base;
  quick.schedule.total_epochs = 2;
  const auto rows = run_ablation(quick, *t.teacher, t.test, {"full"});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].variant, "full");
}

TEST(SyntheticGrid, ShapeAndDeterminism) {
  Generator g = Generator::build(make_generator_spec("cgan-small", 4, 3, 16), 3);
  Tensor raw;
  const RgbImage a = synthetic_grid(g, 5, 7, &raw);
  const RgbImage b = synthetic_grid(g, 5, 7);
  EXPECT_EQ(raw.shape(), (Shape{20, 3, 16, 16}));
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.width, 5 * 17 + 1);
  EXPECT_EQ(a.height, 4 * 17 + 1);
  EXPECT_EQ(encode_ppm(a), encode_ppm(b));
  EXPECT_NE(synthetic_grid(g, 5, 8).pixels, a.pixels);
}
