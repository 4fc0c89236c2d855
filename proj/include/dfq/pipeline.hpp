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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfq/classifier.hpp"
#include "dfq/data.hpp"
#include "dfq/fake_quant_model.hpp"
#include "dfq/generator.hpp"
#include "dfq/image.hpp"
#include "dfq/losses.hpp"
#include "dfq/optim.hpp"
#include "dfq/quantizer.hpp"
#include "dfq/stats.hpp"

namespace dfq {

struct TrainSchedule {
  int total_epochs = 20;
  int warmup_epochs = 3;
  int steps_per_epoch = 10;
  int batch_size = 40;
  double generator_lr = 1e-3;
  double student_lr = 1e-4;
  OptimizerKind generator_optimizer = OptimizerKind::Adam;
  OptimizerKind student_optimizer = OptimizerKind::RmsProp;
  // The student is updated on every k-th alternating step.
  int student_update_every = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PipelineConfig {
  TrainSchedule schedule;
  QuantConfig quant;
  LossWeights weights;
  DEConfig diversity;  // noise_seed is derived from schedule.seed
  double beta_fd = 0.2;
  int semantic_start = -1;  // -1: last third of the BN layers
  std::string generator = "cgan-small";
  int centroid_init_batches = 4;
  int calibration_batches = 4;
  int probe_size = 100;  // fixed synthetic batch for separability metrics
  // Test samples scored for the per-epoch student accuracy; 0 = all.
  int epoch_eval_samples = 0;

  void validate() const;
};

// One row of the metrics log. Loss terms not evaluated in an epoch and the
// student accuracy before the student exists are NaN.
struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double ce = 0.0;
  double bns = 0.0;
  double fda = 0.0;
  double de = 0.0;
  double kd = 0.0;
  double student_acc = 0.0;
  double fisher_ratio = 0.0;
  double diversity = 0.0;
};

std::string metrics_csv_header();
std::string format_metrics_csv(const std::vector<EpochMetrics>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);

struct Report {
  double teacher_accuracy = 0.0;
  double post_quant_accuracy = 0.0;  // calibrated ranges, no fine-tuning
  double final_accuracy = 0.0;
  double warmup_fisher = 0.0;  // probe batch right after warm-up
  double final_fisher = 0.0;
  double warmup_diversity = 0.0;
  double final_diversity = 0.0;
  std::uint64_t teacher_fingerprint = 0;
  std::vector<EpochMetrics> metrics;
};

// Fraction of argmax-correct predictions. Fake-quant models must have
// frozen ranges.
double evaluate(Classifier& model, const LabeledDataset& data, int max_samples = 0);
double evaluate(FakeQuantModel& model, const LabeledDataset& data, int max_samples = 0);

// Separability and diversity of the teacher's view of a synthetic batch:
// Fisher ratio of pooled features entering the last BN layer and class
// diversity of the penultimate features.
struct ProbeMetrics {
  double fisher_ratio = 0.0;
  double diversity = 0.0;
};
ProbeMetrics probe_metrics(Generator& g, Classifier& teacher, const Normalization& norm, int probe_size,
                           std::uint64_t seed);

enum class Phase { Warmup, Alternating, Finished };

struct StepLosses {
  double ce = 0.0;
  double bns = 0.0;
  double fda = 0.0;
  double de = 0.0;
  double kd = 0.0;
  double generator_total = 0.0;
  double student_total = 0.0;
};

// Complete training state. The teacher is a private frozen copy.
class Experiment {
 public:
  Experiment(const PipelineConfig& cfg, const Classifier& teacher, const Normalization& norm);

  const PipelineConfig& config() const noexcept { return cfg_; }
  Phase phase() const noexcept { return phase_; }
  long global_step() const noexcept { return step_; }
  int epoch() const noexcept { return epoch_; }

  Generator& generator() noexcept { return gen_; }
  Classifier& teacher() noexcept { return teacher_; }
  const Normalization& norm() const noexcept { return norm_; }
  bool has_student() const noexcept { return student_.has_value(); }
  FakeQuantModel& student();
  bool has_bank() const noexcept { return bank_.has_value(); }
  CentroidBank& bank();
  std::vector<EpochMetrics>& metrics() noexcept { return metrics_; }
  // Recorded when the alternating phase starts.
  double post_quant_accuracy() const noexcept { return post_quant_acc_; }
  const ProbeMetrics& warmup_probe() const noexcept { return warmup_probe_; }

  // One L1 update of the generator; the student is not touched.
  StepLosses warmup_step();
  // Quantizes the teacher, calibrates activation ranges on synthetic
  // batches, scores the calibrated model on test and initializes the
  // centroid bank; enters the alternating phase.
  void start_alternating(const LabeledDataset& test);
  // One L1' update of the generator followed by the EMA refresh of the
  // bank. Requires an initialized bank.
  StepLosses generator_step();
  // One L2 update of the student on the batch of the last generator step.
  StepLosses finetune_step();

  // Runs steps until the current epoch is complete and appends its row.
  void run_epoch(const LabeledDataset& test);
  // Freezes the activation ranges.
  void finish();

  void save(const std::filesystem::path& path);
  static Experiment load(const std::filesystem::path& path, const PipelineConfig& cfg, const Classifier& teacher,
                         const Normalization& norm);

 private:
  struct PendingBatch {
    Tensor images;
    std::vector<int> labels;
    Tensor teacher_logits;
  };
  void check_finite(double v, const char* what) const;
  void build_student_optimizer();

  PipelineConfig cfg_;
  Classifier teacher_;
  std::uint64_t teacher_print_;
  Normalization norm_;
  Generator gen_;
  Optimizer gen_opt_;
  std::optional<FakeQuantModel> student_;
  std::optional<Optimizer> student_opt_;
  std::optional<CentroidBank> bank_;
  std::optional<PendingBatch> pending_;
  Phase phase_ = Phase::Warmup;
  long step_ = 0;
  long alt_step_ = 0;
  int epoch_ = 0;
  double post_quant_acc_ = 0.0;
  ProbeMetrics warmup_probe_;
  std::vector<EpochMetrics> metrics_;
};

using EpochCallback = std::function<void(Experiment&)>;

// Drives an experiment from its current state (fresh or resumed) through the
// remaining epochs, freezes the ranges and evaluates on test.
Report run_experiment(Experiment& ex, const LabeledDataset& test, const EpochCallback& on_epoch = {});

// Warm-up, calibration and centroid initialization, alternating generator /
// student updates, range freeze and final evaluation on test.
Report run_dfq(const PipelineConfig& cfg, const Classifier& teacher, const LabeledDataset& test,
               const EpochCallback& on_epoch = {});

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "no_DE", "no_EMA", "neither"};
  return v;
}
PipelineConfig ablation_config(const PipelineConfig& base, const std::string& variant);

struct AblationRow {
  std::string variant;
  Report report;
};
std::vector<AblationRow> run_ablation(const PipelineConfig& base, const Classifier& teacher,
                                      const LabeledDataset& test, const std::vector<std::string>& variants);

// One row per class, per_class samples each, deterministic in seed. raw
// receives the generator output [classes * per_class, C, S, S].
RgbImage synthetic_grid(Generator& g, int per_class, std::uint64_t seed, Tensor* raw = nullptr);

}  // namespace dfq
