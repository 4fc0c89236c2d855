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

#include "dfq/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dfq/checkpoint.hpp"
#include "dfq/errors.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kEvalBatch = 100;

void collect(std::string& bad, bool ok, const char* key) {
  if (!ok) {
    bad += ' ';
    bad += key;
  }
}

}  // namespace

void TrainSchedule::validate() const {
  std::string bad;
  collect(bad, total_epochs >= 1, "total_epochs");
  collect(bad, warmup_epochs >= 0 && warmup_epochs <= total_epochs, "warmup_epochs");
  collect(bad, steps_per_epoch >= 1, "steps_per_epoch");
  collect(bad, batch_size >= 2, "batch_size");
  collect(bad, generator_lr >= 0.0 && std::isfinite(generator_lr), "generator_lr");
  collect(bad, student_lr >= 0.0 && std::isfinite(student_lr), "student_lr");
  collect(bad, student_update_every >= 1, "student_update_every");
  if (!bad.empty()) fail(Errc::InvalidConfig, "invalid schedule:" + bad);
}

void PipelineConfig::validate() const {
  schedule.validate();
  quant.validate();
  weights.validate();
  diversity.validate();
  std::string bad;
  collect(bad, beta_fd >= 0.0 && beta_fd <= 1.0, "beta_fd");
  collect(bad, semantic_start >= -1, "semantic_start");
  collect(bad, centroid_init_batches >= 1, "centroid_init_batches");
  collect(bad, calibration_batches >= 1, "calibration_batches");
  collect(bad, probe_size >= 4, "probe_size");
  collect(bad, epoch_eval_samples >= 0, "epoch_eval_samples");
  if (!bad.empty()) fail(Errc::InvalidConfig, "invalid pipeline config:" + bad);
}

std::string metrics_csv_header() { return "epoch,step,L_CE,L_BNS,L_FDA,L_DE,L_KD,student_acc,fisher_ratio,diversity"; }

std::string format_metrics_csv(const std::vector<EpochMetrics>& rows) {
  auto num = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  std::string out = metrics_csv_header() + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.ce) + "," + num(r.bns) + "," +
           num(r.fda) + "," + num(r.de) + "," + num(r.kd) + "," + num(r.student_acc) + "," + num(r.fisher_ratio) +
           "," + num(r.diversity) + "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open '" + path.string() + "' for writing");
  f << format_metrics_csv(rows);
  if (!f) fail(Errc::Io, "write to '" + path.string() + "' failed");
}

namespace {

template <class Predict>
double score(const LabeledDataset& data, int max_samples, Predict&& predict) {
  const int n = max_samples > 0 ? std::min(max_samples, static_cast<int>(data.size())) : static_cast<int>(data.size());
  if (n == 0) fail(Errc::InvalidInput, "cannot evaluate on an empty dataset");
  int correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < n; start += kEvalBatch) {
    idx.clear();
    for (int i = start; i < std::min(n, start + kEvalBatch); ++i) idx.push_back(i);
    const auto pred = ops::argmax_rows(predict(data.batch(idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (pred[k] == data.labels[static_cast<std::size_t>(idx[k])]) ++correct;
    }
  }
  return static_cast<double>(correct) / n;
}

}  // namespace

double evaluate(Classifier& model, const LabeledDataset& data, int max_samples) {
  return score(data, max_samples, [&](const Tensor& x) { return model.predict(x); });
}

double evaluate(FakeQuantModel& model, const LabeledDataset& data, int max_samples) {
  if (!model.ranges_frozen()) fail(Errc::InvalidInput, "evaluation of a quantized model needs frozen ranges");
  return score(data, max_samples, [&](const Tensor& x) { return model.predict(x); });
}

ProbeMetrics probe_metrics(Generator& g, Classifier& teacher, const Normalization& norm, int probe_size,
                           std::uint64_t seed) {
  NoGradGuard guard;
  const auto labels = balanced_labels(probe_size, teacher.num_classes());
  SyntheticBatch b = sample_synthetic(g, labels, seed, norm);
  ForwardResult r = teacher.forward(constant(b.images), BnMode::Eval);
  ProbeMetrics m;
  m.fisher_ratio =
      fisher_separability(pooled_features(r.bn_inputs.back()->value), labels, teacher.num_bn_layers() - 1).fisher_ratio;
  m.diversity = class_diversity(r.penultimate->value, labels);
  return m;
}

Experiment::Experiment(const PipelineConfig& cfg, const Classifier& teacher, const Normalization& norm)
    : cfg_(cfg),
      teacher_(teacher.clone()),
      teacher_print_(teacher.fingerprint()),
      norm_(norm),
      gen_(Generator::build(make_generator_spec(cfg.generator, teacher.num_classes(), teacher.arch().in_channels,
                                                teacher.arch().image_size),
                            derive_seed(cfg.schedule.seed, "generator-init"))),
      gen_opt_(cfg.schedule.generator_optimizer, gen_.parameters(), cfg.schedule.generator_lr) {
  cfg_.validate();
  if (norm_.mean.size() != static_cast<std::size_t>(teacher.arch().in_channels) || norm_.std.size() != norm_.mean.size()) {
    fail(Errc::ShapeMismatch, "normalization constants do not match the teacher's input channels");
  }
  teacher_.set_requires_grad(false);
}

FakeQuantModel& Experiment::student() {
  if (!student_) fail(Errc::InvalidInput, "the quantized student does not exist before warm-up ends");
  return *student_;
}

CentroidBank& Experiment::bank() {
  if (!bank_) fail(Errc::InvalidInput, "centroids are not initialized before warm-up ends");
  return *bank_;
}

void Experiment::check_finite(double v, const char* what) const {
  if (!std::isfinite(v)) {
    fail(Errc::TrainingDiverged, std::string(what) + " became non-finite at epoch " + std::to_string(epoch_) +
                                     ", step " + std::to_string(step_));
  }
}

StepLosses Experiment::warmup_step() {
  if (phase_ != Phase::Warmup) fail(Errc::InvalidInput, "warm-up step outside the warm-up phase");
  const auto labels = balanced_labels(cfg_.schedule.batch_size, teacher_.num_classes());
  const Tensor noise =
      sample_noise(cfg_.schedule.batch_size, gen_.spec().noise_dim, derive_seed(cfg_.schedule.seed, "batch", step_));
  gen_opt_.zero_grad();
  Var x = to_model_input(gen_.forward(labels, noise), norm_);
  ForwardResult r = teacher_.forward(x, BnMode::Eval);
  GeneratorTerms t = generator_objective_warmup(r, labels, teacher_, cfg_.weights);
  StepLosses out;
  out.ce = t.ce->value[0];
  out.bns = t.bns->value[0];
  out.generator_total = t.total->value[0];
  check_finite(out.generator_total, "warm-up generator loss");
  backward(t.total);
  gen_opt_.step();
  ++step_;
  return out;
}

void Experiment::build_student_optimizer() {
  student_->network().set_requires_grad(true);
  student_opt_.emplace(cfg_.schedule.student_optimizer, student_->network().parameters(), cfg_.schedule.student_lr);
}

void Experiment::start_alternating(const LabeledDataset& test) {
  if (phase_ != Phase::Warmup) fail(Errc::InvalidInput, "alternating phase already started");
  const std::uint64_t seed = cfg_.schedule.seed;
  warmup_probe_ = probe_metrics(gen_, teacher_, norm_, cfg_.probe_size, derive_seed(seed, "probe"));

  student_.emplace(quantize_model(teacher_, cfg_.quant));
  const auto labels = balanced_labels(cfg_.schedule.batch_size, teacher_.num_classes());
  for (int b = 0; b < cfg_.calibration_batches; ++b) {
    SyntheticBatch batch = sample_synthetic(gen_, labels, derive_seed(seed, "calibration", static_cast<std::uint64_t>(b)), norm_);
    student_->observe(batch.images);
  }
  FakeQuantModel calibrated = student_->clone();
  calibrated.freeze_ranges();
  post_quant_acc_ = evaluate(calibrated, test);

  CentroidInitConfig ci;
  ci.num_batches = cfg_.centroid_init_batches;
  ci.batch_size = cfg_.schedule.batch_size;
  ci.first_layer = cfg_.semantic_start;
  ci.decay = cfg_.beta_fd;
  ci.seed = derive_seed(seed, "centroids");
  bank_.emplace(init_centroids(gen_, teacher_, norm_, ci));

  build_student_optimizer();
  phase_ = Phase::Alternating;
}

StepLosses Experiment::generator_step() {
  if (phase_ != Phase::Alternating || !bank_) {
    fail(Errc::InvalidInput, "alignment losses need initialized centroids; finish warm-up first");
  }
  const auto labels = balanced_labels(cfg_.schedule.batch_size, teacher_.num_classes());
  const Tensor noise =
      sample_noise(cfg_.schedule.batch_size, gen_.spec().noise_dim, derive_seed(cfg_.schedule.seed, "batch", step_));
  DEConfig de = cfg_.diversity;
  de.noise_seed = derive_seed(cfg_.schedule.seed, "diversity");

  gen_opt_.zero_grad();
  Var x = to_model_input(gen_.forward(labels, noise), norm_);
  ForwardResult r = teacher_.forward(x, BnMode::Eval);
  GeneratorTerms t = generator_objective_full(r, labels, teacher_, *bank_, cfg_.weights, de,
                                              static_cast<std::uint64_t>(alt_step_));
  StepLosses out;
  out.ce = t.ce->value[0];
  out.bns = t.bns->value[0];
  out.fda = t.fda->value[0];
  out.de = t.de->value[0];
  out.generator_total = t.total->value[0];
  check_finite(out.generator_total, "generator loss");
  backward(t.total);
  gen_opt_.step();
  bank_->ema_update(t.stats);
  pending_ = PendingBatch{x->value, labels, r.logits->value};
  return out;
}

StepLosses Experiment::finetune_step() {
  if (!pending_) fail(Errc::InvalidInput, "fine-tuning needs the batch of a generator step");
  StepLosses out;
  out.kd = kNaN;
  if (alt_step_ % cfg_.schedule.student_update_every == 0) {
    student_opt_->zero_grad();
    const bool observe = !student_->ranges_frozen();
    ForwardResult s = student_->forward(constant(pending_->images), observe);
    FinetuneTerms t = finetune_objective(s.logits, pending_->teacher_logits, pending_->labels, cfg_.weights.gamma);
    out.kd = t.kd->value[0];
    out.student_total = t.total->value[0];
    check_finite(out.student_total, "student loss");
    backward(t.total);
    student_opt_->step();
  }
  pending_.reset();
  ++alt_step_;
  ++step_;
  return out;
}

void Experiment::run_epoch(const LabeledDataset& test) {
  if (phase_ == Phase::Finished) fail(Errc::InvalidInput, "experiment already finished");
  if (phase_ == Phase::Warmup && epoch_ >= cfg_.schedule.warmup_epochs) start_alternating(test);
  const bool warm = phase_ == Phase::Warmup;

  double ce = 0, bns = 0, fda = 0, de = 0, kd = 0;
  int kd_count = 0;
  const int n = cfg_.schedule.steps_per_epoch;
  for (int i = 0; i < n; ++i) {
    StepLosses s;
    if (warm) {
      s = warmup_step();
    } else {
      StepLosses g = generator_step();
      s = finetune_step();
      s.ce = g.ce;
      s.bns = g.bns;
      s.fda = g.fda;
      s.de = g.de;
    }
    ce += s.ce;
    bns += s.bns;
    fda += s.fda;
    de += s.de;
    if (!std::isnan(s.kd)) {
      kd += s.kd;
      ++kd_count;
    }
  }
  ++epoch_;
  if (phase_ == Phase::Warmup && epoch_ >= cfg_.schedule.warmup_epochs) start_alternating(test);

  EpochMetrics row;
  row.epoch = epoch_;
  row.step = step_;
  row.ce = ce / n;
  row.bns = bns / n;
  row.fda = warm ? kNaN : fda / n;
  row.de = warm ? kNaN : de / n;
  row.kd = !warm && kd_count > 0 ? kd / kd_count : kNaN;
  if (student_) {
    FakeQuantModel snapshot = student_->clone();
    snapshot.freeze_ranges();
    row.student_acc = evaluate(snapshot, test, cfg_.epoch_eval_samples);
  } else {
    row.student_acc = kNaN;
  }
  const ProbeMetrics p = phase_ == Phase::Alternating && warm
                             ? warmup_probe_
                             : probe_metrics(gen_, teacher_, norm_, cfg_.probe_size, derive_seed(cfg_.schedule.seed, "probe"));
  row.fisher_ratio = p.fisher_ratio;
  row.diversity = p.diversity;
  metrics_.push_back(row);
}

void Experiment::finish() {
  student().freeze_ranges();
  phase_ = Phase::Finished;
}

namespace {

constexpr const char* kStateDescriptor = "experiment 1";
constexpr int kMetricCols = 10;

void put_optimizer(Container& c, const std::string& prefix, Optimizer& opt) {
  c.put(prefix + "steps", Tensor::scalar(static_cast<double>(opt.steps())));
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    c.put(prefix + "m." + std::to_string(i), opt.first_moments()[i]);
    c.put(prefix + "v." + std::to_string(i), opt.second_moments()[i]);
  }
}

void get_optimizer(const Container& c, const std::string& prefix, Optimizer& opt) {
  opt.set_steps(static_cast<long>(c.get(prefix + "steps")[0]));
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const Tensor& m = c.get(prefix + "m." + std::to_string(i));
    const Tensor& v = c.get(prefix + "v." + std::to_string(i));
    if (m.shape() != opt.first_moments()[i].shape() || v.shape() != opt.second_moments()[i].shape()) {
      fail(Errc::MalformedFile, "optimizer state does not match the parameters");
    }
    opt.first_moments()[i] = m;
    opt.second_moments()[i] = v;
  }
}

std::string bank_key(int l, int c) { return "bank." + std::to_string(l) + "." + std::to_string(c) + "."; }

}  // namespace

void Experiment::save(const std::filesystem::path& path) {
  if (pending_) fail(Errc::InvalidInput, "state can only be saved between steps");
  Container c;
  c.descriptor = kStateDescriptor;
  c.put("state.counters", Tensor({9}, {static_cast<double>(phase_), static_cast<double>(step_),
                                       static_cast<double>(alt_step_), static_cast<double>(epoch_), post_quant_acc_,
                                       warmup_probe_.fisher_ratio, warmup_probe_.diversity,
                                       static_cast<double>(teacher_print_ >> 32),
                                       static_cast<double>(teacher_print_ & 0xffffffffULL)}));
  store_generator(c, gen_, "generator.");
  put_optimizer(c, "generator_opt.", gen_opt_);
  if (student_) {
    store_fake_quant(c, *student_, "student.");
    put_optimizer(c, "student_opt.", *student_opt_);
  }
  if (bank_) {
    c.put("bank.meta", Tensor({3}, {static_cast<double>(bank_->num_layers()), static_cast<double>(bank_->first_layer()),
                                    static_cast<double>(bank_->num_classes())}));
    for (int l = bank_->first_layer(); l < bank_->num_layers(); ++l) {
      for (int k = 0; k < bank_->num_classes(); ++k) {
        if (!bank_->initialized(l, k)) continue;
        c.put(bank_key(l, k) + "mean", bank_->mean(l, k));
        c.put(bank_key(l, k) + "std", bank_->std(l, k));
      }
    }
  }
  Tensor rows({static_cast<int>(metrics_.size()), kMetricCols});
  for (std::size_t i = 0; i < metrics_.size(); ++i) {
    const EpochMetrics& r = metrics_[i];
    const double v[kMetricCols] = {static_cast<double>(r.epoch), static_cast<double>(r.step), r.ce, r.bns, r.fda,
                                   r.de, r.kd, r.student_acc, r.fisher_ratio, r.diversity};
    for (int k = 0; k < kMetricCols; ++k) rows[i * kMetricCols + static_cast<std::size_t>(k)] = v[k];
  }
  c.put("metrics", rows);
  c.save(path);
}

Experiment Experiment::load(const std::filesystem::path& path, const PipelineConfig& cfg, const Classifier& teacher,
                            const Normalization& norm) {
  const Container c = Container::load(path);
  if (c.descriptor != kStateDescriptor) fail(Errc::MalformedFile, "'" + path.string() + "' is not an experiment state");
  Experiment ex(cfg, teacher, norm);
  const Tensor& k = c.get("state.counters");
  if (k.size() != 9) fail(Errc::MalformedFile, "bad state.counters array");
  const std::uint64_t print = (static_cast<std::uint64_t>(k[7]) << 32) | static_cast<std::uint64_t>(k[8]);
  if (print != ex.teacher_print_) fail(Errc::InvalidInput, "state was produced with a different teacher");
  ex.phase_ = static_cast<Phase>(static_cast<int>(k[0]));
  ex.step_ = static_cast<long>(k[1]);
  ex.alt_step_ = static_cast<long>(k[2]);
  ex.epoch_ = static_cast<int>(k[3]);
  ex.post_quant_acc_ = k[4];
  ex.warmup_probe_ = {k[5], k[6]};

  ex.gen_ = restore_generator(c, generator_descriptor(ex.gen_.spec()), "generator.");
  ex.gen_opt_ = Optimizer(cfg.schedule.generator_optimizer, ex.gen_.parameters(), cfg.schedule.generator_lr);
  get_optimizer(c, "generator_opt.", ex.gen_opt_);
  if (c.has("student.quant.config")) {
    ex.student_.emplace(restore_fake_quant(c, classifier_descriptor(teacher.arch()), "student."));
    ex.build_student_optimizer();
    get_optimizer(c, "student_opt.", *ex.student_opt_);
  }
  if (c.has("bank.meta")) {
    const Tensor& meta = c.get("bank.meta");
    CentroidBank bank = make_centroid_bank(ex.teacher_, static_cast<int>(meta[1]), cfg.beta_fd);
    for (int l = bank.first_layer(); l < bank.num_layers(); ++l) {
      for (int q = 0; q < bank.num_classes(); ++q) {
        if (c.has(bank_key(l, q) + "mean")) bank.set(l, q, c.get(bank_key(l, q) + "mean"), c.get(bank_key(l, q) + "std"));
      }
    }
    ex.bank_.emplace(std::move(bank));
  }
  const Tensor& rows = c.get("metrics");
  for (int i = 0; rows.rank() == 2 && i < rows.dim(0); ++i) {
    auto at = [&](int col) { return rows[static_cast<std::size_t>(i) * kMetricCols + static_cast<std::size_t>(col)]; };
    ex.metrics_.push_back({static_cast<int>(at(0)), static_cast<long>(at(1)), at(2), at(3), at(4), at(5), at(6), at(7),
                           at(8), at(9)});
  }
  return ex;
}

Report run_experiment(Experiment& ex, const LabeledDataset& test, const EpochCallback& on_epoch) {
  const std::uint64_t teacher_print = ex.teacher().fingerprint();
  while (ex.epoch() < ex.config().schedule.total_epochs) {
    ex.run_epoch(test);
    if (on_epoch) on_epoch(ex);
  }
  if (ex.phase() == Phase::Warmup) ex.start_alternating(test);
  if (ex.phase() != Phase::Finished) ex.finish();
  if (ex.teacher().fingerprint() != teacher_print) fail(Errc::InvalidInput, "teacher parameters changed during the run");

  Report r;
  r.teacher_fingerprint = teacher_print;
  r.teacher_accuracy = evaluate(ex.teacher(), test);
  r.post_quant_accuracy = ex.post_quant_accuracy();
  r.final_accuracy = evaluate(ex.student(), test);
  r.warmup_fisher = ex.warmup_probe().fisher_ratio;
  r.warmup_diversity = ex.warmup_probe().diversity;
  const ProbeMetrics p = probe_metrics(ex.generator(), ex.teacher(), ex.norm(), ex.config().probe_size,
                                       derive_seed(ex.config().schedule.seed, "probe"));
  r.final_fisher = p.fisher_ratio;
  r.final_diversity = p.diversity;
  r.metrics = ex.metrics();
  return r;
}

Report run_dfq(const PipelineConfig& cfg, const Classifier& teacher, const LabeledDataset& test,
               const EpochCallback& on_epoch) {
  Experiment ex(cfg, teacher, test.norm);
  return run_experiment(ex, test, on_epoch);
}

PipelineConfig ablation_config(const PipelineConfig& base, const std::string& variant) {
  PipelineConfig c = base;
  if (variant == "full") return c;
  if (variant == "no_DE") {
    c.weights.alpha3 = 0.0;
  } else if (variant == "no_EMA") {
    c.beta_fd = 0.0;
  } else if (variant == "neither") {
    c.weights.alpha3 = 0.0;
    c.beta_fd = 0.0;
  } else {
    fail(Errc::InvalidConfig, "unknown ablation variant '" + variant + "' (expected full, no_DE, no_EMA, neither)");
  }
  return c;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& base, const Classifier& teacher,
                                      const LabeledDataset& test, const std::vector<std::string>& variants) {
  std::vector<PipelineConfig> configs;
  for (const auto& v : variants) configs.push_back(ablation_config(base, v));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) rows.push_back({variants[i], run_dfq(configs[i], teacher, test)});
  return rows;
}

RgbImage synthetic_grid(Generator& g, int per_class, std::uint64_t seed, Tensor* raw) {
  if (per_class < 2) fail(Errc::InvalidInput, "a synthetic grid needs at least two samples per class");
  const int classes = g.spec().num_classes;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) labels.insert(labels.end(), static_cast<std::size_t>(per_class), c);
  NoGradGuard guard;
  const Tensor noise = sample_noise(static_cast<int>(labels.size()), g.spec().noise_dim, seed);
  Tensor images = g.forward(labels, noise)->value;
  RgbImage img = image_grid(images, classes, per_class);
  if (raw) *raw = std::move(images);
  return img;
}

}  // namespace dfq
