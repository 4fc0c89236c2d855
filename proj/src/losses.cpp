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

#include "dfq/losses.hpp"

#include <cmath>
#include <string>

#include "dfq/errors.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {
namespace {

bool non_negative(double v) { return v >= 0.0 && std::isfinite(v); }

Var zero() { return constant(Tensor::scalar(0.0)); }

}  // namespace

void LossWeights::validate() const {
  std::string bad;
  if (!non_negative(alpha1)) bad += " alpha1";
  if (!non_negative(alpha2)) bad += " alpha2";
  if (!non_negative(alpha3)) bad += " alpha3";
  if (!non_negative(gamma)) bad += " gamma";
  if (!bad.empty()) fail(Errc::InvalidConfig, "loss weights must be finite and >= 0:" + bad);
}

void DEConfig::validate() const {
  std::string bad;
  if (!non_negative(lambda_mu)) bad += " lambda_mu";
  if (!non_negative(lambda_sigma)) bad += " lambda_sigma";
  if (!bad.empty()) fail(Errc::InvalidConfig, "perturbation scales must be finite and >= 0:" + bad);
}

Var ce_loss(const Var& logits, std::span<const int> labels) { return ops::cross_entropy(logits, labels); }

Var bns_loss(const BnTaps& taps, std::span<const BNLayerParams* const> params) {
  if (taps.mean.size() != params.size() || taps.std.size() != params.size()) {
    fail(Errc::ShapeMismatch, "statistic taps cover " + std::to_string(taps.mean.size()) + " layers, reference has " +
                                  std::to_string(params.size()));
  }
  std::vector<Var> terms;
  for (std::size_t l = 0; l < params.size(); ++l) {
    terms.push_back(ops::sq_dist(taps.mean[l], params[l]->running_mu));
    terms.push_back(ops::sq_dist(taps.std[l], params[l]->running_sigma));
  }
  return ops::add_n(terms);
}

Var bns_loss(const BnTaps& taps, const Classifier& reference) {
  std::vector<const BNLayerParams*> ps;
  for (int l = 0; l < reference.num_bn_layers(); ++l) ps.push_back(&reference.bn(l));
  return bns_loss(taps, ps);
}

Var fda_loss(const ClassBatchStats& stats, const CentroidBank& bank) {
  std::vector<Var> terms;
  for (const ClassStat& s : stats.entries) {
    if (!bank.initialized(s.layer, s.cls)) continue;
    terms.push_back(ops::sq_dist(s.mean, bank.mean(s.layer, s.cls)));
    terms.push_back(ops::sq_dist(s.std, bank.std(s.layer, s.cls)));
  }
  return terms.empty() ? zero() : ops::add_n(terms);
}

std::pair<Tensor, Tensor> perturbed_centroid(const CentroidBank& bank, int layer, int cls, const DEConfig& cfg,
                                             std::uint64_t step) {
  Tensor mu = bank.mean(layer, cls);
  Tensor sigma = bank.std(layer, cls);
  const auto entry = static_cast<std::uint64_t>(layer) * static_cast<std::uint64_t>(bank.num_classes()) +
                     static_cast<std::uint64_t>(cls);
  Rng rng(derive_seed(derive_seed(cfg.noise_seed, "diversity", step), "entry", entry));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : mu.values()) v += cfg.lambda_mu * n01(rng);
  for (auto& v : sigma.values()) v += cfg.lambda_sigma * n01(rng);
  return {std::move(mu), std::move(sigma)};
}

Var de_loss(const ClassBatchStats& stats, const CentroidBank& bank, const DEConfig& cfg, std::uint64_t step) {
  cfg.validate();
  std::vector<Var> terms;
  for (const ClassStat& s : stats.entries) {
    if (!bank.initialized(s.layer, s.cls)) continue;
    auto [mu, sigma] = perturbed_centroid(bank, s.layer, s.cls, cfg, step);
    terms.push_back(ops::sq_dist(s.mean, mu));
    terms.push_back(ops::sq_dist(s.std, sigma));
  }
  return terms.empty() ? zero() : ops::add_n(terms);
}

Var kd_loss(const Var& student_logits, const Tensor& teacher_logits) {
  return ops::kl_div(student_logits, teacher_logits);
}

Var combine_warmup(const Var& ce, const Var& bns, const LossWeights& w) {
  return ops::add(ce, ops::scale(bns, w.alpha1));
}

Var combine_full(const Var& l1, const Var& fda, const Var& de, const LossWeights& w) {
  return ops::add_n({l1, ops::scale(fda, w.alpha2), ops::scale(de, w.alpha3)});
}

Var combine_finetune(const Var& ce, const Var& kd, double gamma) { return ops::add(ce, ops::scale(kd, gamma)); }

GeneratorTerms generator_objective_warmup(const ForwardResult& teacher_out, std::span<const int> pseudo_labels,
                                          const Classifier& teacher, const LossWeights& w) {
  w.validate();
  GeneratorTerms t;
  t.ce = ce_loss(teacher_out.logits, pseudo_labels);
  t.bns = bns_loss(compute_taps(teacher_out), teacher);
  t.total = combine_warmup(t.ce, t.bns, w);
  return t;
}

GeneratorTerms generator_objective_full(const ForwardResult& teacher_out, std::span<const int> pseudo_labels,
                                        const Classifier& teacher, const CentroidBank& bank,
                                        const LossWeights& w, const DEConfig& de, std::uint64_t step) {
  GeneratorTerms t = generator_objective_warmup(teacher_out, pseudo_labels, teacher, w);
  t.stats = class_batch_stats(teacher_out.bn_inputs, pseudo_labels, teacher_out.logits->value, bank.first_layer());
  t.fda = fda_loss(t.stats, bank);
  t.de = de_loss(t.stats, bank, de, step);
  t.total = combine_full(t.total, t.fda, t.de, w);
  return t;
}

FinetuneTerms finetune_objective(const Var& student_logits, const Tensor& teacher_logits,
                                 std::span<const int> pseudo_labels, double gamma) {
  if (!non_negative(gamma)) fail(Errc::InvalidConfig, "distillation weight must be finite and >= 0");
  FinetuneTerms t;
  t.ce = ce_loss(student_logits, pseudo_labels);
  t.kd = kd_loss(student_logits, teacher_logits);
  t.total = combine_finetune(t.ce, t.kd, gamma);
  return t;
}

}  // namespace dfq
