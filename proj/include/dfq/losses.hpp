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
#include <span>
#include <vector>

#include "dfq/autograd.hpp"
#include "dfq/batchnorm.hpp"
#include "dfq/classifier.hpp"
#include "dfq/stats.hpp"

namespace dfq {

struct LossWeights {
  double alpha1 = 0.1;  // BN statistic matching in both generator objectives
  double alpha2 = 0.9;  // feature distribution alignment
  double alpha3 = 0.6;  // diversity enhancement
  double gamma = 1.0;   // distillation in the student objective

  void validate() const;
};

// Centroid perturbation for the diversity term: absolute Gaussian std per
// element.
struct DEConfig {
  double lambda_mu = 0.3;
  double lambda_sigma = 0.15;
  std::uint64_t noise_seed = 0;

  void validate() const;
};

// Mean cross-entropy of softmax(logits) against labels.
Var ce_loss(const Var& logits, std::span<const int> labels);

// Sum over all BN layers of squared distances between the batch mean/std
// taps and the stored running statistics.
Var bns_loss(const BnTaps& taps, std::span<const BNLayerParams* const> params);
Var bns_loss(const BnTaps& taps, const Classifier& reference);

// Sum over (layer, class) entries of stats that are initialized in the bank
// of squared distances to the bank's centroids.
Var fda_loss(const ClassBatchStats& stats, const CentroidBank& bank);

// fda_loss against centroids perturbed by fresh Gaussian draws. The draws of
// an entry depend only on (noise_seed, step, layer, class).
Var de_loss(const ClassBatchStats& stats, const CentroidBank& bank, const DEConfig& cfg, std::uint64_t step);

// The perturbed centroid pair used by de_loss for one entry.
std::pair<Tensor, Tensor> perturbed_centroid(const CentroidBank& bank, int layer, int cls, const DEConfig& cfg,
                                             std::uint64_t step);

// Mean over rows of KL(softmax(teacher) || softmax(student)).
Var kd_loss(const Var& student_logits, const Tensor& teacher_logits);

// ce + alpha1 * bns
Var combine_warmup(const Var& ce, const Var& bns, const LossWeights& w);
// l1 + alpha2 * fda + alpha3 * de
Var combine_full(const Var& l1, const Var& fda, const Var& de, const LossWeights& w);
// ce + gamma * kd
Var combine_finetune(const Var& ce, const Var& kd, double gamma);

// Terms of a generator objective evaluated on one teacher forward pass.
// fda and de are null for the warm-up objective.
struct GeneratorTerms {
  Var ce;
  Var bns;
  Var fda;
  Var de;
  Var total;
  ClassBatchStats stats;
};

GeneratorTerms generator_objective_warmup(const ForwardResult& teacher_out, std::span<const int> pseudo_labels,
                                          const Classifier& teacher, const LossWeights& w);

GeneratorTerms generator_objective_full(const ForwardResult& teacher_out, std::span<const int> pseudo_labels,
                                        const Classifier& teacher, const CentroidBank& bank,
                                        const LossWeights& w, const DEConfig& de, std::uint64_t step);

struct FinetuneTerms {
  Var ce;
  Var kd;
  Var total;
};

FinetuneTerms finetune_objective(const Var& student_logits, const Tensor& teacher_logits,
                                 std::span<const int> pseudo_labels, double gamma);

}  // namespace dfq
