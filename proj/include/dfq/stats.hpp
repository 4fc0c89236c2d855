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
#include "dfq/classifier.hpp"
#include "dfq/generator.hpp"

namespace dfq {

// First BN layer of the last third of a network with num_bn_layers BN
// layers (0-based).
int default_semantic_start(int num_bn_layers);

// Per-(layer, class) channel mean/std of the pre-BN features of those
// samples whose teacher prediction equals their pseudo-label.
struct ClassStat {
  int layer;
  int cls;
  int count;
  Var mean;
  Var std;
};

struct ClassBatchStats {
  int first_layer = 0;
  int num_layers = 0;
  int num_classes = 0;
  std::vector<ClassStat> entries;  // ordered by (layer, class)

  const ClassStat* find(int layer, int cls) const;
};

// features: pre-BN feature maps of every BN layer (index = layer). Classes
// with fewer than two correctly classified samples get no entry.
ClassBatchStats class_batch_stats(std::span<const Var> features, std::span<const int> pseudo_labels,
                                  const Tensor& teacher_logits, int first_layer);

// Statistic centroids for layers [first_layer, num_layers) and every class.
class CentroidBank {
 public:
  CentroidBank(int num_layers, int first_layer, int num_classes, std::vector<int> channels, double decay);

  int num_layers() const noexcept { return num_layers_; }
  int first_layer() const noexcept { return first_layer_; }
  int num_classes() const noexcept { return num_classes_; }
  int channels(int layer) const { return channels_.at(static_cast<std::size_t>(layer)); }
  double decay() const noexcept { return decay_; }
  void set_decay(double d);

  bool initialized(int layer, int cls) const;
  const Tensor& mean(int layer, int cls) const;
  const Tensor& std(int layer, int cls) const;
  void set(int layer, int cls, Tensor mean, Tensor std);
  int initialized_count() const;

  // mu <- (1 - decay) mu + decay mu_hat (same for sigma) for every entry in
  // stats; an uninitialized entry takes the observed statistic directly.
  void ema_update(const ClassBatchStats& stats);

  bool operator==(const CentroidBank& o) const;

 private:
  struct Entry {
    bool init = false;
    Tensor mean;
    Tensor std;
  };
  std::size_t slot(int layer, int cls) const;

  int num_layers_;
  int first_layer_;
  int num_classes_;
  std::vector<int> channels_;
  double decay_;
  std::vector<Entry> entries_;
};

// Empty bank shaped after a classifier's BN layers.
CentroidBank make_centroid_bank(const Classifier& teacher, int first_layer, double decay);

// Averages each (layer, class) statistic over the batches in which it was
// observed; entries never observed stay uninitialized.
void init_centroids_from(CentroidBank& bank, std::span<const ClassBatchStats> batches);

struct CentroidInitConfig {
  int num_batches = 4;
  int batch_size = 40;
  int first_layer = -1;  // -1: default_semantic_start
  double decay = 0.2;
  std::uint64_t seed = 1;
};

// Samples num_batches balanced synthetic batches from the generator, runs
// the teacher and averages the correctly classified class statistics.
CentroidBank init_centroids(Generator& g, Classifier& teacher, const Normalization& norm,
                            const CentroidInitConfig& cfg);

struct SeparabilityReport {
  double fisher_ratio = 0.0;
  std::vector<double> per_class_variance;
  int layer = -1;
};

// trace(between-class scatter) / trace(within-class scatter), both
// sample-count weighted; within scatter floored at 1e-12. features [n, D].
SeparabilityReport fisher_separability(const Tensor& features, std::span<const int> labels, int layer = -1);

// Mean over classes of the trace of the unbiased within-class covariance.
double class_diversity(const Tensor& features, std::span<const int> labels);

// [N, C, H, W] -> [N, C] spatial means; rank-2 input is returned unchanged.
Tensor pooled_features(const Tensor& fmap);

}  // namespace dfq
