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

#include "dfq/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dfq/errors.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {

int default_semantic_start(int num_bn_layers) {
  if (num_bn_layers < 1) fail(Errc::InvalidInput, "network has no BN layers");
  return num_bn_layers - (num_bn_layers + 2) / 3;
}

const ClassStat* ClassBatchStats::find(int layer, int cls) const {
  for (const auto& e : entries) {
    if (e.layer == layer && e.cls == cls) return &e;
  }
  return nullptr;
}

ClassBatchStats class_batch_stats(std::span<const Var> features, std::span<const int> pseudo_labels,
                                  const Tensor& teacher_logits, int first_layer) {
  if (teacher_logits.empty()) fail(Errc::InvalidInput, "class statistics need teacher logits");
  if (teacher_logits.rank() != 2 || teacher_logits.dim(0) != static_cast<int>(pseudo_labels.size())) {
    fail(Errc::ShapeMismatch, "teacher logits " + shape_str(teacher_logits.shape()) + " do not match " +
                                  std::to_string(pseudo_labels.size()) + " pseudo-labels");
  }
  const int num_layers = static_cast<int>(features.size());
  if (first_layer < 0 || first_layer >= num_layers) {
    fail(Errc::InvalidRange, "semantic start layer " + std::to_string(first_layer) + " outside [0, " +
                                 std::to_string(num_layers) + ")");
  }
  ClassBatchStats out;
  out.first_layer = first_layer;
  out.num_layers = num_layers;
  out.num_classes = teacher_logits.dim(1);

  const auto pred = ops::argmax_rows(teacher_logits);
  std::vector<std::vector<int>> members(static_cast<std::size_t>(out.num_classes));
  for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
    const int y = pseudo_labels[i];
    if (y < 0 || y >= out.num_classes) fail(Errc::LabelOutOfRange, "pseudo-label " + std::to_string(y) + " out of range");
    if (pred[i] == y) members[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  for (int l = first_layer; l < num_layers; ++l) {
    const Var& f = features[static_cast<std::size_t>(l)];
    if (f->value.dim(0) != static_cast<int>(pseudo_labels.size())) {
      fail(Errc::ShapeMismatch, "feature tap batch size does not match pseudo-labels");
    }
    for (int c = 0; c < out.num_classes; ++c) {
      const auto& idx = members[static_cast<std::size_t>(c)];
      if (idx.size() < 2) continue;
      Var sub = ops::select_batch(f, idx);
      out.entries.push_back({l, c, static_cast<int>(idx.size()), ops::channel_mean(sub), ops::channel_std(sub)});
    }
  }
  return out;
}

CentroidBank::CentroidBank(int num_layers, int first_layer, int num_classes, std::vector<int> channels,
                           double decay)
    : num_layers_(num_layers),
      first_layer_(first_layer),
      num_classes_(num_classes),
      channels_(std::move(channels)),
      decay_(0.0) {
  if (first_layer < 0 || first_layer >= num_layers) fail(Errc::InvalidRange, "semantic start layer out of range");
  if (num_classes < 1 || channels_.size() != static_cast<std::size_t>(num_layers)) {
    fail(Errc::InvalidInput, "centroid bank layout is inconsistent");
  }
  set_decay(decay);
  entries_.resize(static_cast<std::size_t>(num_layers - first_layer) * static_cast<std::size_t>(num_classes));
}

void CentroidBank::set_decay(double d) {
  if (!(d >= 0.0 && d <= 1.0)) fail(Errc::InvalidRange, "EMA decay must lie in [0, 1]");
  decay_ = d;
}

std::size_t CentroidBank::slot(int layer, int cls) const {
  if (layer < first_layer_ || layer >= num_layers_ || cls < 0 || cls >= num_classes_) {
    fail(Errc::InvalidRange, "centroid (" + std::to_string(layer) + ", " + std::to_string(cls) + ") outside the bank");
  }
  return static_cast<std::size_t>(layer - first_layer_) * static_cast<std::size_t>(num_classes_) +
         static_cast<std::size_t>(cls);
}

bool CentroidBank::initialized(int layer, int cls) const { return entries_[slot(layer, cls)].init; }

const Tensor& CentroidBank::mean(int layer, int cls) const {
  const Entry& e = entries_[slot(layer, cls)];
  if (!e.init) fail(Errc::InvalidInput, "read of an uninitialized centroid");
  return e.mean;
}

const Tensor& CentroidBank::std(int layer, int cls) const {
  const Entry& e = entries_[slot(layer, cls)];
  if (!e.init) fail(Errc::InvalidInput, "read of an uninitialized centroid");
  return e.std;
}

void CentroidBank::set(int layer, int cls, Tensor mean, Tensor std) {
  const auto c = static_cast<std::size_t>(channels(layer));
  if (mean.size() != c || std.size() != c) fail(Errc::ShapeMismatch, "centroid width does not match layer channels");
  Entry& e = entries_[slot(layer, cls)];
  e.init = true;
  e.mean = std::move(mean);
  e.std = std::move(std);
}

int CentroidBank::initialized_count() const {
  return static_cast<int>(std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.init; }));
}

void CentroidBank::ema_update(const ClassBatchStats& stats) {
  for (const ClassStat& s : stats.entries) {
    Entry& e = entries_[slot(s.layer, s.cls)];
    if (!e.init) {
      set(s.layer, s.cls, s.mean->value, s.std->value);
      continue;
    }
    for (std::size_t k = 0; k < e.mean.size(); ++k) {
      e.mean[k] = (1.0 - decay_) * e.mean[k] + decay_ * s.mean->value[k];
      e.std[k] = (1.0 - decay_) * e.std[k] + decay_ * s.std->value[k];
    }
  }
}

bool CentroidBank::operator==(const CentroidBank& o) const {
  if (num_layers_ != o.num_layers_ || first_layer_ != o.first_layer_ || num_classes_ != o.num_classes_ ||
      decay_ != o.decay_) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Entry& a = entries_[i];
    const Entry& b = o.entries_[i];
    if (a.init != b.init) return false;
    if (a.init && !(a.mean == b.mean && a.std == b.std)) return false;
  }
  return true;
}

CentroidBank make_centroid_bank(const Classifier& teacher, int first_layer, double decay) {
  std::vector<int> channels;
  for (int l = 0; l < teacher.num_bn_layers(); ++l) channels.push_back(teacher.bn(l).channels());
  if (first_layer < 0) first_layer = default_semantic_start(teacher.num_bn_layers());
  return CentroidBank(teacher.num_bn_layers(), first_layer, teacher.num_classes(), std::move(channels), decay);
}

void init_centroids_from(CentroidBank& bank, std::span<const ClassBatchStats> batches) {
  std::map<std::pair<int, int>, std::tuple<Tensor, Tensor, int>> acc;
  for (const auto& b : batches) {
    for (const ClassStat& s : b.entries) {
      auto [it, fresh] = acc.try_emplace({s.layer, s.cls}, Tensor(s.mean->value.shape(), 0.0),
                                         Tensor(s.std->value.shape(), 0.0), 0);
      auto& [m, sd, n] = it->second;
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] += s.mean->value[k];
        sd[k] += s.std->value[k];
      }
      ++n;
    }
  }
  for (auto& [key, val] : acc) {
    auto& [m, sd, n] = val;
    for (auto& v : m.values()) v /= n;
    for (auto& v : sd.values()) v /= n;
    bank.set(key.first, key.second, std::move(m), std::move(sd));
  }
}

CentroidBank init_centroids(Generator& g, Classifier& teacher, const Normalization& norm,
                            const CentroidInitConfig& cfg) {
  if (cfg.num_batches < 1) fail(Errc::InvalidInput, "centroid initialization needs at least one batch");
  if (g.spec().num_classes != teacher.num_classes() || g.spec().image_size() != teacher.arch().image_size ||
      g.spec().out_channels != teacher.arch().in_channels) {
    fail(Errc::ShapeMismatch, "generator output does not match the teacher's input or classes");
  }
  CentroidBank bank = make_centroid_bank(teacher, cfg.first_layer, cfg.decay);
  NoGradGuard guard;
  std::vector<ClassBatchStats> batches;
  const auto labels = balanced_labels(cfg.batch_size, teacher.num_classes());
  for (int k = 0; k < cfg.num_batches; ++k) {
    SyntheticBatch b = sample_synthetic(g, labels, derive_seed(cfg.seed, "centroid-init", static_cast<std::uint64_t>(k)), norm);
    ForwardResult r = teacher.forward(constant(b.images), BnMode::Eval);
    batches.push_back(class_batch_stats(r.bn_inputs, b.pseudo_labels, r.logits->value, bank.first_layer()));
  }
  init_centroids_from(bank, batches);
  return bank;
}

Tensor pooled_features(const Tensor& fmap) {
  if (fmap.rank() == 2) return fmap;
  if (fmap.rank() != 4) fail(Errc::ShapeMismatch, "pooled_features expects rank 2 or 4");
  const int n = fmap.dim(0), c = fmap.dim(1), s = fmap.dim(2) * fmap.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (int k = 0; k < s; ++k) acc += fmap[static_cast<std::size_t>(i) * s + k];
    out[static_cast<std::size_t>(i)] = acc / s;
  }
  return out;
}

namespace {

struct ClassMoments {
  std::vector<int> classes;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<int>> members;
};

ClassMoments group_by_class(const Tensor& features, std::span<const int> labels) {
  if (features.rank() != 2 || features.dim(0) != static_cast<int>(labels.size())) {
    fail(Errc::ShapeMismatch, "features " + shape_str(features.shape()) + " do not match " +
                                  std::to_string(labels.size()) + " labels");
  }
  const int d = features.dim(1);
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  ClassMoments cm;
  for (auto& [c, idx] : by_class) {
    if (idx.size() < 2) continue;
    std::vector<double> m(static_cast<std::size_t>(d), 0.0);
    for (int i : idx) {
      for (int k = 0; k < d; ++k) m[static_cast<std::size_t>(k)] += features[static_cast<std::size_t>(i) * d + k];
    }
    for (auto& v : m) v /= static_cast<double>(idx.size());
    cm.classes.push_back(c);
    cm.means.push_back(std::move(m));
    cm.members.push_back(idx);
  }
  if (cm.classes.size() < 2) fail(Errc::InvalidInput, "separability metrics need two classes with two samples each");
  return cm;
}

// Sum of squared deviations from the class mean (trace of the scatter).
double class_scatter(const Tensor& features, const std::vector<int>& idx, const std::vector<double>& mean) {
  const int d = features.dim(1);
  double s = 0.0;
  for (int i : idx) {
    for (int k = 0; k < d; ++k) {
      const double v = features[static_cast<std::size_t>(i) * d + k] - mean[static_cast<std::size_t>(k)];
      s += v * v;
    }
  }
  return s;
}

}  // namespace

SeparabilityReport fisher_separability(const Tensor& features, std::span<const int> labels, int layer) {
  const ClassMoments cm = group_by_class(features, labels);
  const int d = features.dim(1);
  std::vector<double> global(static_cast<std::size_t>(d), 0.0);
  std::size_t total = 0;
  for (std::size_t c = 0; c < cm.classes.size(); ++c) {
    const double n = static_cast<double>(cm.members[c].size());
    for (int k = 0; k < d; ++k) global[static_cast<std::size_t>(k)] += n * cm.means[c][static_cast<std::size_t>(k)];
    total += cm.members[c].size();
  }
  for (auto& v : global) v /= static_cast<double>(total);

  SeparabilityReport r;
  r.layer = layer;
  double between = 0.0, within = 0.0;
  for (std::size_t c = 0; c < cm.classes.size(); ++c) {
    const double n = static_cast<double>(cm.members[c].size());
    for (int k = 0; k < d; ++k) {
      const double v = cm.means[c][static_cast<std::size_t>(k)] - global[static_cast<std::size_t>(k)];
      between += n * v * v;
    }
    const double sc = class_scatter(features, cm.members[c], cm.means[c]);
    within += sc;
    r.per_class_variance.push_back(sc / (n - 1.0));
  }
  r.fisher_ratio = between / std::max(within, 1e-12);
  return r;
}

double class_diversity(const Tensor& features, std::span<const int> labels) {
  const ClassMoments cm = group_by_class(features, labels);
  double acc = 0.0;
  for (std::size_t c = 0; c < cm.classes.size(); ++c) {
    acc += class_scatter(features, cm.members[c], cm.means[c]) / (static_cast<double>(cm.members[c].size()) - 1.0);
  }
  return acc / static_cast<double>(cm.classes.size());
}

}  // namespace dfq
