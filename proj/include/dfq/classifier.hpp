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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfq/autograd.hpp"
#include "dfq/batchnorm.hpp"
#include "dfq/quantizer.hpp"

namespace dfq {

enum class LayerKind { Conv, BatchNorm, Relu, Save, Shortcut, GlobalAvgPool, Linear };

struct LayerSpec {
  LayerKind kind;
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
};

// Layered classifier description. Save pushes the running activation; the
// next Shortcut pops it and adds it back, through a 1x1 projection when the
// channel count or stride changes.
struct ArchSpec {
  std::string name;
  int in_channels = 3;
  int image_size = 32;
  int num_classes = 10;
  std::vector<LayerSpec> layers;
};

// Registered names: "tiny-cnn-6", "slim-cnn-6" (half the widths),
// "tiny-resnet-8", "micro-cnn-4".
ArchSpec make_arch(const std::string& name, int in_channels, int image_size, int num_classes);
std::vector<std::string> registered_architectures();

// Quantization applied inside a forward pass: weights of conv/linear layers
// (and shortcut projections) at weight_bits with fixed per-layer clip ranges,
// every ReLU output at act_bits with ranges from the trackers.
struct ForwardQuant {
  int weight_bits = 8;
  std::span<const double> weight_alpha;  // indexed by layer; 0 for weightless layers
  int act_bits = 8;
  std::vector<RangeTracker>* trackers = nullptr;  // one per ReLU, in order
  bool observe = false;
};

struct ForwardResult {
  Var logits;
  std::vector<Var> bn_inputs;  // pre-normalization features, one per BN layer
  Var penultimate;             // pooled features entering the classifier head
};

// Per-BN-layer batch statistics of the pre-normalization features.
struct BnTaps {
  std::vector<Var> features;
  std::vector<Var> mean;
  std::vector<Var> std;
};

class Classifier {
 public:
  struct Layer {
    LayerSpec spec;
    Var weight;
    Var bias;
    std::optional<BNLayerParams> bn;
  };

  static Classifier build(const ArchSpec& arch, std::uint64_t seed);

  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;
  Classifier clone() const;

  ForwardResult forward(const Var& x, BnMode mode, const ForwardQuant* quant = nullptr,
                        bool update_running = false);
  // Eval-mode logits without recording a graph.
  Tensor predict(const Tensor& x);

  const ArchSpec& arch() const noexcept { return arch_; }
  int num_classes() const noexcept { return arch_.num_classes; }
  int num_bn_layers() const noexcept { return static_cast<int>(bn_layer_ids_.size()); }
  int num_relus() const noexcept { return num_relus_; }
  const std::vector<int>& bn_layer_ids() const noexcept { return bn_layer_ids_; }
  BNLayerParams& bn(int l) { return *layers_[static_cast<std::size_t>(bn_layer_ids_.at(static_cast<std::size_t>(l)))].bn; }
  const BNLayerParams& bn(int l) const {
    return *layers_[static_cast<std::size_t>(bn_layer_ids_.at(static_cast<std::size_t>(l)))].bn;
  }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Trainable leaves in declaration order.
  std::vector<Var> parameters() const;
  void set_requires_grad(bool on);

  // Every stored array (parameters and running statistics) in declaration
  // order, as written to checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named_arrays();
  std::uint64_t fingerprint() const;

 private:
  Classifier() = default;
  ArchSpec arch_;
  std::vector<Layer> layers_;
  std::vector<int> bn_layer_ids_;
  int num_relus_ = 0;
};

BnTaps compute_taps(const ForwardResult& r);

// Logits plus per-BN-layer batch statistics, with the BN layers in eval mode.
std::pair<Var, BnTaps> forward_with_taps(Classifier& model, const Var& x);

}  // namespace dfq
