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

#include <vector>

#include "dfq/classifier.hpp"
#include "dfq/quantizer.hpp"

namespace dfq {

// A copy of a trained classifier run with simulated low-bit arithmetic.
// BN layers always normalize with the stored running statistics, which are
// never modified; the affine BN parameters stay trainable.
class FakeQuantModel {
 public:
  FakeQuantModel(FakeQuantModel&&) noexcept = default;
  FakeQuantModel& operator=(FakeQuantModel&&) noexcept = default;
  FakeQuantModel clone() const;

  // observe_ranges feeds each ReLU output to its tracker before quantizing
  // (ignored once the trackers are frozen).
  ForwardResult forward(const Var& x, bool observe_ranges);
  // Logits without recording a graph or touching the trackers.
  Tensor predict(const Tensor& x);
  // Range calibration pass: observes activations, no gradient.
  void observe(const Tensor& x);

  void freeze_ranges();
  bool ranges_frozen() const;

  Classifier& network() noexcept { return net_; }
  const Classifier& network() const noexcept { return net_; }
  const QuantConfig& config() const noexcept { return cfg_; }
  const std::vector<double>& weight_alpha() const noexcept { return weight_alpha_; }
  std::vector<RangeTracker>& trackers() noexcept { return trackers_; }
  const std::vector<RangeTracker>& trackers() const noexcept { return trackers_; }

  // Checkpoint restore.
  static FakeQuantModel restore(Classifier net, const QuantConfig& cfg, std::vector<double> weight_alpha,
                                std::vector<RangeTracker> trackers);

 private:
  friend FakeQuantModel quantize_model(const Classifier& m, const QuantConfig& cfg);
  FakeQuantModel(Classifier net, QuantConfig cfg) : net_(std::move(net)), cfg_(cfg) {}

  Classifier net_;
  QuantConfig cfg_;
  std::vector<double> weight_alpha_;
  std::vector<RangeTracker> trackers_;
};

// Copies m, fixes each weight tensor's clip range at max|w| and creates
// unfrozen activation trackers.
FakeQuantModel quantize_model(const Classifier& m, const QuantConfig& cfg);

std::pair<Var, BnTaps> forward_with_taps(FakeQuantModel& model, const Var& x);

}  // namespace dfq
