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

// Symmetric uniform quantization. A clip range alpha and bit width N define
// the step S = 2*alpha / (2^N - 1); values map to
//   q = clamp(round(x / S), -2^(N-1), 2^(N-1) - 1)
// with ties rounded away from zero, and back to q * S.

#include <cstdint>
#include <optional>
#include <vector>

#include "dfq/tensor.hpp"

namespace dfq {

struct QuantConfig {
  int weight_bits = 4;
  int act_bits = 4;
  // Weight to give a new batch maximum when smoothing activation ranges.
  double range_momentum = 0.1;

  // Throws InvalidRange when a width or the momentum is out of bounds.
  void validate() const;
};

struct QuantizedTensor {
  Shape shape;
  std::vector<std::int32_t> ints;
  double scale = 0.0;
  double clip = 0.0;
  int bits = 0;
};

double quant_scale(double alpha, int bits);
std::int32_t quant_min(int bits);
std::int32_t quant_max(int bits);

QuantizedTensor quantize(const Tensor& x, double alpha, int bits);
Tensor dequantize(const QuantizedTensor& q);
// dequantize(quantize(x)), computed in a single pass.
Tensor fake_quantize(const Tensor& x, double alpha, int bits);

// Tracks a smoothed max|x| over observed batches to serve as the clip range
// of an activation tensor.
class RangeTracker {
 public:
  explicit RangeTracker(double momentum = 0.1);

  void observe(const Tensor& x);
  void freeze();

  bool initialized() const noexcept { return initialized_; }
  bool frozen() const noexcept { return frozen_; }
  double running_max() const noexcept { return running_max_; }
  double momentum() const noexcept { return momentum_; }
  // Clip range for quantization; requires an initialized tracker.
  double alpha() const;

  // Checkpoint restore.
  static RangeTracker restore(double momentum, double running_max, bool initialized, bool frozen);

 private:
  double momentum_;
  double running_max_ = 0.0;
  bool initialized_ = false;
  bool frozen_ = false;
};

}  // namespace dfq
