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

#include "dfq/quantizer.hpp"

#include <cmath>
#include <string>

#include "dfq/errors.hpp"
#include "dfq/simd.hpp"

namespace dfq {
namespace {

void check_args(const Tensor& x, double alpha, int bits) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    fail(Errc::InvalidRange, "quantization clip range must be positive, got " + std::to_string(alpha));
  }
  if (bits < 2 || bits > 16) fail(Errc::InvalidRange, "bit width must lie in [2, 16], got " + std::to_string(bits));
  if (!x.all_finite()) fail(Errc::InvalidInput, "cannot quantize a tensor with non-finite entries");
}

}  // namespace

void QuantConfig::validate() const {
  if (weight_bits < 2 || weight_bits > 16) fail(Errc::InvalidRange, "weight_bits must lie in [2, 16]");
  if (act_bits < 2 || act_bits > 16) fail(Errc::InvalidRange, "act_bits must lie in [2, 16]");
  if (!(range_momentum >= 0.0 && range_momentum <= 1.0)) fail(Errc::InvalidRange, "range_momentum must lie in [0, 1]");
}

double quant_scale(double alpha, int bits) { return 2.0 * alpha / (std::ldexp(1.0, bits) - 1.0); }
std::int32_t quant_min(int bits) { return -(std::int32_t{1} << (bits - 1)); }
std::int32_t quant_max(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

QuantizedTensor quantize(const Tensor& x, double alpha, int bits) {
  check_args(x, alpha, bits);
  QuantizedTensor q;
  q.shape = x.shape();
  q.scale = quant_scale(alpha, bits);
  q.clip = alpha;
  q.bits = bits;
  q.ints.resize(x.size());
  simd::active().quantize(x.data(), q.ints.data(), x.size(), q.scale, quant_min(bits), quant_max(bits));
  return q;
}

Tensor dequantize(const QuantizedTensor& q) {
  if (q.ints.size() != shape_numel(q.shape) || !(q.scale > 0.0)) {
    fail(Errc::InvalidInput, "malformed quantized tensor");
  }
  Tensor out(q.shape);
  for (std::size_t i = 0; i < q.ints.size(); ++i) out[i] = static_cast<double>(q.ints[i]) * q.scale;
  return out;
}

Tensor fake_quantize(const Tensor& x, double alpha, int bits) {
  check_args(x, alpha, bits);
  Tensor out(x.shape());
  simd::active().fake_quant(x.data(), out.data(), x.size(), quant_scale(alpha, bits), quant_min(bits),
                            quant_max(bits));
  return out;
}

RangeTracker::RangeTracker(double momentum) : momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) fail(Errc::InvalidRange, "range momentum must lie in [0, 1]");
}

void RangeTracker::observe(const Tensor& x) {
  if (frozen_) fail(Errc::FrozenTracker, "observe() on a frozen range tracker");
  if (!x.all_finite()) fail(Errc::InvalidInput, "range tracker observed non-finite activations");
  const double m = simd::active().max_abs(x.data(), x.size());
  if (!initialized_) {
    running_max_ = m;
    initialized_ = true;
  } else {
    running_max_ = (1.0 - momentum_) * running_max_ + momentum_ * m;
  }
}

void RangeTracker::freeze() {
  if (!initialized_ || !(running_max_ > 0.0)) {
    fail(Errc::UninitializedTracker, "cannot freeze a range tracker that has not observed a non-zero range");
  }
  frozen_ = true;
}

double RangeTracker::alpha() const {
  if (!initialized_) fail(Errc::UninitializedTracker, "range tracker has not observed any data");
  return running_max_;
}

RangeTracker RangeTracker::restore(double momentum, double running_max, bool initialized, bool frozen) {
  RangeTracker t(momentum);
  t.running_max_ = running_max;
  t.initialized_ = initialized;
  t.frozen_ = frozen;
  return t;
}

}  // namespace dfq
