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

#include "dfq/fake_quant_model.hpp"

#include "dfq/errors.hpp"
#include "dfq/simd.hpp"

namespace dfq {

FakeQuantModel quantize_model(const Classifier& m, const QuantConfig& cfg) {
  cfg.validate();
  FakeQuantModel q(m.clone(), cfg);
  auto& layers = q.net_.layers();
  q.weight_alpha_.assign(layers.size(), 0.0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Var& w = layers[i].weight;
    if (!w) continue;
    if (!w->value.all_finite()) fail(Errc::InvalidInput, "cannot quantize a model with non-finite weights");
    q.weight_alpha_[i] = simd::active().max_abs(w->value.data(), w->value.size());
  }
  for (int l = 0; l < q.net_.num_bn_layers(); ++l) {
    const BNLayerParams& p = q.net_.bn(l);
    if (!p.running_mu.all_finite() || !p.running_sigma.all_finite()) {
      fail(Errc::InvalidInput, "cannot quantize a model with non-finite BN statistics");
    }
  }
  q.trackers_.assign(static_cast<std::size_t>(q.net_.num_relus()), RangeTracker(cfg.range_momentum));
  return q;
}

FakeQuantModel FakeQuantModel::clone() const {
  FakeQuantModel q(net_.clone(), cfg_);
  q.weight_alpha_ = weight_alpha_;
  q.trackers_ = trackers_;
  return q;
}

FakeQuantModel FakeQuantModel::restore(Classifier net, const QuantConfig& cfg, std::vector<double> weight_alpha,
                                       std::vector<RangeTracker> trackers) {
  FakeQuantModel q(std::move(net), cfg);
  if (weight_alpha.size() != q.net_.layers().size() || trackers.size() != static_cast<std::size_t>(q.net_.num_relus())) {
    fail(Errc::MalformedFile, "quantized model state does not match its architecture");
  }
  q.weight_alpha_ = std::move(weight_alpha);
  q.trackers_ = std::move(trackers);
  return q;
}

ForwardResult FakeQuantModel::forward(const Var& x, bool observe_ranges) {
  ForwardQuant fq{cfg_.weight_bits, weight_alpha_, cfg_.act_bits, &trackers_, observe_ranges};
  return net_.forward(x, BnMode::Eval, &fq, false);
}

Tensor FakeQuantModel::predict(const Tensor& x) {
  NoGradGuard guard;
  return forward(constant(x), false).logits->value;
}

void FakeQuantModel::observe(const Tensor& x) {
  NoGradGuard guard;
  forward(constant(x), true);
}

void FakeQuantModel::freeze_ranges() {
  for (auto& t : trackers_) {
    if (!t.frozen()) t.freeze();
  }
}

bool FakeQuantModel::ranges_frozen() const {
  for (const auto& t : trackers_) {
    if (!t.frozen()) return false;
  }
  return true;
}

std::pair<Var, BnTaps> forward_with_taps(FakeQuantModel& model, const Var& x) {
  ForwardResult r = model.forward(x, false);
  BnTaps taps = compute_taps(r);
  return {r.logits, std::move(taps)};
}

}  // namespace dfq
