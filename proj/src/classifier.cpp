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

#include "dfq/classifier.hpp"

#include <cmath>

#include "dfq/errors.hpp"
#include "dfq/hashing.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {
namespace {

LayerSpec conv(int in, int out, int k, int stride) { return {LayerKind::Conv, in, out, k, stride}; }
LayerSpec bn(int c) { return {LayerKind::BatchNorm, c, c, 0, 1}; }
LayerSpec relu() { return {LayerKind::Relu}; }

void conv_bn_relu(std::vector<LayerSpec>& l, int in, int out, int k, int stride) {
  l.push_back(conv(in, out, k, stride));
  l.push_back(bn(out));
  l.push_back(relu());
}

void residual_block(std::vector<LayerSpec>& l, int in, int out, int stride) {
  l.push_back({LayerKind::Save});
  conv_bn_relu(l, in, out, 3, stride);
  l.push_back(conv(out, out, 3, 1));
  l.push_back(bn(out));
  l.push_back({LayerKind::Shortcut, in, out, 1, stride});
  l.push_back(relu());
}

void head(std::vector<LayerSpec>& l, int features, int classes) {
  l.push_back({LayerKind::GlobalAvgPool});
  l.push_back({LayerKind::Linear, features, classes});
}

bool needs_projection(const LayerSpec& s) { return s.in != s.out || s.stride != 1; }

}  // namespace

std::vector<std::string> registered_architectures() { return {"tiny-cnn-6", "slim-cnn-6", "tiny-resnet-8", "micro-cnn-4"}; }

ArchSpec make_arch(const std::string& name, int in_channels, int image_size, int num_classes) {
  if (in_channels < 1 || image_size < 4 || num_classes < 2) {
    fail(Errc::InvalidInput, "architecture needs >= 1 input channel, image size >= 4 and >= 2 classes");
  }
  ArchSpec a{name, in_channels, image_size, num_classes, {}};
  auto& l = a.layers;
  if (name == "tiny-cnn-6") {
    conv_bn_relu(l, in_channels, 16, 3, 1);
    conv_bn_relu(l, 16, 16, 3, 2);
    conv_bn_relu(l, 16, 32, 3, 1);
    conv_bn_relu(l, 32, 32, 3, 2);
    conv_bn_relu(l, 32, 64, 3, 1);
    conv_bn_relu(l, 64, 64, 3, 2);
    head(l, 64, num_classes);
  } else if (name == "slim-cnn-6") {
    conv_bn_relu(l, in_channels, 8, 3, 1);
    conv_bn_relu(l, 8, 8, 3, 2);
    conv_bn_relu(l, 8, 16, 3, 1);
    conv_bn_relu(l, 16, 16, 3, 2);
    conv_bn_relu(l, 16, 32, 3, 1);
    conv_bn_relu(l, 32, 32, 3, 2);
    head(l, 32, num_classes);
  } else if (name == "tiny-resnet-8") {
    conv_bn_relu(l, in_channels, 16, 3, 1);
    residual_block(l, 16, 16, 1);
    residual_block(l, 16, 32, 2);
    residual_block(l, 32, 64, 2);
    conv_bn_relu(l, 64, 64, 1, 1);
    head(l, 64, num_classes);
  } else if (name == "micro-cnn-4") {
    conv_bn_relu(l, in_channels, 4, 3, 1);
    conv_bn_relu(l, 4, 4, 3, 2);
    conv_bn_relu(l, 4, 4, 3, 1);
    conv_bn_relu(l, 4, 4, 3, 2);
    head(l, 4, num_classes);
  } else {
    fail(Errc::UnknownArchitecture, "unknown architecture '" + name + "'");
  }
  return a;
}

Classifier Classifier::build(const ArchSpec& arch, std::uint64_t seed) {
  Classifier m;
  m.arch_ = arch;
  Rng rng(derive_seed(seed, "classifier-init"));
  int linear_heads = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& s = arch.layers[i];
    Layer layer{s, nullptr, nullptr, std::nullopt};
    switch (s.kind) {
      case LayerKind::Conv: {
        const double fan_in = static_cast<double>(s.in) * s.kernel * s.kernel;
        layer.weight = parameter(normal_tensor({s.out, s.in, s.kernel, s.kernel}, std::sqrt(2.0 / fan_in), rng));
        break;
      }
      case LayerKind::BatchNorm:
        layer.bn = BNLayerParams::make(s.out);
        m.bn_layer_ids_.push_back(static_cast<int>(i));
        break;
      case LayerKind::Relu:
        ++m.num_relus_;
        break;
      case LayerKind::Shortcut:
        if (needs_projection(s)) {
          layer.weight = parameter(normal_tensor({s.out, s.in, 1, 1}, std::sqrt(2.0 / s.in), rng));
        }
        break;
      case LayerKind::Linear: {
        layer.weight = parameter(normal_tensor({s.out, s.in}, std::sqrt(1.0 / s.in), rng));
        layer.bias = parameter(Tensor({s.out}, 0.0));
        ++linear_heads;
        break;
      }
      case LayerKind::Save:
      case LayerKind::GlobalAvgPool:
        break;
    }
    m.layers_.push_back(std::move(layer));
  }
  if (linear_heads != 1) fail(Errc::InvalidInput, "classifier must have exactly one linear head");
  if (m.bn_layer_ids_.size() < 4) {
    fail(Errc::InvalidInput, "classifier needs at least four BN layers");
  }
  return m;
}

Classifier Classifier::clone() const {
  Classifier m;
  m.arch_ = arch_;
  m.bn_layer_ids_ = bn_layer_ids_;
  m.num_relus_ = num_relus_;
  for (const Layer& l : layers_) {
    Layer c{l.spec, l.weight ? clone_leaf(l.weight) : nullptr, l.bias ? clone_leaf(l.bias) : nullptr, std::nullopt};
    if (l.bn) c.bn = l.bn->clone();
    m.layers_.push_back(std::move(c));
  }
  return m;
}

ForwardResult Classifier::forward(const Var& x, BnMode mode, const ForwardQuant* quant, bool update_running) {
  const Shape& in = x->value.shape();
  if (in.size() != 4 || in[1] != arch_.in_channels || in[2] != arch_.image_size || in[3] != arch_.image_size) {
    fail(Errc::ShapeMismatch, "classifier input " + shape_str(in) + " does not match architecture '" + arch_.name + "'");
  }
  auto qweight = [&](std::size_t i, const Var& w) -> Var {
    if (!quant) return w;
    const double a = quant->weight_alpha[i];
    return a > 0.0 ? ops::fake_quant_ste(w, a, quant->weight_bits) : w;
  };

  ForwardResult r;
  std::vector<Var> saved;
  Var h = x;
  int relu_index = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    switch (l.spec.kind) {
      case LayerKind::Conv:
        h = ops::conv2d(h, qweight(i, l.weight), nullptr, l.spec.stride, l.spec.kernel / 2);
        break;
      case LayerKind::BatchNorm:
        r.bn_inputs.push_back(h);
        h = bn_forward(h, *l.bn, mode, update_running);
        break;
      case LayerKind::Relu: {
        h = ops::relu(h);
        if (quant) {
          RangeTracker& t = quant->trackers->at(static_cast<std::size_t>(relu_index));
          if (quant->observe && !t.frozen()) t.observe(h->value);
          const double a = t.alpha();
          if (a > 0.0) h = ops::fake_quant_ste(h, a, quant->act_bits);
        }
        ++relu_index;
        break;
      }
      case LayerKind::Save:
        saved.push_back(h);
        break;
      case LayerKind::Shortcut: {
        if (saved.empty()) fail(Errc::InvalidInput, "shortcut without a saved activation");
        Var skip = saved.back();
        saved.pop_back();
        if (l.weight) skip = ops::conv2d(skip, qweight(i, l.weight), nullptr, l.spec.stride, 0);
        h = ops::add(h, skip);
        break;
      }
      case LayerKind::GlobalAvgPool:
        h = ops::global_avg_pool(h);
        r.penultimate = h;
        break;
      case LayerKind::Linear:
        h = ops::linear(h, qweight(i, l.weight), l.bias);
        break;
    }
  }
  r.logits = h;
  return r;
}

Tensor Classifier::predict(const Tensor& x) {
  NoGradGuard guard;
  return forward(constant(x), BnMode::Eval).logits->value;
}

std::vector<Var> Classifier::parameters() const {
  std::vector<Var> ps;
  for (const Layer& l : layers_) {
    if (l.weight) ps.push_back(l.weight);
    if (l.bias) ps.push_back(l.bias);
    if (l.bn) {
      ps.push_back(l.bn->gamma);
      ps.push_back(l.bn->beta);
    }
  }
  return ps;
}

void Classifier::set_requires_grad(bool on) {
  for (const Var& p : parameters()) p->requires_grad = on;
}

std::vector<std::pair<std::string, Tensor*>> Classifier::named_arrays() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    if (l.weight) out.emplace_back(p + "weight", &l.weight->value);
    if (l.bias) out.emplace_back(p + "bias", &l.bias->value);
    if (l.bn) {
      out.emplace_back(p + "bn.gamma", &l.bn->gamma->value);
      out.emplace_back(p + "bn.beta", &l.bn->beta->value);
      out.emplace_back(p + "bn.running_mu", &l.bn->running_mu);
      out.emplace_back(p + "bn.running_sigma", &l.bn->running_sigma);
    }
  }
  return out;
}

std::uint64_t Classifier::fingerprint() const {
  std::uint64_t h = fnv1a64(arch_.name);
  for (auto& [name, t] : const_cast<Classifier*>(this)->named_arrays()) h = hash_tensor(*t, fnv1a64(name, h));
  return h;
}

BnTaps compute_taps(const ForwardResult& r) {
  BnTaps taps;
  taps.features = r.bn_inputs;
  for (const Var& f : r.bn_inputs) {
    taps.mean.push_back(ops::channel_mean(f));
    taps.std.push_back(ops::channel_std(f));
  }
  return taps;
}

std::pair<Var, BnTaps> forward_with_taps(Classifier& model, const Var& x) {
  ForwardResult r = model.forward(x, BnMode::Eval);
  BnTaps taps = compute_taps(r);
  return {r.logits, std::move(taps)};
}

}  // namespace dfq
