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

#include "dfq/generator.hpp"

#include <cmath>

#include "dfq/errors.hpp"
#include "dfq/hashing.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {

GeneratorSpec make_generator_spec(const std::string& name, int num_classes, int out_channels, int image_size) {
  GeneratorSpec s;
  s.name = name;
  s.num_classes = num_classes;
  s.out_channels = out_channels;
  if (name == "cgan-small") {
    s.noise_dim = 32;
    s.base_channels = 32;
    s.stage_channels = {24, 12};
  } else if (name == "cgan-micro") {
    s.noise_dim = 2;
    s.base_channels = 2;
    s.stage_channels = {2};
  } else {
    fail(Errc::UnknownArchitecture, "unknown generator '" + name + "'");
  }
  const int factor = 1 << s.stage_channels.size();
  if (image_size % factor != 0 || image_size / factor < 1) {
    fail(Errc::InvalidInput, "image size " + std::to_string(image_size) + " is not compatible with generator '" + name + "'");
  }
  s.base_size = image_size / factor;
  return s;
}

Generator Generator::build(const GeneratorSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2 || spec.noise_dim < 1) fail(Errc::InvalidInput, "generator needs >= 2 classes and a latent");
  Generator g;
  g.spec_ = spec;
  Rng rng(derive_seed(seed, "generator-init"));
  const int base = spec.base_channels * spec.base_size * spec.base_size;
  g.embedding_ = parameter(normal_tensor({spec.num_classes, spec.noise_dim}, 1.0, rng));
  g.proj_w_ = parameter(normal_tensor({base, spec.noise_dim}, std::sqrt(1.0 / spec.noise_dim), rng));
  g.proj_b_ = parameter(Tensor({base}, 0.0));
  g.proj_bn_ = BNLayerParams::make(spec.base_channels);
  int in = spec.base_channels;
  for (int out : spec.stage_channels) {
    g.stage_w_.push_back(parameter(normal_tensor({out, in, 3, 3}, std::sqrt(2.0 / (in * 9.0)), rng)));
    g.stage_bn_.push_back(BNLayerParams::make(out));
    in = out;
  }
  g.out_w_ = parameter(normal_tensor({spec.out_channels, in, 3, 3}, std::sqrt(1.0 / (in * 9.0)), rng));
  g.out_b_ = parameter(Tensor({spec.out_channels}, 0.0));
  return g;
}

Generator Generator::clone() const {
  Generator g;
  g.spec_ = spec_;
  g.embedding_ = clone_leaf(embedding_);
  g.proj_w_ = clone_leaf(proj_w_);
  g.proj_b_ = clone_leaf(proj_b_);
  g.proj_bn_ = proj_bn_.clone();
  for (const Var& w : stage_w_) g.stage_w_.push_back(clone_leaf(w));
  for (const auto& b : stage_bn_) g.stage_bn_.push_back(b.clone());
  g.out_w_ = clone_leaf(out_w_);
  g.out_b_ = clone_leaf(out_b_);
  return g;
}

Var Generator::forward(std::span<const int> labels, const Tensor& noise) {
  const int n = static_cast<int>(labels.size());
  if (noise.rank() != 2 || noise.dim(0) != n || noise.dim(1) != spec_.noise_dim) {
    fail(Errc::ShapeMismatch, "generator noise " + shape_str(noise.shape()) + " does not match " +
                                  std::to_string(n) + " labels x " + std::to_string(spec_.noise_dim));
  }
  Var h = ops::add(constant(noise), ops::embedding(embedding_, labels));
  h = ops::linear(h, proj_w_, proj_b_);
  h = ops::reshape(h, {n, spec_.base_channels, spec_.base_size, spec_.base_size});
  h = bn_forward(h, proj_bn_, BnMode::Train);
  for (std::size_t i = 0; i < stage_w_.size(); ++i) {
    h = ops::upsample_nearest2x(h);
    h = ops::conv2d(h, stage_w_[i], nullptr, 1, 1);
    h = bn_forward(h, stage_bn_[i], BnMode::Train);
    h = ops::leaky_relu(h, spec_.leaky_slope);
  }
  h = ops::conv2d(h, out_w_, out_b_, 1, 1);
  return ops::tanh(h);
}

std::vector<Var> Generator::parameters() const {
  std::vector<Var> ps{embedding_, proj_w_, proj_b_, proj_bn_.gamma, proj_bn_.beta};
  for (std::size_t i = 0; i < stage_w_.size(); ++i) {
    ps.push_back(stage_w_[i]);
    ps.push_back(stage_bn_[i].gamma);
    ps.push_back(stage_bn_[i].beta);
  }
  ps.push_back(out_w_);
  ps.push_back(out_b_);
  return ps;
}

std::vector<std::pair<std::string, Tensor*>> Generator::named_arrays() {
  std::vector<std::pair<std::string, Tensor*>> out{
      {"embedding", &embedding_->value},       {"proj.weight", &proj_w_->value},
      {"proj.bias", &proj_b_->value},          {"proj.bn.gamma", &proj_bn_.gamma->value},
      {"proj.bn.beta", &proj_bn_.beta->value},
  };
  for (std::size_t i = 0; i < stage_w_.size(); ++i) {
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "weight", &stage_w_[i]->value);
    out.emplace_back(p + "bn.gamma", &stage_bn_[i].gamma->value);
    out.emplace_back(p + "bn.beta", &stage_bn_[i].beta->value);
  }
  out.emplace_back("out.weight", &out_w_->value);
  out.emplace_back("out.bias", &out_b_->value);
  return out;
}

std::uint64_t Generator::fingerprint() const {
  std::uint64_t h = fnv1a64(spec_.name);
  for (auto& [name, t] : const_cast<Generator*>(this)->named_arrays()) h = hash_tensor(*t, fnv1a64(name, h));
  return h;
}

Tensor sample_noise(int n, int noise_dim, std::uint64_t seed) {
  Rng rng(seed);
  return normal_tensor({n, noise_dim}, 1.0, rng);
}

std::vector<int> balanced_labels(int n, int num_classes) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % num_classes;
  return y;
}

Var to_model_input(const Var& raw, const Normalization& norm) {
  std::vector<double> scale(norm.mean.size()), shift(norm.mean.size());
  for (std::size_t c = 0; c < norm.mean.size(); ++c) {
    scale[c] = 0.5 / norm.std[c];
    shift[c] = (0.5 - norm.mean[c]) / norm.std[c];
  }
  return ops::channel_affine(raw, scale, shift);
}

SyntheticBatch sample_synthetic(Generator& g, std::span<const int> labels, std::uint64_t noise_seed,
                                const Normalization& norm) {
  for (int y : labels) {
    if (y < 0 || y >= g.spec().num_classes) fail(Errc::LabelOutOfRange, "synthetic label " + std::to_string(y) + " out of range");
  }
  NoGradGuard guard;
  SyntheticBatch b;
  b.pseudo_labels.assign(labels.begin(), labels.end());
  b.noise = sample_noise(static_cast<int>(labels.size()), g.spec().noise_dim, noise_seed);
  b.images = to_model_input(g.forward(labels, b.noise), norm)->value;
  return b;
}

}  // namespace dfq
