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
#include <string>
#include <vector>

#include "dfq/autograd.hpp"
#include "dfq/batchnorm.hpp"

namespace dfq {

// Per-channel pixel statistics of a dataset; pixels live in [0, 1].
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

// Class-conditional generator: the label embedding is added to the Gaussian
// latent, projected to a base_size x base_size map, then each stage doubles
// the resolution (nearest upsample, 3x3 conv, BN, leaky ReLU). A final 3x3
// conv with tanh bounds the output to [-1, 1].
struct GeneratorSpec {
  std::string name;
  int num_classes = 10;
  int noise_dim = 32;
  int base_channels = 32;
  int base_size = 8;
  std::vector<int> stage_channels;
  int out_channels = 3;
  double leaky_slope = 0.2;

  int image_size() const { return base_size << stage_channels.size(); }
};

// Registered names: "cgan-small", "cgan-micro".
GeneratorSpec make_generator_spec(const std::string& name, int num_classes, int out_channels, int image_size);

class Generator {
 public:
  static Generator build(const GeneratorSpec& spec, std::uint64_t seed);

  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;
  Generator clone() const;

  // Raw output in [-1, 1], shape [N, out_channels, S, S]. BN layers always
  // use batch statistics, so at least two samples are required.
  Var forward(std::span<const int> labels, const Tensor& noise);

  const GeneratorSpec& spec() const noexcept { return spec_; }
  std::vector<Var> parameters() const;
  std::vector<std::pair<std::string, Tensor*>> named_arrays();
  std::uint64_t fingerprint() const;

 private:
  Generator() = default;
  GeneratorSpec spec_;
  Var embedding_;
  Var proj_w_, proj_b_;
  BNLayerParams proj_bn_;
  std::vector<Var> stage_w_;
  std::vector<BNLayerParams> stage_bn_;
  Var out_w_, out_b_;
};

// Standard Gaussian latents [n, noise_dim], deterministic in seed.
Tensor sample_noise(int n, int noise_dim, std::uint64_t seed);

// n labels cycling through the classes; exact balance when n % classes == 0.
std::vector<int> balanced_labels(int n, int num_classes);

// Maps raw generator output into the normalized input space of the
// classifier: pixel = (t + 1) / 2, then (pixel - mean) / std per channel.
Var to_model_input(const Var& raw, const Normalization& norm);

struct SyntheticBatch {
  Tensor images;  // normalized classifier inputs
  std::vector<int> pseudo_labels;
  Tensor noise;
  Tensor teacher_logits;  // empty until a teacher forward fills it
};

SyntheticBatch sample_synthetic(Generator& g, std::span<const int> labels, std::uint64_t noise_seed,
                                const Normalization& norm);

}  // namespace dfq
