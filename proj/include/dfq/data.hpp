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
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dfq/generator.hpp"
#include "dfq/tensor.hpp"

namespace dfq {

// Procedural image classification task: each class is a geometric primitive
// drawn in one of five palette colors (so color alone never identifies a
// class) over a random dark background with jitter and pixel noise.
struct DatasetSpec {
  int num_classes = 10;
  int samples_per_class = 300;
  int image_size = 32;
  int channels = 3;
  double color_jitter = 0.12;
  double position_jitter = 0.15;  // fraction of the image side
  double noise_level = 0.06;      // pixel noise std in [0, 1] units
  std::uint64_t seed = 1;

  void validate() const;
};

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct LabeledDataset {
  int num_classes = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  Split split = Split::Train;
  std::vector<std::uint8_t> pixels;  // [count, C, H, W]
  std::vector<int> labels;
  Normalization norm;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_numel() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  // Normalized images for the given sample indices, [n, C, H, W].
  Tensor batch(std::span<const int> indices) const;
  std::vector<int> batch_labels(std::span<const int> indices) const;
};

// 80/20 split per class; normalization constants come from the train split
// and are shared by both.
std::pair<LabeledDataset, LabeledDataset> make_toy_dataset(const DatasetSpec& spec);

// Per-channel mean and population std of pixel/255 over a dataset.
Normalization compute_normalization(const LabeledDataset& ds);

// Dataset file, little-endian:
//   "DFQDATA\0" | u32 version | u32 classes | u32 count | u32 C | u32 H | u32 W |
//   u8 split | C x f64 mean | C x f64 std | count*C*H*W x u8 pixels |
//   count x u32 labels
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
// Loads a dataset file. A supplied normalization replaces the stored one.
LabeledDataset load_external(const std::filesystem::path& path, const Normalization* normalization = nullptr);

}  // namespace dfq
