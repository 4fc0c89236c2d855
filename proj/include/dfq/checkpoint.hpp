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

// Versioned binary container shared by model, generator and experiment
// checkpoints. Layout (little-endian):
//   "DFQCKPT\0" | u32 version | str descriptor | str manifest | u32 count |
//   count x (str name | u32 rank | rank x u64 dim | numel x f64)
// where str = u32 length + bytes. Arrays keep their insertion order, so
// save -> load -> save reproduces the file byte for byte.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfq/classifier.hpp"
#include "dfq/fake_quant_model.hpp"
#include "dfq/generator.hpp"
#include "dfq/tensor.hpp"

namespace dfq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Container {
  std::string descriptor;
  std::string manifest;  // JSON text, stored verbatim
  std::vector<std::pair<std::string, Tensor>> arrays;

  void put(std::string name, Tensor t) { arrays.emplace_back(std::move(name), std::move(t)); }
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Container from_bytes(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);
};

// Descriptor strings identify what a container holds, e.g.
// "classifier tiny-cnn-6 3 32 10".
std::string classifier_descriptor(const ArchSpec& arch);
std::string generator_descriptor(const GeneratorSpec& spec);

void store_classifier(Container& c, Classifier& m, const std::string& prefix = "");
Classifier restore_classifier(const Container& c, const std::string& descriptor, const std::string& prefix = "");
void store_generator(Container& c, Generator& g, const std::string& prefix = "");
Generator restore_generator(const Container& c, const std::string& descriptor, const std::string& prefix = "");
void store_fake_quant(Container& c, FakeQuantModel& q, const std::string& prefix = "");
FakeQuantModel restore_fake_quant(const Container& c, const std::string& descriptor, const std::string& prefix = "");

void save_classifier(const std::filesystem::path& path, Classifier& m, const std::string& manifest);
Classifier load_classifier(const std::filesystem::path& path);

// Parses descriptors back into specs.
ArchSpec parse_classifier_descriptor(const std::string& d);
GeneratorSpec parse_generator_descriptor(const std::string& d);

}  // namespace dfq
