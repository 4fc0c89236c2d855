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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <gtest/gtest.h>

#include "dfq/data.hpp"
#include "dfq/hashing.hpp"
#include "support.hpp"

using namespace dfq;
using dfq::testing::error_code;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_classes = 4;
  s.samples_per_class = 50;
  s.image_size = 16;
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dfq_data_" + name);
}

std::vector<int> all_indices(const LabeledDataset& ds) {
  std::vector<int> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TEST(ToyDataset, DeterministicGivenSeed) {
  auto [a_train, a_test] = make_toy_dataset(small_spec());
  auto [b_train, b_test] = make_toy_dataset(small_spec());
  EXPECT_EQ(a_train.pixels, b_train.pixels);
  EXPECT_EQ(a_train.labels, b_train.labels);
  EXPECT_EQ(a_test.pixels, b_test.pixels);

  DatasetSpec other = small_spec();
  other.seed = 2;
  EXPECT_NE(make_toy_dataset(other).first.pixels, a_train.pixels);
}

TEST(ToyDataset, BalancedEightyTwentySplit) {
  auto [train, test] = make_toy_dataset(small_spec());
  EXPECT_EQ(train.size(), 160u);
  EXPECT_EQ(test.size(), 40u);
  EXPECT_EQ(train.split, Split::Train);
  EXPECT_EQ(test.split, Split::Test);
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(std::count(train.labels.begin(), train.labels.end(), c), 40);
    EXPECT_EQ(std::count(test.labels.begin(), test.labels.end(), c), 10);
  }
}

TEST(ToyDataset, SplitsAreDisjoint) {
  auto [train, test] = make_toy_dataset(small_spec());
  std::unordered_set<std::uint64_t> seen;
  const std::size_t n = train.image_numel();
  for (std::size_t i = 0; i < train.size(); ++i) seen.insert(fnv1a64(std::span(train.pixels.data() + i * n, n)));
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_FALSE(seen.count(fnv1a64(std::span(test.pixels.data() + i * n, n)))) << "test image " << i;
  }
}

TEST(ToyDataset, TrainSplitNormalized) {
  auto [train, test] = make_toy_dataset(small_spec());
  const Tensor x = train.batch(all_indices(train));
  const int n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < s; ++p) sum += x[(i * c + ch) * s + p];
    const double mean = sum / (static_cast<double>(n) * s);
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < s; ++p) sq += (x[(i * c + ch) * s + p] - mean) * (x[(i * c + ch) * s + p] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / (static_cast<double>(n) * s)), 1.0, 1e-6);
  }
  EXPECT_EQ(test.norm.mean, train.norm.mean);
}

TEST(ToyDataset, SpecValidation) {
  DatasetSpec s = small_spec();
  s.num_classes = 1;
  EXPECT_EQ(error_code([&] { make_toy_dataset(s); }), Errc::InvalidConfig);
  s = small_spec();
  s.samples_per_class = 49;
  EXPECT_EQ(error_code([&] { make_toy_dataset(s); }), Errc::InvalidConfig);
  s = small_spec();
  s.channels = 2;
  EXPECT_EQ(error_code([&] { make_toy_dataset(s); }), Errc::InvalidConfig);
  s = small_spec();
  s.noise_level = -0.1;
  EXPECT_EQ(error_code([&] { make_toy_dataset(s); }), Errc::InvalidConfig);
}

TEST(DatasetFile, RoundTrip) {
  auto [train, test] = make_toy_dataset(small_spec());
  const auto path = temp_path("rt.dfqdata");
  save_dataset(path, test);
  const LabeledDataset back = load_external(path);
  EXPECT_EQ(back.pixels, test.pixels);
  EXPECT_EQ(back.labels, test.labels);
  EXPECT_EQ(back.split, Split::Test);
  EXPECT_EQ(back.norm.mean, test.norm.mean);
  EXPECT_EQ(back.norm.std, test.norm.std);
  const auto idx = all_indices(test);
  EXPECT_EQ(back.batch(idx), test.batch(idx));

  // Explicit normalization constants override the stored ones.
  const Normalization unit{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  const LabeledDataset raw = load_external(path, &unit);
  EXPECT_NEAR(raw.batch(std::vector<int>{0})[0], test.pixels[0] / 255.0, 1e-15);

  // The recorded checksum matches a recomputation over the same bytes.
  const std::string h = file_hash(path);
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(h, hex64(fnv1a64(bytes)));
  std::filesystem::remove(path);
}

TEST(DatasetFile, MalformedInputsRejected) {
  auto [train, test] = make_toy_dataset(small_spec());
  const auto path = temp_path("bad.dfqdata");
  save_dataset(path, test);
  const auto full = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, full - 7);
  EXPECT_EQ(error_code([&] { load_external(path); }), Errc::MalformedFile);

  save_dataset(path, test);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(static_cast<std::streamoff>(full - 4));
    const std::uint32_t bad = 99;
    f.write(reinterpret_cast<const char*>(&bad), 4);
  }
  EXPECT_EQ(error_code([&] { load_external(path); }), Errc::LabelOutOfRange);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "not a dataset";
  }
  EXPECT_EQ(error_code([&] { load_external(path); }), Errc::MalformedFile);
  std::filesystem::remove(path);
  EXPECT_EQ(error_code([&] { load_external(path); }), Errc::MissingArtifact);
}
