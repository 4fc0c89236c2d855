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

#include "dfq/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <unordered_set>

#include "dfq/errors.hpp"
#include "dfq/hashing.hpp"
#include "dfq/rng.hpp"

namespace dfq {
namespace {

constexpr char kDataMagic[8] = {'D', 'F', 'Q', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kDataVersion = 1;
constexpr int kNumShapes = 10;

constexpr std::array<std::array<double, 3>, 5> kPalette{{
    {0.90, 0.25, 0.20},
    {0.25, 0.85, 0.30},
    {0.25, 0.40, 0.95},
    {0.95, 0.85, 0.25},
    {0.85, 0.30, 0.90},
}};

// Signed-area test for the filled triangle.
double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Coverage of shape `kind` at pixel (px, py) for a primitive centred at
// (cx, cy) with radius r.
bool covers(int kind, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  const double ax = std::fabs(dx), ay = std::fabs(dy);
  const double thick = std::max(1.0, 0.28 * r);
  switch (kind) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return ax <= 0.85 * r && ay <= 0.85 * r;
    case 2: {  // triangle, apex up
      const double x0 = cx, y0 = cy - r, x1 = cx - r, y1 = cy + 0.8 * r, x2 = cx + r, y2 = cy + 0.8 * r;
      const double e0 = edge(x0, y0, x1, y1, px, py), e1 = edge(x1, y1, x2, y2, px, py),
                   e2 = edge(x2, y2, x0, y0, px, py);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    case 3:  // plus
      return (ax <= thick * 0.6 && ay <= r) || (ay <= thick * 0.6 && ax <= r);
    case 4: {  // ring
      const double d = std::sqrt(dx * dx + dy * dy);
      return d <= r && d >= r - thick;
    }
    case 5:  // horizontal bars
      return ax <= r && ay <= r && static_cast<int>(std::floor((dy + r) / thick)) % 2 == 0;
    case 6:  // vertical bars
      return ax <= r && ay <= r && static_cast<int>(std::floor((dx + r) / thick)) % 2 == 0;
    case 7:  // diagonal cross
      return ax <= r && ay <= r && (std::fabs(dx - dy) <= thick * 0.7 || std::fabs(dx + dy) <= thick * 0.7);
    case 8: {  // checkerboard patch
      if (ax > r || ay > r) return false;
      const int gx = static_cast<int>(std::floor((dx + r) / (0.5 * r)));
      const int gy = static_cast<int>(std::floor((dy + r) / (0.5 * r)));
      return (gx + gy) % 2 == 0;
    }
    case 9:  // diamond
      return ax + ay <= r;
    default:
      return false;
  }
}

std::vector<std::uint8_t> render(const DatasetSpec& spec, int cls, Rng& rng) {
  const int s = spec.image_size, c = spec.channels;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> bg(0.0, 0.35);
  std::normal_distribution<double> jitter(0.0, spec.color_jitter);
  std::normal_distribution<double> noise(0.0, spec.noise_level);

  std::vector<double> bg_color(static_cast<std::size_t>(c)), fg_color(static_cast<std::size_t>(c));
  const auto& base = kPalette[static_cast<std::size_t>(cls) % kPalette.size()];
  for (int ch = 0; ch < c; ++ch) {
    bg_color[static_cast<std::size_t>(ch)] = bg(rng);
    const double b = c == 3 ? base[static_cast<std::size_t>(ch)] : 0.85;
    fg_color[static_cast<std::size_t>(ch)] = std::clamp(b + jitter(rng), 0.0, 1.0);
  }
  const double span = spec.position_jitter * s;
  const double cx = 0.5 * s + (2.0 * u01(rng) - 1.0) * span;
  const double cy = 0.5 * s + (2.0 * u01(rng) - 1.0) * span;
  const double r = s * (0.24 + 0.12 * u01(rng));
  const int kind = cls % kNumShapes;

  std::vector<std::uint8_t> img(static_cast<std::size_t>(c) * s * s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const bool fg = covers(kind, x + 0.5, y + 0.5, cx, cy, r);
      for (int ch = 0; ch < c; ++ch) {
        const double v = (fg ? fg_color : bg_color)[static_cast<std::size_t>(ch)] + noise(rng);
        img[(static_cast<std::size_t>(ch) * s + y) * s + x] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

std::uint64_t image_hash(std::span<const std::uint8_t> img) { return fnv1a64(img); }

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) fail(Errc::InvalidConfig, "dataset needs at least 2 classes");
  if (samples_per_class < 50) fail(Errc::InvalidConfig, "dataset needs at least 50 samples per class");
  if (image_size < 8) fail(Errc::InvalidConfig, "image size must be at least 8");
  if (channels != 1 && channels != 3) fail(Errc::InvalidConfig, "dataset channels must be 1 or 3");
  if (color_jitter < 0 || position_jitter < 0 || position_jitter > 0.4 || noise_level < 0) {
    fail(Errc::InvalidConfig, "dataset jitter/noise parameters out of range");
  }
}

Tensor LabeledDataset::batch(std::span<const int> indices) const {
  const std::size_t numel = image_numel();
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor out({static_cast<int>(indices.size()), channels, height, width});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = static_cast<std::size_t>(indices[r]);
    if (i >= size()) fail(Errc::InvalidInput, "dataset index out of range");
    const std::uint8_t* src = pixels.data() + i * numel;
    double* dst = out.data() + r * numel;
    for (int ch = 0; ch < channels; ++ch) {
      const double m = norm.mean[static_cast<std::size_t>(ch)];
      const double inv = 1.0 / norm.std[static_cast<std::size_t>(ch)];
      for (std::size_t k = 0; k < plane; ++k) {
        const std::size_t idx = static_cast<std::size_t>(ch) * plane + k;
        dst[idx] = (src[idx] / 255.0 - m) * inv;
      }
    }
  }
  return out;
}

std::vector<int> LabeledDataset::batch_labels(std::span<const int> indices) const {
  std::vector<int> y;
  y.reserve(indices.size());
  for (int i : indices) y.push_back(labels.at(static_cast<std::size_t>(i)));
  return y;
}

Normalization compute_normalization(const LabeledDataset& ds) {
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  Normalization n;
  for (int ch = 0; ch < ds.channels; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.pixels.data() + i * ds.image_numel() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k] / 255.0;
    }
    const double count = static_cast<double>(ds.size() * plane);
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.pixels.data() + i * ds.image_numel() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] / 255.0 - mean;
        sq += d * d;
      }
    }
    n.mean.push_back(mean);
    n.std.push_back(std::sqrt(sq / count));
  }
  return n;
}

std::pair<LabeledDataset, LabeledDataset> make_toy_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int n_train = spec.samples_per_class * 4 / 5;
  LabeledDataset train, test;
  for (LabeledDataset* ds : {&train, &test}) {
    ds->num_classes = spec.num_classes;
    ds->channels = spec.channels;
    ds->height = ds->width = spec.image_size;
  }
  train.split = Split::Train;
  test.split = Split::Test;

  std::unordered_set<std::uint64_t> seen;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int i = 0; i < spec.samples_per_class; ++i) {
      LabeledDataset& dst = i < n_train ? train : test;
      // Redraw on the (astronomically rare) exact duplicate so the splits
      // never share an image.
      for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(derive_seed(spec.seed, "toy-image",
                            (static_cast<std::uint64_t>(cls) * 1000003ULL + static_cast<std::uint64_t>(i)) * 16 + attempt));
        auto img = render(spec, cls, rng);
        if (!seen.insert(image_hash(img)).second) continue;
        dst.pixels.insert(dst.pixels.end(), img.begin(), img.end());
        dst.labels.push_back(cls);
        break;
      }
    }
  }

  // Interleave classes with a seeded permutation.
  for (LabeledDataset* ds : {&train, &test}) {
    std::vector<int> order(ds->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(spec.seed, ds == &train ? "toy-order-train" : "toy-order-test"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint8_t> px(ds->pixels.size());
    std::vector<int> lb(ds->size());
    const std::size_t numel = ds->image_numel();
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto src = static_cast<std::size_t>(order[r]);
      std::memcpy(px.data() + r * numel, ds->pixels.data() + src * numel, numel);
      lb[r] = ds->labels[src];
    }
    ds->pixels = std::move(px);
    ds->labels = std::move(lb);
  }

  train.norm = compute_normalization(train);
  test.norm = train.norm;
  return {std::move(train), std::move(test)};
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  if (sizeof(T) > b.size() - pos) fail(Errc::MalformedFile, "dataset file is truncated");
  T v;
  std::memcpy(&v, b.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out.write(kDataMagic, sizeof(kDataMagic));
  put(out, kDataVersion);
  put(out, static_cast<std::uint32_t>(ds.num_classes));
  put(out, static_cast<std::uint32_t>(ds.size()));
  put(out, static_cast<std::uint32_t>(ds.channels));
  put(out, static_cast<std::uint32_t>(ds.height));
  put(out, static_cast<std::uint32_t>(ds.width));
  put(out, static_cast<std::uint8_t>(ds.split));
  for (double m : ds.norm.mean) put(out, m);
  for (double s : ds.norm.std) put(out, s);
  out.write(reinterpret_cast<const char*>(ds.pixels.data()), static_cast<std::streamsize>(ds.pixels.size()));
  for (int y : ds.labels) put(out, static_cast<std::uint32_t>(y));
  if (!out) fail(Errc::Io, "short write to " + path.string());
}

LabeledDataset load_external(const std::filesystem::path& path, const Normalization* normalization) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingArtifact, "dataset not found: " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (b.size() < sizeof(kDataMagic) || std::memcmp(b.data(), kDataMagic, sizeof(kDataMagic)) != 0) {
    fail(Errc::MalformedFile, path.string() + " is not a dataset file (bad magic)");
  }
  pos = sizeof(kDataMagic);
  if (take<std::uint32_t>(b, pos) != kDataVersion) fail(Errc::MalformedFile, "unsupported dataset version");
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(take<std::uint32_t>(b, pos));
  const auto count = take<std::uint32_t>(b, pos);
  ds.channels = static_cast<int>(take<std::uint32_t>(b, pos));
  ds.height = static_cast<int>(take<std::uint32_t>(b, pos));
  ds.width = static_cast<int>(take<std::uint32_t>(b, pos));
  const auto split = take<std::uint8_t>(b, pos);
  if (split > 1) fail(Errc::MalformedFile, "bad split tag in dataset header");
  ds.split = static_cast<Split>(split);
  if (ds.num_classes < 2 || ds.channels < 1 || ds.channels > 16 || ds.height < 1 || ds.width < 1 ||
      ds.height > 4096 || ds.width > 4096) {
    fail(Errc::MalformedFile, "implausible dataset header");
  }
  for (int ch = 0; ch < ds.channels; ++ch) ds.norm.mean.push_back(take<double>(b, pos));
  for (int ch = 0; ch < ds.channels; ++ch) ds.norm.std.push_back(take<double>(b, pos));
  const std::size_t px = static_cast<std::size_t>(count) * ds.image_numel();
  const std::size_t expected = pos + px + static_cast<std::size_t>(count) * sizeof(std::uint32_t);
  if (b.size() != expected) {
    fail(Errc::MalformedFile, "dataset file " + path.string() + " has " + std::to_string(b.size()) +
                                  " bytes, header implies " + std::to_string(expected));
  }
  ds.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + px));
  pos += px;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto y = take<std::uint32_t>(b, pos);
    if (y >= static_cast<std::uint32_t>(ds.num_classes)) {
      fail(Errc::LabelOutOfRange, "label " + std::to_string(y) + " out of range in " + path.string());
    }
    ds.labels.push_back(static_cast<int>(y));
  }
  if (normalization) {
    if (normalization->mean.size() != static_cast<std::size_t>(ds.channels) ||
        normalization->std.size() != static_cast<std::size_t>(ds.channels)) {
      fail(Errc::InvalidInput, "normalization constants do not match dataset channels");
    }
    ds.norm = *normalization;
  }
  for (double s : ds.norm.std) {
    if (!(s > 0.0)) fail(Errc::MalformedFile, "normalization std must be positive");
  }
  return ds;
}

}  // namespace dfq
