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

#include "dfq/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dfq/errors.hpp"

namespace dfq {

RgbImage::RgbImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
  if (w < 1 || h < 1) fail(Errc::InvalidInput, "image dimensions must be positive");
}

void RgbImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = r;
  pixels[i + 1] = g;
  pixels[i + 2] = b;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  const auto bytes = encode_ppm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(Errc::Io, "write to '" + path + "' failed");
}

namespace {

std::uint8_t to_byte(double t) {
  const double p = std::clamp((t + 1.0) * 0.5, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(p * 255.0));
}

}  // namespace

RgbImage image_grid(const Tensor& images, int rows, int cols) {
  if (images.rank() != 4 || images.dim(0) != rows * cols) {
    fail(Errc::ShapeMismatch, "grid of " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                                  std::to_string(rows * cols) + " images, got " + shape_str(images.shape()));
  }
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  RgbImage img(cols * (w + 1) + 1, rows * (h + 1) + 1, 0);
  for (int r = 0; r < rows; ++r) {
    for (int q = 0; q < cols; ++q) {
      const std::size_t base = static_cast<std::size_t>(r * cols + q) * c * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          auto ch = [&](int k) { return to_byte(images[base + (static_cast<std::size_t>(std::min(k, c - 1)) * h + y) * w + x]); };
          img.set(1 + q * (w + 1) + x, 1 + r * (h + 1) + y, ch(0), ch(1), ch(2));
        }
      }
    }
  }
  return img;
}

namespace {

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, const std::uint8_t* rgb) {
  const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
  for (int i = 0; i <= steps; ++i) {
    const int x = x0 + static_cast<int>(std::lround(static_cast<double>(x1 - x0) * i / steps));
    const int y = y0 + static_cast<int>(std::lround(static_cast<double>(y1 - y0) * i / steps));
    img.set(x, y, rgb[0], rgb[1], rgb[2]);
  }
}

constexpr std::uint8_t kPalette[][3] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}};

}  // namespace

RgbImage line_plot(const std::vector<PlotSeries>& series, int width, int height) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) fail(Errc::ShapeMismatch, "plot series x/y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  RgbImage img(width, height);
  const int margin = 20;
  const std::uint8_t axis[3] = {0, 0, 0};
  draw_line(img, margin, height - margin, width - margin, height - margin, axis);
  draw_line(img, margin, margin, margin, height - margin, axis);
  if (!std::isfinite(xmin)) return img;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  auto px = [&](double x) { return margin + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (width - 2 * margin))); };
  auto py = [&](double y) {
    return height - margin - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (height - 2 * margin)));
  };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::uint8_t* rgb = kPalette[k % std::size(kPalette)];
    const auto& s = series[k];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (i > 0) draw_line(img, px(s.x[i - 1]), py(s.y[i - 1]), x, y, rgb);
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) img.set(x + dx, y + dy, rgb[0], rgb[1], rgb[2]);
      }
    }
  }
  return img;
}

}  // namespace dfq
