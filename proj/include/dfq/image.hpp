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
#include <string>
#include <vector>

#include "dfq/tensor.hpp"

namespace dfq {

// 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Binary PPM (P6) bytes / file.
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);
void write_ppm(const std::string& path, const RgbImage& img);

// Tiles raw generator images [rows * cols, C, S, S] with values in [-1, 1]
// into a rows x cols grid separated by a 1-pixel border. Single-channel
// images are rendered in gray.
RgbImage image_grid(const Tensor& images, int rows, int cols);

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
};

// Polyline chart of each series on shared auto-scaled axes, markers at the
// data points.
RgbImage line_plot(const std::vector<PlotSeries>& series, int width = 320, int height = 240);

}  // namespace dfq
