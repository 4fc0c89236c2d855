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

#include <algorithm>
#include <cmath>

#include "dfq/simd.hpp"

namespace dfq::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_scalar(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
                    int ldc) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline double grid_index(double x, double scale, double lo, double hi) {
  // std::round rounds half away from zero.
  return std::clamp(std::round(x / scale), lo, hi);
}

void fake_quant_scalar(const double* x, double* y, std::size_t n, double scale, double lo, double hi) {
  for (std::size_t i = 0; i < n; ++i) y[i] = grid_index(x[i], scale, lo, hi) * scale;
}

void quantize_scalar(const double* x, std::int32_t* q, std::size_t n, double scale, double lo, double hi) {
  for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<std::int32_t>(grid_index(x[i], scale, lo, hi));
}

double max_abs_scalar(const double* x, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void relu_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Backend::Scalar, "scalar",       dot_scalar,     axpy_scalar,
                                 gemm_nn_scalar,  fake_quant_scalar, quantize_scalar, max_abs_scalar,
                                 relu_scalar};
  return table;
}

}  // namespace dfq::simd
