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

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfq/simd.hpp"

namespace dfq::simd {

#ifndef DFQ_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return has;
#else
  return false;
#endif
}

namespace {

const KernelTable* resolve_default() {
  if (const char* env = std::getenv("DFQ_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return &scalar_kernels();
  }
  if (cpu_has_avx2() && avx2_kernels() != nullptr) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{resolve_default()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_backend(Backend b) {
  if (b == Backend::Scalar) {
    slot().store(&scalar_kernels(), std::memory_order_release);
    return;
  }
  if (!cpu_has_avx2() || avx2_kernels() == nullptr) {
    throw std::runtime_error("AVX2 kernels are not available on this build or CPU");
  }
  slot().store(avx2_kernels(), std::memory_order_release);
}

Backend current_backend() { return active().backend; }

std::string_view backend_name(Backend b) { return b == Backend::Scalar ? "scalar" : "avx2"; }

namespace {

// Row-major transpose of src[rows, cols] (leading dim ld) into dst[cols, rows].
void pack_transpose(const double* src, int rows, int cols, int ld, std::vector<double>& dst) {
  dst.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const double* s = src + static_cast<std::ptrdiff_t>(r) * ld;
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = s[c];
  }
}

}  // namespace

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  thread_local std::vector<double> bt;
  pack_transpose(b, n, k, ldb, bt);
  active().gemm_nn(m, n, k, a, lda, bt.data(), n, c, ldc);
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  thread_local std::vector<double> at;
  pack_transpose(a, k, m, lda, at);
  active().gemm_nn(m, n, k, at.data(), k, b, ldb, c, ldc);
}

}  // namespace dfq::simd
