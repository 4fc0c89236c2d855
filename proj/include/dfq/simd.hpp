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

// Data-parallel inner loops used by the tensor ops. Every kernel has a scalar
// reference implementation and, on x86-64, an AVX2/FMA variant. The active
// table is chosen once at startup from CPUID; DFQ_SIMD=scalar forces the
// reference path.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace dfq::simd {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[M,N] += A[M,K] * B[K,N], row-major with leading dimensions.
  void (*gemm_nn)(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
                  int ldc);
  // y = clamp(round_half_away(x / scale), lo, hi) * scale
  void (*fake_quant)(const double* x, double* y, std::size_t n, double scale, double lo, double hi);
  // q = clamp(round_half_away(x / scale), lo, hi)
  void (*quantize)(const double* x, std::int32_t* q, std::size_t n, double scale, double lo, double hi);
  double (*max_abs)(const double* x, std::size_t n);
  // y = max(x, 0)
  void (*relu)(const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// Kernel table in use. Resolved lazily on first call.
const KernelTable& active();

// Overrides the dispatch decision (tests, benchmarking). Selecting a backend
// the CPU or build does not support throws std::runtime_error.
void set_backend(Backend b);
Backend current_backend();
std::string_view backend_name(Backend b);

// RAII override for the duration of a scope.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(current_backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

// Matrix products built on top of gemm_nn. Transposed operands are packed
// into scratch storage first so every backend shares one micro-kernel.
// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);

}  // namespace dfq::simd
