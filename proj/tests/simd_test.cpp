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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dfq/quantizer.hpp"
#include "dfq/simd.hpp"

using namespace dfq;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

const simd::KernelTable* vector_table() {
  if (!simd::cpu_has_avx2()) return nullptr;
  return simd::avx2_kernels();
}

}  // namespace

TEST(Simd, DispatchHonoursOverride) {
  {
    simd::ScopedBackend scalar(simd::Backend::Scalar);
    EXPECT_EQ(simd::active().backend, simd::Backend::Scalar);
  }
  if (vector_table()) {
    simd::ScopedBackend avx(simd::Backend::Avx2);
    EXPECT_EQ(simd::active().backend, simd::Backend::Avx2);
  }
}

TEST(Simd, ElementwiseKernelsMatchReference) {
  const simd::KernelTable* vt = vector_table();
  if (!vt) GTEST_SKIP() << "no AVX2 on this machine";
  const simd::KernelTable& st = simd::scalar_kernels();
  std::mt19937_64 rng(3);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 33u, 257u}) {
    auto x = random_vec(n, rng, 3.0);
    auto y = random_vec(n, rng);

    std::vector<double> a(n), b(n);
    st.relu(x.data(), a.data(), n);
    vt->relu(x.data(), b.data(), n);
    EXPECT_EQ(a, b) << n;

    EXPECT_EQ(st.max_abs(x.data(), n), vt->max_abs(x.data(), n)) << n;

    for (int bits : {2, 4, 8}) {
      const double s = quant_scale(2.0, bits);
      st.fake_quant(x.data(), a.data(), n, s, quant_min(bits), quant_max(bits));
      vt->fake_quant(x.data(), b.data(), n, s, quant_min(bits), quant_max(bits));
      EXPECT_EQ(a, b) << n << " bits " << bits;
      std::vector<std::int32_t> qa(n), qb(n);
      st.quantize(x.data(), qa.data(), n, s, quant_min(bits), quant_max(bits));
      vt->quantize(x.data(), qb.data(), n, s, quant_min(bits), quant_max(bits));
      EXPECT_EQ(qa, qb) << n << " bits " << bits;
    }

    // Reductions may reassociate; compare to a tolerance.
    const double d0 = st.dot(x.data(), y.data(), n);
    const double d1 = vt->dot(x.data(), y.data(), n);
    EXPECT_NEAR(d0, d1, 1e-12 * (1.0 + std::abs(d0))) << n;

    a = y;
    b = y;
    st.axpy(0.7, x.data(), a.data(), n);
    vt->axpy(0.7, x.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a[i], b[i], 1e-15 * (1.0 + std::abs(a[i])));
  }
}

TEST(Simd, QuantizeTiesAgree) {
  const simd::KernelTable* vt = vector_table();
  if (!vt) GTEST_SKIP() << "no AVX2 on this machine";
  const double s = quant_scale(1.0, 4);
  std::vector<double> x;
  for (int k = -9; k <= 9; ++k) x.push_back((k + 0.5) * s);
  std::vector<std::int32_t> qa(x.size()), qb(x.size());
  simd::scalar_kernels().quantize(x.data(), qa.data(), x.size(), s, quant_min(4), quant_max(4));
  vt->quantize(x.data(), qb.data(), x.size(), s, quant_min(4), quant_max(4));
  EXPECT_EQ(qa, qb);
}

TEST(Simd, GemmMatchesReference) {
  const simd::KernelTable* vt = vector_table();
  if (!vt) GTEST_SKIP() << "no AVX2 on this machine";
  std::mt19937_64 rng(11);
  const int shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 16}, {13, 17, 9}, {32, 64, 27}, {6, 100, 33}};
  for (const auto& sh : shapes) {
    const int m = sh[0], n = sh[1], k = sh[2];
    auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    auto c0 = random_vec(static_cast<std::size_t>(m) * n, rng);
    std::vector<double> ref = c0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
        ref[i * n + j] += acc;
      }
    for (const simd::KernelTable* t : {&simd::scalar_kernels(), vt}) {
      std::vector<double> c = c0;
      t->gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12) << t->name << " " << m << "x" << n << "x" << k;
    }
  }
}

TEST(Simd, TransposedProductsMatchReference) {
  std::mt19937_64 rng(12);
  const int m = 5, n = 7, k = 9;
  auto a = random_vec(m * k, rng);  // [M,K]
  auto bt = random_vec(n * k, rng);  // [N,K]
  std::vector<double> c(m * n, 0.0);
  simd::gemm_nt(m, n, k, a.data(), k, bt.data(), k, c.data(), n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * bt[j * k + p];
      EXPECT_NEAR(c[i * n + j], acc, 1e-12);
    }

  auto at = random_vec(k * m, rng);  // [K,M]
  auto b = random_vec(k * n, rng);   // [K,N]
  std::fill(c.begin(), c.end(), 0.0);
  simd::gemm_tn(m, n, k, at.data(), m, b.data(), n, c.data(), n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += at[p * m + i] * b[p * n + j];
      EXPECT_NEAR(c[i * n + j], acc, 1e-12);
    }
}
