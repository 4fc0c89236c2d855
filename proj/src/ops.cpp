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

#include "dfq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dfq/errors.hpp"
#include "dfq/quantizer.hpp"
#include "dfq/simd.hpp"

namespace dfq::ops {
namespace {

struct Ncs {
  int n, c, s;
};

Ncs ncs_of(const Shape& shape, const char* op) {
  if (shape.size() == 2) return {shape[0], shape[1], 1};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2] * shape[3]};
  fail(Errc::ShapeMismatch, std::string(op) + ": expected a rank-2 or rank-4 input, got " + shape_str(shape));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(Errc::ShapeMismatch, std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline bool wants_grad(const Var& v) { return v && v->requires_grad; }

void accumulate(Node& parent, const Tensor& g) {
  Tensor& dst = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// Output columns [lo, hi) whose input column ox * stride - pad + kj lies
// inside [0, w).
void valid_span(int w, int wo, int stride, int pad, int kj, int& lo, int& hi) {
  lo = 0;
  while (lo < wo && lo * stride - pad + kj < 0) ++lo;
  hi = wo;
  while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
}

void im2col(const double* img, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* col) {
  const int hwo = ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + static_cast<std::ptrdiff_t>((c * k + ki) * k + kj) * hwo;
        int lo, hi;
        valid_span(w, wo, stride, pad, kj, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::ptrdiff_t>(c) * h + iy) * w - pad + kj;
          std::fill(out, out + lo, 0.0);
          if (stride == 1) {
            std::copy(src + lo, src + hi, out + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) out[ox] = src[ox * stride];
          }
          std::fill(out + hi, out + wo, 0.0);
        }
      }
    }
  }
}

// Transposed patch matrix: row p = output position, column = (c, ki, kj).
void im2row(const double* img, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* rows) {
  const int kdim = channels * k * k;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* r = rows + static_cast<std::ptrdiff_t>(oy * wo + ox) * kdim;
      for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
          const int iy = oy * stride - pad + ki;
          const bool row_ok = iy >= 0 && iy < h;
          const double* src = img + (static_cast<std::ptrdiff_t>(c) * h + (row_ok ? iy : 0)) * w;
          for (int kj = 0; kj < k; ++kj) {
            const int ix = ox * stride - pad + kj;
            *r++ = (row_ok && ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
                double* img) {
  const int hwo = ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + static_cast<std::ptrdiff_t>((c * k + ki) * k + kj) * hwo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* dst = img + (static_cast<std::ptrdiff_t>(c) * h + iy) * w;
          const double* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  simd::active().axpy(1.0, b->value.data(), out.data(), out.size());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate(*p, self.grad);
    }
  });
}

Var scale(const Var& a, double k) {
  Tensor out = a->value;
  for (auto& v : out.values()) v *= k;
  return make_op(std::move(out), {a}, [k](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    simd::active().axpy(k, self.grad.data(), g.data(), g.size());
  });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) return constant(Tensor::scalar(0.0));
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

Var detach(const Var& a) { return constant(a->value); }

Var relu(const Var& x) {
  Tensor out(x->value.shape());
  simd::active().relu(x->value.data(), out.data(), out.size());
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = v > 0.0 ? v : slope * v;
  return make_op(std::move(out), {x}, [slope](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += xv[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
  });
}

Var tanh(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = std::tanh(v);
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = self.value[i];
      g[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    fail(Errc::ShapeMismatch, "conv2d: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const int n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int cout = wv.dim(0), k = wv.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  const int kdim = cin * k * k;
  const int hwo = ho * wo;
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != cout)) {
    fail(Errc::ShapeMismatch, "conv2d: bias shape " + shape_str(bias->value.shape()));
  }

  Tensor out({n, cout, ho, wo}, 0.0);
  std::vector<double> col(static_cast<std::size_t>(kdim) * hwo);
  const auto& kt = simd::active();
  for (int b = 0; b < n; ++b) {
    const double* img = xv.data() + static_cast<std::ptrdiff_t>(b) * cin * h * wd;
    im2col(img, cin, h, wd, k, stride, pad, ho, wo, col.data());
    double* dst = out.data() + static_cast<std::ptrdiff_t>(b) * cout * hwo;
    kt.gemm_nn(cout, hwo, kdim, wv.data(), kdim, col.data(), hwo, dst, hwo);
    if (bias) {
      for (int c = 0; c < cout; ++c) {
        const double bv = bias->value[static_cast<std::size_t>(c)];
        double* plane = dst + static_cast<std::ptrdiff_t>(c) * hwo;
        for (int i = 0; i < hwo; ++i) plane[i] += bv;
      }
    }
  }

  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [=](Node& self) {
    const Var& xs = self.parents[0];
    const Var& ws = self.parents[1];
    const Tensor& gy = self.grad;
    const auto& kt = simd::active();
    Tensor* gw = ws->requires_grad ? &ws->grad_buffer() : nullptr;
    Tensor* gx = xs->requires_grad ? &xs->grad_buffer() : nullptr;
    std::vector<double> rows(gw ? static_cast<std::size_t>(kdim) * hwo : 0);
    std::vector<double> dcol(gx ? static_cast<std::size_t>(kdim) * hwo : 0);
    std::vector<double> wt(gx ? static_cast<std::size_t>(kdim) * cout : 0);
    if (gx) {
      const double* wp = ws->value.data();
      for (int o = 0; o < cout; ++o) {
        for (int q = 0; q < kdim; ++q) wt[static_cast<std::size_t>(q) * cout + o] = wp[static_cast<std::ptrdiff_t>(o) * kdim + q];
      }
    }
    for (int b = 0; b < n; ++b) {
      const double* gyb = gy.data() + static_cast<std::ptrdiff_t>(b) * cout * hwo;
      if (gw) {
        const double* img = xs->value.data() + static_cast<std::ptrdiff_t>(b) * cin * h * wd;
        im2row(img, cin, h, wd, k, stride, pad, ho, wo, rows.data());
        kt.gemm_nn(cout, kdim, hwo, gyb, hwo, rows.data(), kdim, gw->data(), kdim);
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        kt.gemm_nn(kdim, hwo, cout, wt.data(), cout, gyb, hwo, dcol.data(), hwo);
        col2im_add(dcol.data(), cin, h, wd, k, stride, pad, ho, wo,
                   gx->data() + static_cast<std::ptrdiff_t>(b) * cin * h * wd);
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int b = 0; b < n; ++b) {
        for (int c = 0; c < cout; ++c) {
          const double* plane = gy.data() + (static_cast<std::ptrdiff_t>(b) * cout + c) * hwo;
          double s = 0.0;
          for (int i = 0; i < hwo; ++i) s += plane[i];
          gb[static_cast<std::size_t>(c)] += s;
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    fail(Errc::ShapeMismatch, "linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const int n = xv.dim(0), kdim = xv.dim(1), m = wv.dim(0);
  Tensor out({n, m}, 0.0);
  simd::gemm_nt(n, m, kdim, xv.data(), kdim, wv.data(), kdim, out.data(), m);
  if (bias) {
    if (bias->value.size() != static_cast<std::size_t>(m)) fail(Errc::ShapeMismatch, "linear: bias size");
    for (int r = 0; r < n; ++r) {
      simd::active().axpy(1.0, bias->value.data(), out.data() + static_cast<std::ptrdiff_t>(r) * m,
                          static_cast<std::size_t>(m));
    }
  }
  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [=](Node& self) {
    const Var& xs = self.parents[0];
    const Var& ws = self.parents[1];
    const Tensor& gy = self.grad;
    if (xs->requires_grad) {
      simd::active().gemm_nn(n, kdim, m, gy.data(), m, ws->value.data(), kdim, xs->grad_buffer().data(), kdim);
    }
    if (ws->requires_grad) {
      simd::gemm_tn(m, kdim, n, gy.data(), m, xs->value.data(), kdim, ws->grad_buffer().data(), kdim);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int r = 0; r < n; ++r) {
        simd::active().axpy(1.0, gy.data() + static_cast<std::ptrdiff_t>(r) * m, gb.data(),
                            static_cast<std::size_t>(m));
      }
    }
  });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchMoments* moments) {
  const auto [n, c, s] = ncs_of(x->value.shape(), "batch_norm_train");
  if (n < 2) fail(Errc::DegenerateBatch, "batch_norm_train: batch size " + std::to_string(n) + " < 2");
  if (gamma->value.size() != static_cast<std::size_t>(c) || beta->value.size() != static_cast<std::size_t>(c)) {
    fail(Errc::ShapeMismatch, "batch_norm_train: affine parameters do not match channel count");
  }
  const double count = static_cast<double>(n) * s;
  const Tensor& xv = x->value;
  Tensor mean({c}, 0.0), var({c}, 0.0), inv_std({c});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      double acc = 0.0;
      for (int i = 0; i < s; ++i) acc += p[i];
      mean[static_cast<std::size_t>(ch)] += acc;
    }
  }
  for (auto& v : mean.values()) v /= count;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      const double m = mean[static_cast<std::size_t>(ch)];
      double acc = 0.0;
      for (int i = 0; i < s; ++i) acc += (p[i] - m) * (p[i] - m);
      var[static_cast<std::size_t>(ch)] += acc;
    }
  }
  if (moments) {
    moments->mean = mean;
    moments->var_biased = Tensor({c});
    moments->var_unbiased = Tensor({c});
  }
  for (int ch = 0; ch < c; ++ch) {
    const auto i = static_cast<std::size_t>(ch);
    const double sq = var[i];
    var[i] = sq / count;
    if (moments) {
      moments->var_biased[i] = var[i];
      moments->var_unbiased[i] = sq / (count - 1.0);
    }
    inv_std[i] = 1.0 / std::sqrt(var[i] + eps);
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const auto i = static_cast<std::size_t>(ch);
      const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      const double g = gamma->value[i], bt = beta->value[i], m = mean[i], is = inv_std[i];
      for (int k = 0; k < s; ++k) {
        const double xh = (xv[static_cast<std::size_t>(off + k)] - m) * is;
        xhat[static_cast<std::size_t>(off + k)] = xh;
        out[static_cast<std::size_t>(off + k)] = g * xh + bt;
      }
    }
  }

  return make_op(std::move(out), {x, gamma, beta}, [n, c, s, count, xhat = std::move(xhat),
                                                    inv_std = std::move(inv_std)](Node& self) {
    const Tensor& gy = self.grad;
    std::vector<double> sum_gy(static_cast<std::size_t>(c), 0.0), sum_gy_xhat(static_cast<std::size_t>(c), 0.0);
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
        double a = 0.0, bsum = 0.0;
        for (int k = 0; k < s; ++k) {
          const auto idx = static_cast<std::size_t>(off + k);
          a += gy[idx];
          bsum += gy[idx] * xhat[idx];
        }
        sum_gy[static_cast<std::size_t>(ch)] += a;
        sum_gy_xhat[static_cast<std::size_t>(ch)] += bsum;
      }
    }
    const Var& xs = self.parents[0];
    const Var& gs = self.parents[1];
    const Var& bs = self.parents[2];
    if (gs->requires_grad) {
      Tensor& gg = gs->grad_buffer();
      for (int ch = 0; ch < c; ++ch) gg[static_cast<std::size_t>(ch)] += sum_gy_xhat[static_cast<std::size_t>(ch)];
    }
    if (bs->requires_grad) {
      Tensor& gb = bs->grad_buffer();
      for (int ch = 0; ch < c; ++ch) gb[static_cast<std::size_t>(ch)] += sum_gy[static_cast<std::size_t>(ch)];
    }
    if (xs->requires_grad) {
      Tensor& gx = xs->grad_buffer();
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const auto ci = static_cast<std::size_t>(ch);
          const double scale = gs->value[ci] * inv_std[ci];
          const double mg = sum_gy[ci] / count, mgx = sum_gy_xhat[ci] / count;
          const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
          for (int k = 0; k < s; ++k) {
            const auto idx = static_cast<std::size_t>(off + k);
            gx[idx] += scale * (gy[idx] - mg - xhat[idx] * mgx);
          }
        }
      }
    }
  });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mu, const Tensor& sigma,
                    double eps) {
  const auto [n, c, s] = ncs_of(x->value.shape(), "batch_norm_eval");
  if (mu.size() != static_cast<std::size_t>(c) || sigma.size() != static_cast<std::size_t>(c) ||
      gamma->value.size() != static_cast<std::size_t>(c) || beta->value.size() != static_cast<std::size_t>(c)) {
    fail(Errc::ShapeMismatch, "batch_norm_eval: parameters do not match channel count");
  }
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const auto i = static_cast<std::size_t>(ch);
    inv_std[i] = 1.0 / std::sqrt(sigma[i] * sigma[i] + eps);
  }
  const Tensor& xv = x->value;
  Tensor out(xv.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const auto i = static_cast<std::size_t>(ch);
      const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      const double g = gamma->value[i] * inv_std[i];
      const double sh = beta->value[i] - g * mu[i];
      for (int k = 0; k < s; ++k) {
        const auto idx = static_cast<std::size_t>(off + k);
        out[idx] = g * xv[idx] + sh;
      }
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [n, c, s, mu, inv_std = std::move(inv_std)](Node& self) {
    const Tensor& gy = self.grad;
    const Var& xs = self.parents[0];
    const Var& gs = self.parents[1];
    const Var& bs = self.parents[2];
    Tensor* gx = xs->requires_grad ? &xs->grad_buffer() : nullptr;
    Tensor* gg = gs->requires_grad ? &gs->grad_buffer() : nullptr;
    Tensor* gb = bs->requires_grad ? &bs->grad_buffer() : nullptr;
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const auto i = static_cast<std::size_t>(ch);
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
        const double g = gs->value[i] * inv_std[i];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int k = 0; k < s; ++k) {
          const auto idx = static_cast<std::size_t>(off + k);
          sum_gy += gy[idx];
          sum_gy_xhat += gy[idx] * (xs->value[idx] - mu[i]) * inv_std[i];
          if (gx) (*gx)[idx] += g * gy[idx];
        }
        if (gg) (*gg)[i] += sum_gy_xhat;
        if (gb) (*gb)[i] += sum_gy;
      }
    }
  });
}

Var channel_mean(const Var& x) {
  const auto [n, c, s] = ncs_of(x->value.shape(), "channel_mean");
  if (n * s < 1) fail(Errc::DegenerateBatch, "channel_mean: empty input");
  const double count = static_cast<double>(n) * s;
  Tensor out({c}, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x->value.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      double acc = 0.0;
      for (int k = 0; k < s; ++k) acc += p[k];
      out[static_cast<std::size_t>(ch)] += acc;
    }
  }
  for (auto& v : out.values()) v /= count;
  return make_op(std::move(out), {x}, [n, c, s, count](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const double g = self.grad[static_cast<std::size_t>(ch)] / count;
        double* p = gx.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
        for (int k = 0; k < s; ++k) p[k] += g;
      }
    }
  });
}

Var channel_std(const Var& x) {
  const auto [n, c, s] = ncs_of(x->value.shape(), "channel_std");
  const double count = static_cast<double>(n) * s;
  if (count < 2) fail(Errc::DegenerateBatch, "channel_std: needs at least two observations per channel");
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x->value.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      double acc = 0.0;
      for (int k = 0; k < s; ++k) acc += p[k];
      mean[static_cast<std::size_t>(ch)] += acc;
    }
  }
  for (auto& v : mean) v /= count;
  Tensor out({c}, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x->value.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      const double m = mean[static_cast<std::size_t>(ch)];
      double acc = 0.0;
      for (int k = 0; k < s; ++k) acc += (p[k] - m) * (p[k] - m);
      out[static_cast<std::size_t>(ch)] += acc;
    }
  }
  for (auto& v : out.values()) v = std::sqrt(v / (count - 1.0));
  return make_op(std::move(out), {x}, [n, c, s, count, mean = std::move(mean)](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const Tensor& xv = self.parents[0]->value;
    for (int ch = 0; ch < c; ++ch) {
      const auto ci = static_cast<std::size_t>(ch);
      const double sd = self.value[ci];
      // d std / dx at a zero-spread channel is taken as zero.
      if (sd == 0.0) continue;
      const double g = self.grad[ci] / ((count - 1.0) * sd);
      for (int b = 0; b < n; ++b) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
        for (int k = 0; k < s; ++k) {
          const auto idx = static_cast<std::size_t>(off + k);
          gx[idx] += g * (xv[idx] - mean[ci]);
        }
      }
    }
  });
}

Var select_batch(const Var& x, std::span<const int> indices) {
  const Shape& in_shape = x->value.shape();
  if (in_shape.empty()) fail(Errc::ShapeMismatch, "select_batch: scalar input");
  const std::size_t row = x->value.size() / static_cast<std::size_t>(in_shape[0]);
  Shape out_shape = in_shape;
  out_shape[0] = static_cast<int>(indices.size());
  Tensor out(out_shape);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= in_shape[0]) fail(Errc::InvalidInput, "select_batch: index out of range");
    std::copy_n(x->value.data() + static_cast<std::size_t>(idx[r]) * row, row, out.data() + r * row);
  }
  return make_op(std::move(out), {x}, [row, idx = std::move(idx)](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      simd::active().axpy(1.0, self.grad.data() + r * row, gx.data() + static_cast<std::size_t>(idx[r]) * row, row);
    }
  });
}

Var global_avg_pool(const Var& x) {
  if (x->value.rank() != 4) fail(Errc::ShapeMismatch, "global_avg_pool: expected NCHW input");
  const int n = x->value.dim(0), c = x->value.dim(1), s = x->value.dim(2) * x->value.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    const double* p = x->value.data() + static_cast<std::ptrdiff_t>(i) * s;
    double acc = 0.0;
    for (int k = 0; k < s; ++k) acc += p[k];
    out[static_cast<std::size_t>(i)] = acc / s;
  }
  return make_op(std::move(out), {x}, [n, c, s](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (int i = 0; i < n * c; ++i) {
      const double g = self.grad[static_cast<std::size_t>(i)] / s;
      double* p = gx.data() + static_cast<std::ptrdiff_t>(i) * s;
      for (int k = 0; k < s; ++k) p[k] += g;
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  if (x->value.rank() != 4) fail(Errc::ShapeMismatch, "upsample_nearest2x: expected NCHW input");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int p = 0; p < n * c; ++p) {
    const double* src = x->value.data() + static_cast<std::ptrdiff_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::ptrdiff_t>(p) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_op(std::move(out), {x}, [n, c, h, w](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (int p = 0; p < n * c; ++p) {
      double* dst = gx.data() + static_cast<std::ptrdiff_t>(p) * h * w;
      const double* src = self.grad.data() + static_cast<std::ptrdiff_t>(p) * 4 * h * w;
      for (int y = 0; y < 2 * h; ++y) {
        for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    simd::active().axpy(1.0, self.grad.data(), gx.data(), gx.size());
  });
}

Var embedding(const Var& table, std::span<const int> labels) {
  if (table->value.rank() != 2) fail(Errc::ShapeMismatch, "embedding: table must be rank 2");
  for (int y : labels) {
    if (y < 0 || y >= table->value.dim(0)) {
      fail(Errc::LabelOutOfRange, "embedding: label " + std::to_string(y) + " out of range");
    }
  }
  return select_batch(table, labels);
}

Var channel_affine(const Var& x, std::span<const double> scale_c, std::span<const double> shift_c) {
  const auto [n, c, s] = ncs_of(x->value.shape(), "channel_affine");
  if (scale_c.size() != static_cast<std::size_t>(c) || shift_c.size() != static_cast<std::size_t>(c)) {
    fail(Errc::ShapeMismatch, "channel_affine: constants do not match channel count");
  }
  std::vector<double> sc(scale_c.begin(), scale_c.end());
  Tensor out = x->value;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      double* p = out.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
      for (int k = 0; k < s; ++k) p[k] = p[k] * sc[static_cast<std::size_t>(ch)] + shift_c[static_cast<std::size_t>(ch)];
    }
  }
  return make_op(std::move(out), {x}, [n, c, s, sc = std::move(sc)](Node& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * s;
        simd::active().axpy(sc[static_cast<std::size_t>(ch)], self.grad.data() + off, gx.data() + off,
                            static_cast<std::size_t>(s));
      }
    }
  });
}

Var fake_quant_ste(const Var& x, double alpha, int bits) {
  Tensor out = fake_quantize(x->value, alpha, bits);
  return make_op(std::move(out), {x}, [alpha](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] >= -alpha && xv[i] <= alpha) gx[i] += self.grad[i];
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) fail(Errc::ShapeMismatch, "softmax_rows: expected [N,K] logits");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (int r = 0; r < n; ++r) {
    const double* z = logits.data() + static_cast<std::ptrdiff_t>(r) * k;
    double* q = p.data() + static_cast<std::ptrdiff_t>(r) * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += (q[j] = std::exp(z[j] - mx));
    for (int j = 0; j < k; ++j) q[j] /= sum;
  }
  return p;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) fail(Errc::ShapeMismatch, "argmax_rows: expected [N,K] logits");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const double* z = logits.data() + static_cast<std::ptrdiff_t>(r) * k;
    out[static_cast<std::size_t>(r)] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

namespace {

// log-softmax of one row.
void log_softmax_row(const double* z, int k, double* out) {
  const double mx = *std::max_element(z, z + k);
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
  const double lse = mx + std::log(sum);
  for (int j = 0; j < k; ++j) out[j] = z[j] - lse;
}

}  // namespace

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits->value;
  if (z.rank() != 2) fail(Errc::ShapeMismatch, "cross_entropy: expected [N,K] logits");
  const int n = z.dim(0), k = z.dim(1);
  if (n == 0) fail(Errc::InvalidInput, "cross_entropy: empty batch");
  if (labels.size() != static_cast<std::size_t>(n)) fail(Errc::ShapeMismatch, "cross_entropy: label count");
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> lsm(static_cast<std::size_t>(k));
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const int t = y[static_cast<std::size_t>(r)];
    if (t < 0 || t >= k) fail(Errc::LabelOutOfRange, "cross_entropy: label " + std::to_string(t) + " out of range");
    log_softmax_row(z.data() + static_cast<std::ptrdiff_t>(r) * k, k, lsm.data());
    loss -= lsm[static_cast<std::size_t>(t)];
  }
  loss /= n;
  return make_op(Tensor::scalar(loss), {logits}, [n, k, y = std::move(y)](Node& self) {
    const Tensor p = softmax_rows(self.parents[0]->value);
    Tensor& gz = self.parents[0]->grad_buffer();
    const double g = self.grad[0] / n;
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>(r) * k + j;
        gz[idx] += g * (p[idx] - (j == y[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
      }
    }
  });
}

Var kl_div(const Var& student_logits, const Tensor& teacher_logits) {
  require_same_shape(student_logits->value, teacher_logits, "kl_div");
  if (teacher_logits.rank() != 2) fail(Errc::ShapeMismatch, "kl_div: expected [N,K] logits");
  const int n = teacher_logits.dim(0), k = teacher_logits.dim(1);
  if (n == 0) fail(Errc::InvalidInput, "kl_div: empty batch");
  std::vector<double> ls(static_cast<std::size_t>(k)), lt(static_cast<std::size_t>(k));
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    log_softmax_row(student_logits->value.data() + static_cast<std::ptrdiff_t>(r) * k, k, ls.data());
    log_softmax_row(teacher_logits.data() + static_cast<std::ptrdiff_t>(r) * k, k, lt.data());
    for (int j = 0; j < k; ++j) {
      const double pt = std::exp(lt[static_cast<std::size_t>(j)]);
      if (pt > 0.0) loss += pt * (lt[static_cast<std::size_t>(j)] - ls[static_cast<std::size_t>(j)]);
    }
  }
  loss /= n;
  // Rounding can leave a tiny negative residue for identical distributions.
  loss = std::max(loss, 0.0);
  Tensor pt = softmax_rows(teacher_logits);
  return make_op(Tensor::scalar(loss), {student_logits}, [n, pt = std::move(pt)](Node& self) {
    const Tensor ps = softmax_rows(self.parents[0]->value);
    Tensor& gz = self.parents[0]->grad_buffer();
    const double g = self.grad[0] / n;
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * (ps[i] - pt[i]);
  });
}

Var sq_dist(const Var& a, const Tensor& target) {
  require_same_shape(a->value, target, "sq_dist");
  Tensor diff = a->value;
  simd::active().axpy(-1.0, target.data(), diff.data(), diff.size());
  const double d = simd::active().dot(diff.data(), diff.data(), diff.size());
  return make_op(Tensor::scalar(d), {a}, [diff = std::move(diff)](Node& self) {
    Tensor& ga = self.parents[0]->grad_buffer();
    simd::active().axpy(2.0 * self.grad[0], diff.data(), ga.data(), ga.size());
  });
}

}  // namespace dfq::ops
