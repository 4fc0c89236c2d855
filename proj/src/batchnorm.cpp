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

#include "dfq/batchnorm.hpp"

#include <cmath>

#include "dfq/errors.hpp"

namespace dfq {

BNLayerParams BNLayerParams::make(int channels) {
  BNLayerParams p;
  p.gamma = parameter(Tensor({channels}, 1.0));
  p.beta = parameter(Tensor({channels}, 0.0));
  p.running_mu = Tensor({channels}, 0.0);
  p.running_sigma = Tensor({channels}, 1.0);
  return p;
}

void BNLayerParams::validate() const {
  const auto c = running_mu.size();
  if (gamma->value.size() != c || beta->value.size() != c || running_sigma.size() != c) {
    fail(Errc::ShapeMismatch, "batch-norm parameters disagree on channel count");
  }
  for (double s : running_sigma.values()) {
    if (!(s >= 0.0)) fail(Errc::InvalidInput, "batch-norm running sigma must be non-negative");
  }
  if (!(eps > 0.0)) fail(Errc::InvalidInput, "batch-norm eps must be positive");
}

BNLayerParams BNLayerParams::clone() const {
  BNLayerParams p = *this;
  p.gamma = clone_leaf(gamma);
  p.beta = clone_leaf(beta);
  return p;
}

void update_running_stats(BNLayerParams& p, const ops::BatchMoments& m) {
  for (std::size_t c = 0; c < p.running_mu.size(); ++c) {
    p.running_mu[c] = (1.0 - p.momentum) * p.running_mu[c] + p.momentum * m.mean[c];
    const double var = (1.0 - p.momentum) * p.running_sigma[c] * p.running_sigma[c] + p.momentum * m.var_unbiased[c];
    p.running_sigma[c] = std::sqrt(var);
  }
}

Var bn_forward(const Var& x, BNLayerParams& p, BnMode mode, bool update_running, ops::BatchMoments* moments) {
  if (mode == BnMode::Eval) return ops::batch_norm_eval(x, p.gamma, p.beta, p.running_mu, p.running_sigma, p.eps);
  ops::BatchMoments local;
  ops::BatchMoments* m = moments ? moments : (update_running ? &local : nullptr);
  Var y = ops::batch_norm_train(x, p.gamma, p.beta, p.eps, m);
  if (update_running) update_running_stats(p, *m);
  return y;
}

}  // namespace dfq
