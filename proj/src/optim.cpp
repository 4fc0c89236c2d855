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

#include "dfq/optim.hpp"

#include <cmath>

#include "dfq/errors.hpp"

namespace dfq {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  fail(Errc::InvalidConfig, "unknown optimizer '" + name + "' (expected adam or rmsprop)");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "rmsprop"; }

Optimizer::Optimizer(OptimizerKind kind, std::vector<Var> params, double lr, double weight_decay)
    : kind_(kind), params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
  for (const Var& p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (const Var& p : params_) p->zero_grad();
}

void Optimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (!p.has_grad()) continue;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] + weight_decay_ * p.value[k];
      if (kind_ == OptimizerKind::Adam) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
        p.value[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      } else {
        v[k] = rms_decay_ * v[k] + (1.0 - rms_decay_) * g * g;
        p.value[k] -= lr_ * g / (std::sqrt(v[k]) + eps_);
      }
    }
  }
}

}  // namespace dfq
