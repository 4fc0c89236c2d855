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

#include <string>
#include <vector>

#include "dfq/autograd.hpp"

namespace dfq {

enum class OptimizerKind { Adam, RmsProp };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string optimizer_name(OptimizerKind k);

// First-order adaptive optimizer over a fixed parameter list. Adam keeps
// first and second moments; RMSProp keeps only the squared-gradient average
// and applies no momentum.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Var> params, double lr, double weight_decay = 0.0);

  void zero_grad();
  // Applies one update from the accumulated gradients. Parameters without a
  // gradient are left untouched.
  void step();

  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  long steps() const noexcept { return t_; }
  const std::vector<Var>& params() const noexcept { return params_; }

  // State for resumable checkpoints: moments per parameter plus the step count.
  std::vector<Tensor>& first_moments() noexcept { return m_; }
  std::vector<Tensor>& second_moments() noexcept { return v_; }
  void set_steps(long t) noexcept { t_ = t; }

 private:
  OptimizerKind kind_;
  std::vector<Var> params_;
  double lr_;
  double weight_decay_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double rms_decay_ = 0.99;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace dfq
