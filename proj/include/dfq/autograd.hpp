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

// Minimal reverse-mode autodiff over Tensor values. A Var is a node in a
// dynamically built graph; ops record their parents and a backward closure
// when gradient recording is enabled and at least one input needs a gradient.

#include <functional>
#include <memory>
#include <vector>

#include "dfq/tensor.hpp"

namespace dfq {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Gradient storage, zero-filled on first touch.
  Tensor& grad_buffer();
  bool has_grad() const noexcept { return !grad.empty(); }
  void zero_grad() { grad = Tensor(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

// Deep copy of a leaf's value into a fresh leaf with the same requires_grad.
Var clone_leaf(const Var& v);

// Builds an op node. The closure is dropped when no parent needs a gradient
// or recording is disabled.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Accumulates d(root)/d(leaf) into every reachable leaf. root must hold a
// single element.
void backward(const Var& root);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace dfq
