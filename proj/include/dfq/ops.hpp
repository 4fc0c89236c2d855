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

// Differentiable tensor ops. Feature maps are NCHW; 2-D inputs are treated as
// [N, C] with a spatial extent of one.

#include <span>
#include <vector>

#include "dfq/autograd.hpp"

namespace dfq::ops {

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double k);
// Sum of same-shaped terms. An empty list yields a scalar zero constant.
Var add_n(const std::vector<Var>& terms);
Var detach(const Var& a);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);

// x [N,Cin,H,W], w [Cout,Cin,k,k], optional bias [Cout]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
// x [N,K], w [M,K], optional bias [M] -> [N,M]
Var linear(const Var& x, const Var& w, const Var& bias);

// Per-channel batch statistics observed by a train-mode batch norm.
struct BatchMoments {
  Tensor mean;
  Tensor var_biased;
  Tensor var_unbiased;
};

// Normalizes with the batch's own mean and biased variance.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchMoments* moments);
// Normalizes with stored statistics: gamma * (x - mu) / sqrt(sigma^2 + eps) + beta.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mu, const Tensor& sigma,
                    double eps);

// Per-channel mean over batch and spatial positions -> [C].
Var channel_mean(const Var& x);
// Per-channel unbiased standard deviation -> [C]. Needs at least two
// observations per channel.
Var channel_std(const Var& x);

// Rows of the batch dimension in the given order.
Var select_batch(const Var& x, std::span<const int> indices);
Var global_avg_pool(const Var& x);
Var upsample_nearest2x(const Var& x);
Var reshape(const Var& x, Shape shape);
// table [K,D], one row per label -> [N,D]
Var embedding(const Var& table, std::span<const int> labels);
// Constant per-channel affine map: x * scale[c] + shift[c].
Var channel_affine(const Var& x, std::span<const double> scale, std::span<const double> shift);

// Symmetric fake quantization with a straight-through gradient inside
// [-alpha, alpha] and zero gradient outside.
Var fake_quant_ste(const Var& x, double alpha, int bits);

// Mean cross-entropy of softmax(logits) against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);
// Mean over rows of KL(softmax(teacher) || softmax(student)).
Var kl_div(const Var& student_logits, const Tensor& teacher_logits);
// ||a - target||^2
Var sq_dist(const Var& a, const Tensor& target);

// Non-differentiable helpers.
std::vector<int> argmax_rows(const Tensor& logits);
Tensor softmax_rows(const Tensor& logits);

}  // namespace dfq::ops
