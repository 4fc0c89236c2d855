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

#include "dfq/autograd.hpp"
#include "dfq/ops.hpp"

namespace dfq {

enum class BnMode { Train, Eval };

// Affine parameters plus the stored per-channel mean and standard deviation.
struct BNLayerParams {
  Var gamma;
  Var beta;
  Tensor running_mu;
  Tensor running_sigma;
  double eps = 1e-5;
  // Weight of a new batch when refreshing the running statistics.
  double momentum = 0.1;

  static BNLayerParams make(int channels);
  int channels() const { return static_cast<int>(running_mu.size()); }
  void validate() const;
  BNLayerParams clone() const;
};

// Train mode normalizes with batch moments (written to *moments when given);
// eval mode uses the running statistics. update_running folds the batch
// moments into the running statistics (train mode only).
Var bn_forward(const Var& x, BNLayerParams& p, BnMode mode, bool update_running = false,
               ops::BatchMoments* moments = nullptr);

void update_running_stats(BNLayerParams& p, const ops::BatchMoments& m);

}  // namespace dfq
