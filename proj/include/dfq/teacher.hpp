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

#include <cstdint>
#include <vector>

#include "dfq/classifier.hpp"
#include "dfq/data.hpp"
#include "dfq/optim.hpp"

namespace dfq {

struct TeacherSchedule {
  int epochs = 8;
  int batch_size = 32;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

struct TeacherLog {
  std::vector<double> epoch_loss;      // mean cross-entropy per epoch
  std::vector<double> epoch_accuracy;  // running train-mode accuracy per epoch
};

// Full-precision supervised training with train-mode BN; populates the BN
// running statistics. Throws TrainingDiverged on a non-finite loss.
TeacherLog train_teacher(Classifier& model, const LabeledDataset& train, const TeacherSchedule& schedule);

}  // namespace dfq
