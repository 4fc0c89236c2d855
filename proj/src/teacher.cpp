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

#include "dfq/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfq/errors.hpp"
#include "dfq/ops.hpp"
#include "dfq/rng.hpp"

namespace dfq {

TeacherLog train_teacher(Classifier& model, const LabeledDataset& train, const TeacherSchedule& schedule) {
  if (train.size() < 2) fail(Errc::InvalidInput, "teacher training needs at least two samples");
  if (schedule.epochs < 1 || schedule.batch_size < 2 || !(schedule.lr > 0.0)) {
    fail(Errc::InvalidConfig, "teacher schedule needs epochs >= 1, batch size >= 2 and a positive learning rate");
  }
  model.set_requires_grad(true);
  Optimizer opt(OptimizerKind::Adam, model.parameters(), schedule.lr, schedule.weight_decay);
  TeacherLog log;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const int n = static_cast<int>(train.size());
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    Rng rng(derive_seed(schedule.seed, "teacher-shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    // Cosine decay over the whole run.
    opt.set_learning_rate(schedule.lr * 0.5 * (1.0 + std::cos(M_PI * epoch / schedule.epochs)));
    double loss_sum = 0.0;
    int correct = 0, seen = 0, batches = 0;
    for (int start = 0; start + 2 <= n; start += schedule.batch_size) {
      const int end = std::min(n, start + schedule.batch_size);
      if (end - start < 2) break;
      std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
      const Tensor x = train.batch(idx);
      const std::vector<int> y = train.batch_labels(idx);
      opt.zero_grad();
      ForwardResult r = model.forward(constant(x), BnMode::Train, nullptr, true);
      Var loss = ops::cross_entropy(r.logits, y);
      if (!std::isfinite(loss->value[0])) {
        fail(Errc::TrainingDiverged, "teacher loss became non-finite at epoch " + std::to_string(epoch + 1));
      }
      backward(loss);
      opt.step();
      const auto pred = ops::argmax_rows(r.logits->value);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
      seen += static_cast<int>(pred.size());
      loss_sum += loss->value[0];
      ++batches;
    }
    log.epoch_loss.push_back(loss_sum / batches);
    log.epoch_accuracy.push_back(static_cast<double>(correct) / seen);
  }
  return log;
}

}  // namespace dfq
