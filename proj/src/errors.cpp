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

#include "dfq/errors.hpp"

namespace dfq {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidRange: return "invalid-range";
    case Errc::InvalidInput: return "invalid-input";
    case Errc::FrozenTracker: return "frozen-tracker";
    case Errc::UninitializedTracker: return "uninitialized-tracker";
    case Errc::DegenerateBatch: return "degenerate-batch";
    case Errc::ShapeMismatch: return "shape-mismatch";
    case Errc::UnknownArchitecture: return "unknown-architecture";
    case Errc::TrainingDiverged: return "training-diverged";
    case Errc::MalformedFile: return "malformed-file";
    case Errc::LabelOutOfRange: return "label-out-of-range";
    case Errc::InvalidConfig: return "invalid-config";
    case Errc::MissingArtifact: return "missing-artifact";
    case Errc::Io: return "io";
  }
  return "unknown";
}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace dfq
