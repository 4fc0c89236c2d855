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
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfq/data.hpp"
#include "dfq/pipeline.hpp"
#include "dfq/teacher.hpp"

namespace dfq::cli {

// Everything a command needs, resolved from defaults, a JSON config file,
// the DFQ_SEED environment variable and command-line flags (in that order
// of increasing precedence).
struct ToolConfig {
  std::uint64_t seed = 1;
  bool paper_scale = false;
  DatasetSpec data;
  std::string arch = "tiny-resnet-8";  // residual, the closest of the three to the usual ResNet targets
  TeacherSchedule teacher;
  PipelineConfig pipeline;
};

// Desk-scale defaults: the epoch counts of the reference schedule
// (400 total, 50 warm-up) divided by 20, 30 steps per epoch instead of 200,
// and learning rates tuned for that length.
ToolConfig default_config();

// Every recognised dotted key, e.g. "quant.weight-bits".
const std::vector<std::string>& config_keys();

// Applies flat dotted overrides (nested JSON objects are flattened first;
// '_' and '-' are interchangeable in keys). Unknown keys, malformed values
// and out-of-range values are collected and reported together as one
// InvalidConfig error naming every offending key.
ToolConfig resolve_config(const nlohmann::json& overrides);

// Reads a JSON file into an override object. Missing file: MissingArtifact.
nlohmann::json read_config_file(const std::string& path);

// Flattens nested objects into dotted keys with canonical spelling.
std::map<std::string, nlohmann::json> flatten_overrides(const nlohmann::json& j);

// Full snapshot with every key, suitable for manifests.
nlohmann::json config_to_json(const ToolConfig& cfg);

// Stream seeds derived from the root seed.
std::uint64_t data_seed(const ToolConfig& c);
std::uint64_t teacher_seed(const ToolConfig& c);
std::uint64_t run_seed(const ToolConfig& c, int repeat = 0);

}  // namespace dfq::cli
