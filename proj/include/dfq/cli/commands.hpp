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

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace dfq::cli {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train-teacher", "quantize", "dfq-run",
                                              "eval",     "ablate",        "sweep",    "report"};
  return names;
}

// Options shared by the subcommands. Paths default to the standard layout
// inside dir:
//   data/{train,test}.dfqdata   teacher.ckpt   quantize/   run/   ablation/
//   sweep/   report.md   manifest.json
struct CommandArgs {
  std::string dir = "experiment";
  std::string config_file;
  nlohmann::json overrides = nlohmann::json::object();  // dotted key -> value
  std::string teacher;  // checkpoint path override
  std::string data;     // dataset directory override
  std::string model;    // eval: checkpoint to score
  std::string split = "test";
  bool resume = false;
  int repeats = 1;
  std::vector<std::string> variants;  // ablate; empty = all four
  std::string sweep_param;            // beta_fd | alpha3
  std::vector<double> sweep_values;
  int grid_columns = 8;
};

// Exit status: 0 success, 2 missing prerequisite artifact, 1 any other error.
// Diagnostics go to err, results to out.
int run_command(const std::string& name, const CommandArgs& args, std::ostream& out, std::ostream& err);

}  // namespace dfq::cli
