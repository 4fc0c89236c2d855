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

// Command-line front end. Every configuration key is also a flag, e.g.
//   dfq dfq-run --dir exp --quant.weight-bits 8 --loss.alpha3 0
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "dfq/cli/commands.hpp"
#include "dfq/cli/config.hpp"
#include "dfq/cli/manifest.hpp"

int main(int argc, char** argv) {
  using dfq::cli::CommandArgs;
  CLI::App app{"Data-free quantization with class-wise feature distribution alignment"};
  app.set_version_flag("--version", dfq::cli::kToolVersion);
  app.require_subcommand(1);

  CommandArgs args;
  std::map<std::string, std::string> flag_values;
  app.add_option("--dir", args.dir, "Experiment directory")->capture_default_str();
  app.add_option("--config", args.config_file, "JSON configuration file");
  for (const auto& key : dfq::cli::config_keys()) {
    app.add_option("--" + key, flag_values[key], "configuration key " + key)->group("Configuration");
  }
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "Generate the procedural train/test datasets");
  auto* teach = app.add_subcommand("train-teacher", "Train the full-precision teacher");
  teach->add_option("--data", args.data, "Dataset directory (default <dir>/data)");
  auto* quant = app.add_subcommand("quantize", "Calibrate a quantized copy on warm-up synthetic data, no fine-tuning");
  auto* run = app.add_subcommand("dfq-run", "Run the full data-free quantization pipeline");
  run->add_flag("--resume", args.resume, "Continue from <dir>/run/state.ckpt when present");
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  eval->add_option("--model", args.model, "Checkpoint (default <dir>/run/student.ckpt)");
  eval->add_option("--split", args.split, "train or test")->capture_default_str();
  auto* ablate = app.add_subcommand("ablate", "Run the four loss ablation variants");
  ablate->add_option("--variants", args.variants, "Subset of full, no_DE, no_EMA, neither")->delimiter(',');
  ablate->add_option("--repeats", args.repeats, "Seeds per variant")->capture_default_str();
  auto* sweep = app.add_subcommand("sweep", "Sweep beta_fd or alpha3");
  sweep->add_option("--param", args.sweep_param, "beta_fd or alpha3")->required();
  sweep->add_option("--values", args.sweep_values, "Comma-separated values")->delimiter(',')->required();
  sweep->add_option("--repeats", args.repeats, "Seeds per value")->capture_default_str();
  auto* report = app.add_subcommand("report", "Summarize existing artifacts into <dir>/report.md");

  for (auto* sub : {teach, quant, run, eval, ablate, sweep}) {
    if (sub != teach) sub->add_option("--data", args.data, "Dataset directory (default <dir>/data)");
    sub->add_option("--teacher", args.teacher, "Teacher checkpoint (default <dir>/teacher.ckpt)");
  }
  for (auto* sub : {run, ablate, sweep}) {
    sub->add_option("--grid-columns", args.grid_columns, "Samples per class in grid.ppm")->capture_default_str();
  }
  (void)gen;
  (void)report;

  CLI11_PARSE(app, argc, argv);

  for (const auto& key : dfq::cli::config_keys()) {
    if (app.count("--" + key) > 0) args.overrides[key] = flag_values[key];
  }
  const std::string name = app.get_subcommands().front()->get_name();
  return dfq::cli::run_command(name, args, std::cout, std::cerr);
}
