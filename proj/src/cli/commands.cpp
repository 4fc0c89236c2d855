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

#include "dfq/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "dfq/checkpoint.hpp"
#include "dfq/cli/config.hpp"
#include "dfq/cli/manifest.hpp"
#include "dfq/data.hpp"
#include "dfq/errors.hpp"
#include "dfq/hashing.hpp"
#include "dfq/image.hpp"
#include "dfq/pipeline.hpp"
#include "dfq/rng.hpp"
#include "dfq/teacher.hpp"

namespace dfq::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kTrainFile = "data/train.dfqdata";
constexpr const char* kTestFile = "data/test.dfqdata";
constexpr const char* kTeacherFile = "teacher.ckpt";

struct Context {
  const CommandArgs& args;
  ToolConfig cfg;
  fs::path dir;
  Manifest manifest;
  std::ostream& out;
  std::ostream& err;
};

ToolConfig load_config(const CommandArgs& a) {
  json merged = a.config_file.empty() ? json::object() : read_config_file(a.config_file);
  if (!merged.is_object()) fail(Errc::InvalidConfig, "configuration must be a JSON object");
  // Nested file entries are flattened so flag keys override them cleanly.
  json flat = json::object();
  for (auto& [k, v] : flatten_overrides(merged)) flat[k] = v;
  if (const char* env = std::getenv("DFQ_SEED"); env && *env) flat["seed"] = std::string(env);
  for (auto& [k, v] : flatten_overrides(a.overrides)) flat[k] = v;
  return resolve_config(flat);
}

fs::path require(const fs::path& p, const char* what) {
  if (!fs::exists(p)) fail(Errc::MissingArtifact, std::string(what) + " not found: " + p.string());
  return p;
}

fs::path data_dir(const Context& c) { return c.args.data.empty() ? c.dir / "data" : fs::path(c.args.data); }
fs::path teacher_path(const Context& c) {
  return c.args.teacher.empty() ? c.dir / kTeacherFile : fs::path(c.args.teacher);
}

LabeledDataset load_split(const Context& c, const std::string& split) {
  return load_external(require(data_dir(c) / (split + ".dfqdata"), "dataset"));
}

Classifier load_teacher(const Context& c) { return load_classifier(require(teacher_path(c), "teacher checkpoint")); }

std::string rel(const Context& c, const fs::path& p) { return fs::relative(p, c.dir).generic_string(); }

ManifestEntry entry(const Context& c, const std::string& command) {
  ManifestEntry e;
  e.command = command;
  e.timestamp = utc_timestamp();
  e.seed = c.cfg.seed;
  e.config = config_to_json(c.cfg);
  return e;
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open '" + p.string() + "' for writing");
  f << s;
  if (!f) fail(Errc::Io, "write to '" + p.string() + "' failed");
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

json report_json(const Report& r) {
  return {{"teacher_accuracy", r.teacher_accuracy},
          {"post_quant_accuracy", r.post_quant_accuracy},
          {"final_accuracy", r.final_accuracy},
          {"warmup_fisher", r.warmup_fisher},
          {"final_fisher", r.final_fisher},
          {"warmup_diversity", r.warmup_diversity},
          {"final_diversity", r.final_diversity},
          {"teacher_fingerprint", hex64(r.teacher_fingerprint)},
          {"epochs", r.metrics.size()}};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- commands

int gen_data(Context& c) {
  auto [train, test] = make_toy_dataset(c.cfg.data);
  fs::create_directories(c.dir / "data");
  save_dataset(c.dir / kTrainFile, train);
  save_dataset(c.dir / kTestFile, test);
  c.manifest.append(entry(c, "gen-data"), {kTrainFile, kTestFile});
  c.out << "wrote " << train.size() << " train and " << test.size() << " test samples to " << (c.dir / "data").string()
        << "\n";
  return 0;
}

int train_teacher_cmd(Context& c) {
  const LabeledDataset train = load_split(c, "train");
  const LabeledDataset test = load_split(c, "test");
  Classifier m = Classifier::build(make_arch(c.cfg.arch, train.channels, train.height, train.num_classes),
                                   c.cfg.teacher.seed);
  const TeacherLog log = train_teacher(m, train, c.cfg.teacher);
  const double acc = evaluate(m, test);
  save_classifier(c.dir / kTeacherFile, m, config_to_json(c.cfg).dump());
  std::string csv = "epoch,loss,train_accuracy\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    csv += std::to_string(e + 1) + "," + num(log.epoch_loss[e], 6) + "," + num(log.epoch_accuracy[e], 6) + "\n";
  }
  write_text(c.dir / "teacher_log.csv", csv);
  write_text(c.dir / "teacher.json", json{{"test_accuracy", acc}, {"arch", c.cfg.arch}}.dump(2) + "\n");
  ManifestEntry e = entry(c, "train-teacher");
  e.inputs = {{"train", file_hash(data_dir(c) / "train.dfqdata")}};
  c.manifest.append(e, {kTeacherFile, "teacher_log.csv", "teacher.json"});
  c.out << "teacher " << c.cfg.arch << " test accuracy " << num(acc) << "\n";
  return 0;
}

void save_student(const fs::path& path, FakeQuantModel& q, const std::string& manifest) {
  Container ct;
  ct.descriptor = classifier_descriptor(q.network().arch());
  ct.manifest = manifest;
  store_fake_quant(ct, q, "");
  fs::create_directories(path.parent_path());
  ct.save(path);
}

void save_generator(const fs::path& path, Generator& g, const std::string& manifest) {
  Container ct;
  ct.descriptor = generator_descriptor(g.spec());
  ct.manifest = manifest;
  store_generator(ct, g, "");
  fs::create_directories(path.parent_path());
  ct.save(path);
}

// Runs one pipeline configuration into out_dir and records its artifacts.
Report run_into(Context& c, const PipelineConfig& pcfg, const Classifier& teacher, const LabeledDataset& test,
                const fs::path& out_dir, const std::string& command, bool resume) {
  fs::create_directories(out_dir);
  const fs::path state = out_dir / "state.ckpt";
  std::optional<Experiment> ex;
  if (resume && fs::exists(state)) {
    ex.emplace(Experiment::load(state, pcfg, teacher, test.norm));
    c.err << "resuming from epoch " << ex->epoch() << "\n";
  } else {
    ex.emplace(pcfg, teacher, test.norm);
  }
  Report r = run_experiment(*ex, test, [&](Experiment& e) {
    const EpochMetrics& m = e.metrics().back();
    c.err << "epoch " << m.epoch << "/" << pcfg.schedule.total_epochs << " L_CE " << num(m.ce) << " L_BNS "
          << num(m.bns) << (std::isnan(m.student_acc) ? "" : " student_acc " + num(m.student_acc)) << "\n";
    e.save(state);
  });
  write_metrics_csv(out_dir / "metrics.csv", r.metrics);
  const std::string cfg_text = config_to_json(c.cfg).dump();
  save_student(out_dir / "student.ckpt", ex->student(), cfg_text);
  save_generator(out_dir / "generator.ckpt", ex->generator(), cfg_text);
  write_ppm(out_dir / "grid.ppm", synthetic_grid(ex->generator(), c.args.grid_columns, derive_seed(pcfg.schedule.seed, "grid")));
  write_text(out_dir / "report.json", report_json(r).dump(2) + "\n");

  ManifestEntry e = entry(c, command);
  e.inputs = {{"teacher", file_hash(teacher_path(c))}, {"test", file_hash(data_dir(c) / "test.dfqdata")}};
  std::vector<std::string> files;
  for (const char* f : {"metrics.csv", "student.ckpt", "generator.ckpt", "grid.ppm", "report.json", "state.ckpt"}) {
    files.push_back(rel(c, out_dir / f));
  }
  c.manifest.append(e, files);
  return r;
}

int quantize_cmd(Context& c) {
  const Classifier teacher = load_teacher(c);
  const LabeledDataset test = load_split(c, "test");
  PipelineConfig p = c.cfg.pipeline;
  // Calibration-only baseline: warm-up then no fine-tuning.
  p.schedule.total_epochs = p.schedule.warmup_epochs;
  if (p.schedule.total_epochs == 0) p.schedule.total_epochs = p.schedule.warmup_epochs = 1;
  const Report r = run_into(c, p, teacher, test, c.dir / "quantize", "quantize", false);
  c.out << "W" << p.quant.weight_bits << "A" << p.quant.act_bits << " teacher " << num(r.teacher_accuracy)
        << " quantized " << num(r.post_quant_accuracy) << "\n";
  return 0;
}

int dfq_run(Context& c) {
  const Classifier teacher = load_teacher(c);
  const LabeledDataset test = load_split(c, "test");
  const Report r = run_into(c, c.cfg.pipeline, teacher, test, c.dir / "run", "dfq-run", c.args.resume);
  c.out << report_json(r).dump(2) << "\n";
  return 0;
}

int eval_cmd(Context& c) {
  const fs::path model = c.args.model.empty() ? c.dir / "run" / "student.ckpt" : fs::path(c.args.model);
  const Container ct = Container::load(require(model, "model checkpoint"));
  if (c.args.split != "test" && c.args.split != "train") fail(Errc::InvalidConfig, "split must be train or test");
  const LabeledDataset data = load_split(c, c.args.split);
  double acc = 0.0;
  std::string kind;
  if (ct.has("quant.config")) {
    FakeQuantModel q = restore_fake_quant(ct, ct.descriptor, "");
    acc = evaluate(q, data);
    kind = "quantized W" + std::to_string(q.config().weight_bits) + "A" + std::to_string(q.config().act_bits);
  } else {
    Classifier m = restore_classifier(ct, ct.descriptor, "");
    acc = evaluate(m, data);
    kind = "full-precision";
  }
  c.out << json{{"model", model.string()}, {"kind", kind}, {"split", c.args.split}, {"accuracy", acc}}.dump() << "\n";
  return 0;
}

int ablate_cmd(Context& c) {
  const Classifier teacher = load_teacher(c);
  const LabeledDataset test = load_split(c, "test");
  const std::vector<std::string> variants = c.args.variants.empty() ? ablation_variants() : c.args.variants;
  for (const auto& v : variants) ablation_config(c.cfg.pipeline, v);  // reject unknown names up front
  if (c.args.repeats < 1) fail(Errc::InvalidConfig, "repeats must be >= 1");

  std::string runs = "variant,repeat,seed,post_quant_accuracy,final_accuracy,final_fisher,final_diversity\n";
  std::string table = "variant,median_final_accuracy,median_final_fisher,median_final_diversity\n";
  std::string md = "| variant | final accuracy (median) | Fisher ratio | diversity |\n|---|---|---|---|\n";
  for (const auto& v : variants) {
    std::vector<double> acc, fisher, div;
    for (int r = 0; r < c.args.repeats; ++r) {
      PipelineConfig p = ablation_config(c.cfg.pipeline, v);
      p.schedule.seed = run_seed(c.cfg, r);
      const Report rep = run_into(c, p, teacher, test, c.dir / "ablation" / (v + "_r" + std::to_string(r)), "ablate", false);
      acc.push_back(rep.final_accuracy);
      fisher.push_back(rep.final_fisher);
      div.push_back(rep.final_diversity);
      runs += v + "," + std::to_string(r) + "," + std::to_string(p.schedule.seed) + "," + num(rep.post_quant_accuracy, 6) +
              "," + num(rep.final_accuracy, 6) + "," + num(rep.final_fisher, 6) + "," + num(rep.final_diversity, 6) + "\n";
    }
    table += v + "," + num(median(acc), 6) + "," + num(median(fisher), 6) + "," + num(median(div), 6) + "\n";
    md += "| " + v + " | " + num(100.0 * median(acc), 2) + "% | " + num(median(fisher), 3) + " | " +
          num(median(div), 3) + " |\n";
  }
  write_text(c.dir / "ablation" / "runs.csv", runs);
  write_text(c.dir / "ablation" / "ablation.csv", table);
  write_text(c.dir / "ablation" / "ablation.md", md);
  c.manifest.append(entry(c, "ablate"), {"ablation/runs.csv", "ablation/ablation.csv", "ablation/ablation.md"});
  c.out << md;
  return 0;
}

int sweep_cmd(Context& c) {
  const std::string& param = c.args.sweep_param;
  if (param != "beta_fd" && param != "alpha3") fail(Errc::InvalidConfig, "sweep parameter must be beta_fd or alpha3");
  if (c.args.sweep_values.empty()) fail(Errc::InvalidConfig, "sweep needs at least one value");
  if (c.args.repeats < 1) fail(Errc::InvalidConfig, "repeats must be >= 1");
  for (double v : c.args.sweep_values) {
    const bool ok = param == "beta_fd" ? (v >= 0.0 && v <= 1.0) : (v >= 0.0 && std::isfinite(v));
    if (!ok) fail(Errc::InvalidConfig, "sweep value " + num(v) + " outside the valid range of " + param);
  }
  const Classifier teacher = load_teacher(c);
  const LabeledDataset test = load_split(c, "test");

  std::string csv = param + ",median_final_accuracy,runs\n";
  PlotSeries series;
  for (double v : c.args.sweep_values) {
    std::vector<double> acc;
    std::string each;
    for (int r = 0; r < c.args.repeats; ++r) {
      PipelineConfig p = c.cfg.pipeline;
      (param == "beta_fd" ? p.beta_fd : p.weights.alpha3) = v;
      p.schedule.seed = run_seed(c.cfg, r);
      const fs::path out = c.dir / "sweep" / (param + "_" + num(v, 3) + "_r" + std::to_string(r));
      acc.push_back(run_into(c, p, teacher, test, out, "sweep", false).final_accuracy);
      each += (r ? ";" : "") + num(acc.back(), 6);
    }
    csv += num(v, 6) + "," + num(median(acc), 6) + "," + each + "\n";
    series.x.push_back(v);
    series.y.push_back(median(acc));
  }
  const std::string base = "sweep/sweep_" + param;
  write_text(c.dir / (base + ".csv"), csv);
  write_ppm(c.dir / (base + ".ppm"), line_plot({series}));
  c.manifest.append(entry(c, "sweep"), {base + ".csv", base + ".ppm"});
  c.out << csv;
  return 0;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) fail(Errc::MissingArtifact, "artifact not found: " + p.string());
  return json::parse(f);
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int report_cmd(Context& c) {
  const auto stale = c.manifest.stale_artifacts();
  if (!stale.empty()) {
    std::string msg = "artifacts do not match their manifest hashes:";
    for (const auto& s : stale) msg += " " + s;
    fail(Errc::MalformedFile, msg);
  }
  std::string md = "# Experiment report\n\n";
  bool any = false;
  if (fs::exists(c.dir / "teacher.json")) {
    const json t = read_json(c.dir / "teacher.json");
    md += "## Teacher\n\n" + t["arch"].get<std::string>() + ", test accuracy " +
          num(100.0 * t["test_accuracy"].get<double>(), 2) + "%\n\n";
    any = true;
  }
  for (const char* sub : {"quantize", "run"}) {
    const fs::path p = c.dir / sub / "report.json";
    if (!fs::exists(p)) continue;
    const json r = read_json(p);
    md += std::string("## ") + (std::string(sub) == "run" ? "Full pipeline" : "Calibration only") + "\n\n";
    md += "| teacher | quantized, no fine-tune | final |\n|---|---|---|\n";
    md += "| " + num(100.0 * r["teacher_accuracy"].get<double>(), 2) + "% | " +
          num(100.0 * r["post_quant_accuracy"].get<double>(), 2) + "% | " +
          num(100.0 * r["final_accuracy"].get<double>(), 2) + "% |\n\n";
    md += "Fisher ratio " + num(r["warmup_fisher"].get<double>(), 3) + " after warm-up, " +
          num(r["final_fisher"].get<double>(), 3) + " at the end; diversity " +
          num(r["warmup_diversity"].get<double>(), 3) + " -> " + num(r["final_diversity"].get<double>(), 3) +
          ". Synthetic samples: `" + std::string(sub) + "/grid.ppm`.\n\n";
    any = true;
  }
  if (fs::exists(c.dir / "ablation" / "ablation.md")) {
    md += "## Ablation\n\n" + read_text(c.dir / "ablation" / "ablation.md") + "\n";
    any = true;
  }
  for (const char* param : {"beta_fd", "alpha3"}) {
    const fs::path p = c.dir / "sweep" / (std::string("sweep_") + param + ".csv");
    if (!fs::exists(p)) continue;
    md += std::string("## Sweep of ") + param + "\n\n```\n" + read_text(p) + "```\n\nPlot: `sweep/sweep_" + param +
          ".ppm`\n\n";
    any = true;
  }
  if (!any) fail(Errc::MissingArtifact, "no results found in " + c.dir.string());
  write_text(c.dir / "report.md", md);
  if (c.manifest.recorded_hash("report.md") != file_hash(c.dir / "report.md")) {
    c.manifest.append(entry(c, "report"), {"report.md"});
  }
  c.out << md;
  return 0;
}

}  // namespace

int run_command(const std::string& name, const CommandArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      fail(Errc::InvalidConfig, "unknown command '" + name + "'");
    }
    Context c{args, load_config(args), fs::path(args.dir), Manifest(args.dir), out, err};
    if (name == "gen-data") return gen_data(c);
    if (name == "train-teacher") return train_teacher_cmd(c);
    if (name == "quantize") return quantize_cmd(c);
    if (name == "dfq-run") return dfq_run(c);
    if (name == "eval") return eval_cmd(c);
    if (name == "ablate") return ablate_cmd(c);
    if (name == "sweep") return sweep_cmd(c);
    return report_cmd(c);
  } catch (const Error& e) {
    err << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return e.code() == Errc::MissingArtifact ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dfq::cli
