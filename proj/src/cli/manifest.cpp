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

#include "dfq/cli/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>

#include "dfq/errors.hpp"
#include "dfq/hashing.hpp"

namespace dfq::cli {

using nlohmann::json;

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Manifest::Manifest(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::vector<json> Manifest::entries() const {
  std::ifstream f(file());
  if (!f) return {};
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(Errc::MalformedFile, "manifest '" + file().string() + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("entries") || !j["entries"].is_array()) {
    fail(Errc::MalformedFile, "manifest '" + file().string() + "' has no entries array");
  }
  return j["entries"].get<std::vector<json>>();
}

void Manifest::append(ManifestEntry entry, const std::vector<std::string>& artifact_paths) {
  for (const auto& p : artifact_paths) entry.artifacts.push_back({p, file_hash(dir_ / p)});
  json e = {{"command", entry.command},       {"timestamp", entry.timestamp}, {"tool_version", kToolVersion},
            {"seed", entry.seed},             {"config", entry.config},       {"inputs", entry.inputs},
            {"artifacts", json::array()}};
  for (const auto& a : entry.artifacts) e["artifacts"].push_back({{"path", a.path}, {"hash", a.hash}});

  auto all = entries();
  all.push_back(std::move(e));
  std::filesystem::create_directories(dir_);
  const auto tmp = file().string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) fail(Errc::Io, "cannot write '" + tmp + "'");
    f << json{{"entries", all}}.dump(2) << "\n";
    if (!f) fail(Errc::Io, "cannot write '" + tmp + "'");
  }
  std::filesystem::rename(tmp, file());
}

std::string Manifest::recorded_hash(const std::string& path) const {
  std::string h;
  for (const auto& e : entries()) {
    for (const auto& a : e["artifacts"]) {
      if (a["path"] == path) h = a["hash"].get<std::string>();
    }
  }
  return h;
}

std::vector<std::string> Manifest::stale_artifacts() const {
  std::map<std::string, std::string> latest;
  for (const auto& e : entries()) {
    for (const auto& a : e["artifacts"]) latest[a["path"].get<std::string>()] = a["hash"].get<std::string>();
  }
  std::vector<std::string> stale;
  for (const auto& [path, hash] : latest) {
    if (!std::filesystem::exists(dir_ / path) || file_hash(dir_ / path) != hash) stale.push_back(path);
  }
  return stale;
}

}  // namespace dfq::cli
