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

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dfq::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct ArtifactRecord {
  std::string path;  // relative to the experiment directory
  std::string hash;  // FNV-1a 64 of the file contents, hex
};

// One command invocation: what ran, with which configuration, and every
// file it produced.
struct ManifestEntry {
  std::string command;
  std::string timestamp;  // UTC, ISO 8601
  std::uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json inputs = nlohmann::json::object();  // name -> hash of consumed artifacts
  std::vector<ArtifactRecord> artifacts;
};

// Append-only list of entries stored as JSON in <dir>/manifest.json.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path file() const { return dir_ / "manifest.json"; }

  // Reads the current entries (none when the file does not exist).
  std::vector<nlohmann::json> entries() const;
  // Hashes each artifact (paths relative to dir) and appends the entry.
  void append(ManifestEntry entry, const std::vector<std::string>& artifact_paths);

  // Latest recorded hash of an artifact, or empty when never recorded.
  std::string recorded_hash(const std::string& path) const;
  // Artifacts whose latest recorded hash no longer matches the file (or
  // whose file is missing).
  std::vector<std::string> stale_artifacts() const;

 private:
  std::filesystem::path dir_;
};

std::string utc_timestamp();

}  // namespace dfq::cli
