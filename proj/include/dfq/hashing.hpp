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
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "dfq/tensor.hpp"

namespace dfq {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

// 64-bit FNV-1a; used for artifact manifests and parameter fingerprints.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset);
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h = kFnvOffset);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);

}  // namespace dfq
