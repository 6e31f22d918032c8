/* Copyright 2026 The stb-asv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "stbasv/errors.hpp"

namespace stbasv::jsonu {

using nlohmann::json;

inline json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("no such file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Deterministic output: nlohmann objects keep keys sorted, so the same value
// always serializes to the same bytes.
inline void save_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path.string());
}

// Strict parsing: any key outside `allowed` is fatal, so a typo in a config
// file never silently falls back to a default.
inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(context + ": unknown key '" + item.key() + "'");
  }
}

inline const json& require_key(const json& obj, const char* key,
                               const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw ConfigError(context + ": missing required key '" + key + "'");
  }
  return *it;
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

template <typename T>
T get_required(const json& obj, const char* key, const std::string& context) {
  if (!obj.contains(key)) {
    throw ConfigError(context + ": missing required key '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace stbasv::jsonu
