#pragma once

// Run manifests: every CLI run emits one, capturing the command, config and
// input hashes, seeds and artifact version, so identical inputs + seed can
// be audited to reproduce outputs byte for byte (the timestamp field is the
// only non-deterministic entry).

#include <ctime>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "premod/io.hpp"

namespace premod {

constexpr const char* kArtifactVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::string config_path;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> input_hashes;
  std::vector<std::string> outputs;

  void add_input(const std::string& path) { input_hashes[path] = hash_file(path); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["command"] = command;
    j["args"] = args;
    if (!config_path.empty()) {
      j["config_path"] = config_path;
      j["config_hash"] = config_hash;
    }
    j["seed"] = seed;
    nlohmann::json ins = nlohmann::json::object();
    for (const auto& [path, h] : input_hashes) ins[path] = h;
    j["input_hashes"] = ins;
    j["outputs"] = outputs;
    j["timestamp_unix"] = static_cast<long>(std::time(nullptr));
    return j;
  }

  void write(const std::string& path) const {
    auto out = io::open_out(path);
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace premod
