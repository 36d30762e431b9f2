#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rlab::report {

inline constexpr const char* kToolVersion = "0.3.0";

struct ExperimentManifest {
  std::string kind;  // corpus, train-toy, harvest, trace, knockout, extract, patch, report
  std::string model_card;
  std::string corpus;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
  std::string status = "complete";  // or "partial"
  std::string error;

  bool operator==(const ExperimentManifest&) const = default;
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);

std::vector<ExperimentManifest> read_manifests(const std::filesystem::path& path);

// Appends one line. Throws ConfigError if an output is already claimed by an
// earlier manifest in the same file.
void append_manifest(const std::filesystem::path& path, const ExperimentManifest& manifest);

}  // namespace rlab::report
