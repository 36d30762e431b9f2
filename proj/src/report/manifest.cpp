#include "rlab/report/manifest.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::report {

using nlohmann::json;

json to_json(const ExperimentManifest& m) {
  json j = {{"kind", m.kind},     {"model_card", m.model_card},     {"corpus", m.corpus},
            {"seed", m.seed},     {"config", m.config},             {"outputs", m.outputs},
            {"status", m.status}, {"tool_version", m.tool_version}};
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

ExperimentManifest manifest_from_json(const json& j) {
  ExperimentManifest m;
  m.kind = j.at("kind").get<std::string>();
  m.model_card = j.value("model_card", "");
  m.corpus = j.value("corpus", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.config = j.value("config", json::object());
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.tool_version = j.value("tool_version", "");
  m.status = j.value("status", "complete");
  m.error = j.value("error", "");
  return m;
}

std::vector<ExperimentManifest> read_manifests(const std::filesystem::path& path) {
  std::vector<ExperimentManifest> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(manifest_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw LoadError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void append_manifest(const std::filesystem::path& path, const ExperimentManifest& manifest) {
  std::set<std::string> claimed;
  for (const auto& m : read_manifests(path)) claimed.insert(m.outputs.begin(), m.outputs.end());
  std::set<std::string> mine;
  for (const auto& o : manifest.outputs) {
    if (claimed.contains(o) || !mine.insert(o).second) {
      throw ConfigError(fmt::format("output '{}' is already referenced by a manifest", o));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError(fmt::format("cannot append to {}", path.string()));
  out << to_json(manifest).dump() << '\n';
}

}  // namespace rlab::report
