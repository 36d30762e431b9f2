#include <fstream>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/harvest/example.hpp"

namespace rlab::harvest {

using nlohmann::json;

json to_json(const MemorizedExample& e) {
  json j = {{"id", e.id()},
            {"lang", e.lang},
            {"subject_id", e.triplet.subject_id},
            {"relation_id", e.triplet.relation_id},
            {"object_id", e.triplet.object_id},
            {"template_id", e.template_id},
            {"pattern", e.pattern},
            {"input_ids", e.input_ids},
            {"absorbed", e.absorbed},
            {"object_alias", e.object_alias},
            {"object_token", e.object_token},
            {"subject_span", {e.subject_first, e.subject_last}}};
  if (e.encoder_decoder()) {
    j["enc_ids"] = e.enc_ids;
    j["sentinel"] = e.sentinel;
  }
  return j;
}

MemorizedExample example_from_json(const json& j) {
  MemorizedExample e;
  e.lang = j.at("lang").get<std::string>();
  e.triplet = {j.at("subject_id").get<std::string>(), j.at("relation_id").get<std::string>(),
               j.at("object_id").get<std::string>()};
  e.template_id = j.at("template_id").get<std::string>();
  e.pattern = j.at("pattern").get<std::string>();
  e.input_ids = j.at("input_ids").get<std::vector<TokenId>>();
  e.absorbed = j.value("absorbed", std::vector<TokenId>{});
  e.object_alias = j.at("object_alias").get<std::string>();
  e.object_token = j.at("object_token").get<TokenId>();
  const auto span = j.at("subject_span").get<std::vector<int>>();
  if (span.size() != 2) throw SchemaError("subject_span must have two entries");
  e.subject_first = span[0];
  e.subject_last = span[1];
  e.enc_ids = j.value("enc_ids", std::vector<TokenId>{});
  e.sentinel = j.value("sentinel", -1);
  const auto& stream = e.subject_stream();
  if (e.subject_first < 0 || e.subject_last < e.subject_first ||
      e.subject_last >= static_cast<int>(stream.size())) {
    throw SchemaError(fmt::format("subject span [{}, {}] is outside the input", e.subject_first, e.subject_last));
  }
  return e;
}

void write_examples(const std::filesystem::path& path, const std::vector<MemorizedExample>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

std::vector<MemorizedExample> read_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("{}: cannot open", path.string()));
  std::vector<MemorizedExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw LoadError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

}  // namespace rlab::harvest
