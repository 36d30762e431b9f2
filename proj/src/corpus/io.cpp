#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "rlab/common/errors.hpp"
#include "rlab/corpus/corpus.hpp"

namespace rlab::corpus {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename Fn>
void read_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("{}: cannot open", path.string()));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const std::exception& e) {
      throw LoadError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
}

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

Corpus load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError(fmt::format("{}: not a corpus directory", dir.string()));
  Corpus c;
  std::vector<fs::path> template_files;
  if (fs::is_directory(dir / "templates")) {
    for (const auto& e : fs::directory_iterator(dir / "templates")) {
      if (e.path().extension() == ".jsonl") template_files.push_back(e.path());
    }
  }
  std::sort(template_files.begin(), template_files.end());
  for (const auto& file : template_files) {
    const std::string lang = file.stem().string();
    c.languages.push_back(lang);
    int index = 0;
    read_jsonl(file, [&](const json& j) {
      Template t;
      t.relation_id = j.at("relation_id").get<std::string>();
      t.lang = j.value("lang", lang);
      if (t.lang != lang) throw SchemaError(fmt::format("language '{}' in file for '{}'", t.lang, lang));
      t.pattern = j.at("pattern").get<std::string>();
      check_pattern(t.pattern);
      t.index = index++;
      t.object_final = is_object_final(t.pattern);
      c.templates.push_back(std::move(t));
    });
  }

  const bool has_triplets = fs::exists(dir / "triplets.jsonl");
  if (has_triplets) {
    read_jsonl(dir / "triplets.jsonl", [&](const json& j) {
      c.triplets.push_back({j.at("subject_id").get<std::string>(), j.at("relation_id").get<std::string>(),
                            j.at("object_id").get<std::string>()});
    });
  }

  if (fs::exists(dir / "aliases.jsonl")) {
    read_jsonl(dir / "aliases.jsonl", [&](const json& j) {
      AliasKey key{j.at("lang").get<std::string>(), j.at("id").get<std::string>()};
      auto list = j.at("aliases").get<std::vector<std::string>>();
      if (list.empty()) throw SchemaError(fmt::format("empty alias set for {}", key.second));
      auto& slot = c.aliases[key];
      for (auto& a : list) {
        if (std::find(slot.begin(), slot.end(), a) == slot.end()) slot.push_back(std::move(a));
      }
      if (j.contains("article")) c.articles[key] = j.at("article").get<std::string>();
    });
  } else if (has_triplets || !c.templates.empty()) {
    throw LoadError(fmt::format("{}: missing alias file", (dir / "aliases.jsonl").string()));
  }
  return c;
}

void save_corpus(const Corpus& c, const fs::path& dir) {
  fs::create_directories(dir / "templates");
  for (const auto& lang : c.languages) {
    std::vector<json> rows;
    for (const auto& t : c.templates) {
      if (t.lang == lang) rows.push_back({{"relation_id", t.relation_id}, {"lang", t.lang}, {"pattern", t.pattern}});
    }
    write_lines(dir / "templates" / (lang + ".jsonl"), rows);
  }
  std::vector<json> rows;
  for (const auto& t : c.triplets) {
    rows.push_back({{"subject_id", t.subject_id}, {"relation_id", t.relation_id}, {"object_id", t.object_id}});
  }
  write_lines(dir / "triplets.jsonl", rows);
  rows.clear();
  for (const auto& [key, list] : c.aliases) {
    json row = {{"id", key.second}, {"lang", key.first}, {"aliases", list}};
    if (const auto it = c.articles.find(key); it != c.articles.end()) row["article"] = it->second;
    rows.push_back(std::move(row));
  }
  write_lines(dir / "aliases.jsonl", rows);
}

}  // namespace rlab::corpus
