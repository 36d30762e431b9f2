#include "rlab/corpus/corpus.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::corpus {
namespace {

constexpr std::string_view kX = "[X]";
constexpr std::string_view kY = "[Y]";

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

void replace_once(std::string& text, std::string_view what, std::string_view with) {
  const auto pos = text.find(what);
  if (pos != std::string::npos) text.replace(pos, what.size(), with);
}

}  // namespace

bool is_object_final(std::string_view pattern) {
  while (!pattern.empty() && std::isspace(static_cast<unsigned char>(pattern.back()))) pattern.remove_suffix(1);
  return pattern.ends_with(kY);
}

void check_pattern(std::string_view pattern) {
  const auto nx = count_of(pattern, kX);
  const auto ny = count_of(pattern, kY);
  if (nx != 1 || ny != 1) {
    throw SchemaError(fmt::format("template needs exactly one [X] and one [Y], found {} and {}", nx, ny));
  }
}

const std::vector<std::string>* Corpus::aliases_of(std::string_view lang, std::string_view id) const {
  const auto it = aliases.find(AliasKey{std::string(lang), std::string(id)});
  if (it == aliases.end() || it->second.empty()) return nullptr;
  return &it->second;
}

const std::string& Corpus::surface(std::string_view lang, std::string_view id) const {
  const auto* a = aliases_of(lang, id);
  if (a == nullptr) throw SchemaError(fmt::format("no alias for {} in language {}", id, lang));
  return a->front();
}

std::string Corpus::article(std::string_view lang, std::string_view id) const {
  const auto it = articles.find(AliasKey{std::string(lang), std::string(id)});
  return it == articles.end() ? std::string() : it->second;
}

std::vector<const Template*> Corpus::templates_for(std::string_view relation_id, std::string_view lang) const {
  std::vector<const Template*> out;
  for (const auto& t : templates) {
    if (t.lang == lang && t.relation_id == relation_id) out.push_back(&t);
  }
  return out;
}

std::vector<Triplet> Corpus::triplets_in(std::string_view lang) const {
  std::set<std::string> relations;
  for (const auto& t : templates) {
    if (t.lang == lang) relations.insert(t.relation_id);
  }
  std::vector<Triplet> out;
  for (const auto& t : triplets) {
    if (relations.contains(t.relation_id) && aliases_of(lang, t.subject_id) && aliases_of(lang, t.object_id)) {
      out.push_back(t);
    }
  }
  return out;
}

bool Corpus::is_excluded(const Triplet& t, const Template& tpl) const {
  return excluded.contains({t.id(), tpl.id()});
}

LanguageCounts Corpus::counts(std::string_view lang) const {
  LanguageCounts c{std::string(lang), triplets_in(lang).size(), 0};
  c.templates = static_cast<std::size_t>(
      std::count_if(templates.begin(), templates.end(), [&](const Template& t) { return t.lang == lang; }));
  return c;
}

std::string render(const Template& tpl, std::string_view subject, std::string_view object) {
  std::string text = tpl.pattern;
  replace_once(text, kX, subject);
  replace_once(text, kY, object);
  return runtime::normalize_text(text);
}

std::string render_query(const Template& tpl, std::string_view subject) {
  return render(tpl, subject, "");
}

std::string render_prefix(const Template& tpl, std::string_view subject) {
  std::string text = tpl.pattern.substr(0, tpl.pattern.find(kY));
  replace_once(text, kX, subject);
  return runtime::normalize_text(text);
}

std::vector<std::string> corpus_words(const Corpus& corpus) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add_text = [&](std::string_view text) {
    for (auto& w : runtime::split_words(text)) {
      if (w == kX || w == kY) continue;
      if (seen.insert(w).second) out.push_back(std::move(w));
    }
  };
  for (const auto& t : corpus.templates) {
    std::string p = t.pattern;
    replace_once(p, kX, " ");
    replace_once(p, kY, " ");
    add_text(p);
  }
  for (const auto& [key, list] : corpus.aliases) {
    for (const auto& a : list) add_text(a);
  }
  for (const auto& [key, art] : corpus.articles) add_text(art);
  return out;
}

}  // namespace rlab::corpus
