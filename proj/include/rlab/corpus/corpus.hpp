#pragma once

// Triplets, templates and aliases.
//
// Directory layout (all JSON-lines, one object per line):
//   templates/<lang>.jsonl  {"relation_id": "P19", "pattern": "[X] was born in [Y]"}
//   triplets.jsonl          {"subject_id": "Q1", "relation_id": "P19", "object_id": "Q2"}
//   aliases.jsonl           {"id": "Q2", "lang": "en", "aliases": ["Paris", ...], "article": "the"}
// The first alias is canonical; for subjects it is the surface form used in
// queries. "article" is optional and only read by toy training.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rlab::corpus {

struct Triplet {
  std::string subject_id;
  std::string relation_id;
  std::string object_id;

  std::string id() const { return subject_id + "|" + relation_id + "|" + object_id; }
  auto operator<=>(const Triplet&) const = default;
};

struct Template {
  std::string relation_id;
  std::string lang;
  std::string pattern;
  int index = 0;  // position within the language file
  bool object_final = false;

  std::string id() const { return lang + ":" + relation_id + ":" + std::to_string(index); }
  bool operator==(const Template&) const = default;
};

// True iff the pattern ends with [Y] (trailing whitespace ignored).
bool is_object_final(std::string_view pattern);

// Throws SchemaError unless the pattern has exactly one [X] and one [Y].
void check_pattern(std::string_view pattern);

using AliasKey = std::pair<std::string, std::string>;  // (lang, id)

struct LanguageCounts {
  std::string lang;
  std::size_t triplets = 0;
  std::size_t templates = 0;
};

struct Corpus {
  std::vector<std::string> languages;  // sorted
  std::vector<Template> templates;     // grouped by language, file order
  std::vector<Triplet> triplets;
  std::map<AliasKey, std::vector<std::string>> aliases;
  std::map<AliasKey, std::string> articles;
  // (triplet id, template id) pairs removed by filter_trivial.
  std::set<std::pair<std::string, std::string>> excluded;

  const std::vector<std::string>* aliases_of(std::string_view lang, std::string_view id) const;
  // Canonical surface; throws SchemaError when absent.
  const std::string& surface(std::string_view lang, std::string_view id) const;
  std::string article(std::string_view lang, std::string_view id) const;  // empty when none

  std::vector<const Template*> templates_for(std::string_view relation_id, std::string_view lang) const;
  // Triplets with subject and object aliases and at least one template in `lang`.
  std::vector<Triplet> triplets_in(std::string_view lang) const;
  bool is_excluded(const Triplet& t, const Template& tpl) const;
  LanguageCounts counts(std::string_view lang) const;

  bool operator==(const Corpus&) const = default;
};

// Pattern with [X] replaced by the subject and [Y] by the object.
std::string render(const Template& tpl, std::string_view subject, std::string_view object);
// Pattern with [X] replaced by the subject and [Y] dropped; this is the text a
// decoder-only model continues, or (with a sentinel) the encoder input.
std::string render_query(const Template& tpl, std::string_view subject);
// Text before [Y], with [X] substituted.
std::string render_prefix(const Template& tpl, std::string_view subject);

Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Case-fold, collapse whitespace, strip surrounding punctuation.
std::string normalize_for_match(std::string_view text);

// Marks (triplet, template) pairs whose rendered query contains an object
// alias after normalization.
Corpus filter_trivial(Corpus corpus);

// Every word used by the corpus in any language, in first-seen order.
std::vector<std::string> corpus_words(const Corpus& corpus);

}  // namespace rlab::corpus
