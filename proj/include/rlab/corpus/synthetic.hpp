#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/corpus/corpus.hpp"

namespace rlab::corpus {

enum class WordOrder { SVO, SOV, VSO };

std::string_view to_string(WordOrder order);
WordOrder parse_word_order(std::string_view text);

struct PseudoLanguage {
  std::string tag;
  WordOrder order = WordOrder::SVO;
  std::vector<std::string> syllables;  // words are drawn from this inventory
  int word_syllables = 3;
  std::string marker;                  // script marker; "<tag>" when empty
  std::map<std::string, std::string> lexicon;  // concept -> surface, filled by gen_synthetic

  std::string marker_token() const { return marker.empty() ? "<" + tag + ">" : marker; }
};

// n pseudo-languages cycling through SVO, SOV, VSO with distinct inventories.
std::vector<PseudoLanguage> default_languages(int n);

struct SyntheticOptions {
  int n_relations = 4;
  int n_subjects = 16;
  std::vector<PseudoLanguage> languages = default_languages(2);
  double collision_fraction = 0.0;
  std::uint64_t seed = 0;
  int paraphrases = 2;                // object-final templates per relation and language
  double article_fraction = 0.25;     // objects rendered with an article in training text
  double second_alias_fraction = 0.25;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<PseudoLanguage> languages;  // with lexicons filled in
};

// Deterministic in the options. Triplets per language = n_relations * n_subjects.
// Objects per relation = max(2, n_subjects / 2); round(collision_fraction * #objects)
// objects share one surface across all languages.
SyntheticCorpus gen_synthetic(const SyntheticOptions& options);

}  // namespace rlab::corpus
