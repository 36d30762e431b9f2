#include "rlab/corpus/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/common/hash.hpp"

namespace rlab::corpus {
namespace {

constexpr std::size_t kMaxEnumeration = 2'000'000;

std::vector<std::string> make_syllables(std::string_view consonants, std::string_view vowels) {
  std::vector<std::string> out;
  for (char c : consonants) {
    for (char v : vowels) out.push_back(std::string{c, v});
  }
  return out;
}

// Hands out words of one language in a seeded order, skipping any surface
// already used by another concept.
class WordSource {
 public:
  WordSource(const PseudoLanguage& lang, std::uint64_t seed) : lang_(lang) {
    if (lang.syllables.empty() || lang.word_syllables < 1) {
      throw ConfigError(fmt::format("language '{}' has an empty inventory", lang.tag));
    }
    double capacity = std::pow(static_cast<double>(lang.syllables.size()), lang.word_syllables);
    if (capacity > static_cast<double>(kMaxEnumeration)) {
      throw ConfigError(fmt::format("language '{}' inventory is too large to enumerate", lang.tag));
    }
    const auto n = static_cast<std::size_t>(capacity);
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  std::string next(std::set<std::string>& used) {
    while (pos_ < order_.size()) {
      std::size_t code = order_[pos_++];
      std::string w;
      for (int s = 0; s < lang_.word_syllables; ++s) {
        w += lang_.syllables[code % lang_.syllables.size()];
        code /= lang_.syllables.size();
      }
      if (used.insert(w).second) return w;
    }
    throw GenerationError(fmt::format("lexicon of language '{}' exhausted", lang_.tag));
  }

 private:
  const PseudoLanguage& lang_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::string subject_id(int i) { return fmt::format("S{:03d}", i); }
std::string relation_id(int r) { return fmt::format("R{:02d}", r); }
std::string object_id(int r, int k) { return fmt::format("R{:02d}-O{:03d}", r, k); }

}  // namespace

std::string_view to_string(WordOrder order) {
  switch (order) {
    case WordOrder::SVO: return "SVO";
    case WordOrder::SOV: return "SOV";
    case WordOrder::VSO: return "VSO";
  }
  return "SVO";
}

WordOrder parse_word_order(std::string_view text) {
  if (text == "SVO") return WordOrder::SVO;
  if (text == "SOV") return WordOrder::SOV;
  if (text == "VSO") return WordOrder::VSO;
  throw ConfigError(fmt::format("unknown word order '{}'", text));
}

std::vector<PseudoLanguage> default_languages(int n) {
  static const std::vector<std::string_view> consonants = {"ptkmnslr", "bdgvzfhw", "cjqxyptk"};
  static const std::vector<std::string_view> tags = {"xa", "yb", "zc"};
  std::vector<PseudoLanguage> out;
  for (int i = 0; i < n; ++i) {
    PseudoLanguage l;
    l.tag = i < 3 ? std::string(tags[static_cast<std::size_t>(i)]) : fmt::format("l{}", i);
    l.order = static_cast<WordOrder>(i % 3);
    l.syllables = make_syllables(consonants[static_cast<std::size_t>(i) % 3], "aeiou");
    out.push_back(std::move(l));
  }
  return out;
}

SyntheticCorpus gen_synthetic(const SyntheticOptions& o) {
  if (o.n_relations < 1 || o.n_subjects < 1) throw ConfigError("n_relations and n_subjects must be >= 1");
  if (!(o.collision_fraction >= 0.0 && o.collision_fraction <= 1.0)) {
    throw ConfigError("collision_fraction must lie in [0, 1]");
  }
  if (o.languages.empty()) throw ConfigError("at least one pseudo-language is required");
  if (o.paraphrases < 1) throw ConfigError("paraphrases must be >= 1");
  std::set<std::string> tags;
  for (const auto& l : o.languages) {
    if (l.tag.empty() || !tags.insert(l.tag).second) throw ConfigError(fmt::format("bad or duplicate tag '{}'", l.tag));
  }

  SyntheticCorpus out;
  out.languages = o.languages;
  for (auto& l : out.languages) l.lexicon.clear();
  std::mt19937_64 rng(mix_seed(o.seed, fnv1a("synthetic")));

  const int n_obj = std::max(2, o.n_subjects / 2);
  Corpus& c = out.corpus;

  // Triplets: each relation maps a shuffled subject order onto its objects.
  for (int r = 0; r < o.n_relations; ++r) {
    std::vector<int> perm(static_cast<std::size_t>(o.n_subjects));
    for (int i = 0; i < o.n_subjects; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < o.n_subjects; ++i) {
      const int s = perm[static_cast<std::size_t>(i)];
      c.triplets.push_back({subject_id(s), relation_id(r), object_id(r, i % n_obj)});
    }
  }
  std::sort(c.triplets.begin(), c.triplets.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(a.relation_id, a.subject_id) < std::tie(b.relation_id, b.subject_id);
  });

  // Per-object properties shared by all languages.
  std::vector<std::string> objects;
  for (int r = 0; r < o.n_relations; ++r) {
    for (int k = 0; k < n_obj; ++k) objects.push_back(object_id(r, k));
  }
  const auto choose = [&](double fraction) {
    std::vector<std::size_t> idx(objects.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(objects.size())));
    std::set<std::string> chosen;
    for (std::size_t i = 0; i < n; ++i) chosen.insert(objects[idx[i]]);
    return chosen;
  };
  const auto colliding = out.languages.size() > 1 ? choose(o.collision_fraction) : std::set<std::string>{};
  const auto with_article = choose(o.article_fraction);
  const auto with_alt = choose(o.second_alias_fraction);

  std::set<std::string> used;
  std::vector<WordSource> sources;
  sources.reserve(out.languages.size());
  for (std::size_t li = 0; li < out.languages.size(); ++li) {
    sources.emplace_back(out.languages[li], mix_seed(o.seed, fnv1a(out.languages[li].tag)));
  }
  std::map<std::string, std::string> shared_surface;
  for (const auto& id : colliding) shared_surface[id] = sources.front().next(used);

  for (std::size_t li = 0; li < out.languages.size(); ++li) {
    auto& lang = out.languages[li];
    auto& src = sources[li];
    auto& lex = lang.lexicon;
    const std::string marker = lang.marker_token();
    if (!used.insert(marker).second) throw ConfigError(fmt::format("marker '{}' is not unique", marker));
    lex["marker"] = marker;

    // Articles are one syllable, the rest are full words.
    PseudoLanguage short_words = lang;
    short_words.word_syllables = 1;
    WordSource article_src(short_words, mix_seed(o.seed, fnv1a(lang.tag + "/art")));
    lex["article"] = article_src.next(used);

    for (int s = 0; s < o.n_subjects; ++s) lex["subj:" + subject_id(s)] = src.next(used);
    for (int k = 0; k < o.paraphrases; ++k) lex[fmt::format("fill:{}", k)] = src.next(used);
    for (int r = 0; r < o.n_relations; ++r) lex["cue:" + relation_id(r)] = src.next(used);
    for (const auto& id : objects) {
      const auto shared = shared_surface.find(id);
      lex["obj:" + id] = shared != shared_surface.end() ? shared->second : src.next(used);
      if (with_alt.contains(id)) lex["alt:" + id] = src.next(used);
    }

    for (int s = 0; s < o.n_subjects; ++s) c.aliases[{lang.tag, subject_id(s)}] = {lex["subj:" + subject_id(s)]};
    for (const auto& id : objects) {
      std::vector<std::string> list = {lex["obj:" + id]};
      if (with_alt.contains(id)) list.push_back(lex["alt:" + id]);
      c.aliases[{lang.tag, id}] = std::move(list);
      if (with_article.contains(id)) c.articles[{lang.tag, id}] = lex["article"];
    }

    int index = 0;
    for (int r = 0; r < o.n_relations; ++r) {
      const std::string cue = lex["cue:" + relation_id(r)];
      auto add = [&](std::string pattern) {
        Template t{relation_id(r), lang.tag, std::move(pattern), index++, false};
        t.object_final = is_object_final(t.pattern);
        c.templates.push_back(std::move(t));
      };
      for (int k = 0; k < o.paraphrases; ++k) {
        const std::string fill = lex[fmt::format("fill:{}", k)];
        if (lang.order == WordOrder::VSO) {
          add(fmt::format("{} {} [X] {} [Y]", marker, fill, cue));
        } else {
          add(fmt::format("{} [X] {} {} [Y]", marker, fill, cue));
        }
      }
      const std::string fill0 = lex["fill:0"];
      if (lang.order == WordOrder::SOV) add(fmt::format("{} [X] {} [Y] {}", marker, cue, fill0));
      if (lang.order == WordOrder::VSO) add(fmt::format("{} {} [X] [Y] {}", marker, cue, fill0));
    }
    c.languages.push_back(lang.tag);
  }
  // Templates are stored grouped by sorted language, as load_corpus returns them.
  std::sort(c.languages.begin(), c.languages.end());
  std::stable_sort(c.templates.begin(), c.templates.end(),
                   [](const Template& a, const Template& b) { return a.lang < b.lang; });
  return out;
}

}  // namespace rlab::corpus
