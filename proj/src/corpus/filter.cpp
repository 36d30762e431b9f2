#include <cctype>

#include "rlab/corpus/corpus.hpp"

namespace rlab::corpus {

std::string normalize_for_match(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  const auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  std::size_t b = 0, e = out.size();
  while (b < e && (punct(out[b]) || out[b] == ' ')) ++b;
  while (e > b && (punct(out[e - 1]) || out[e - 1] == ' ')) --e;
  return out.substr(b, e - b);
}

Corpus filter_trivial(Corpus corpus) {
  for (const auto& lang : corpus.languages) {
    const auto triplets = corpus.triplets_in(lang);
    for (const auto& t : triplets) {
      const auto& subject = corpus.surface(lang, t.subject_id);
      const auto& aliases = *corpus.aliases_of(lang, t.object_id);
      for (const auto* tpl : corpus.templates_for(t.relation_id, lang)) {
        const std::string query = normalize_for_match(render_query(*tpl, subject));
        for (const auto& alias : aliases) {
          const std::string a = normalize_for_match(alias);
          if (!a.empty() && query.find(a) != std::string::npos) {
            corpus.excluded.insert({t.id(), tpl->id()});
            break;
          }
        }
      }
    }
  }
  return corpus;
}

}  // namespace rlab::corpus
