#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/common/hash.hpp"
#include "rlab/patching/patching.hpp"

namespace rlab::patching {
namespace {

bool disjoint(const std::set<TokenId>& a, const std::set<TokenId>& b) {
  return std::none_of(a.begin(), a.end(), [&](TokenId t) { return b.contains(t); });
}

std::optional<std::string> object_of(const corpus::Corpus& c, const std::string& subject, const std::string& relation) {
  for (const auto& t : c.triplets) {
    if (t.subject_id == subject && t.relation_id == relation) return t.object_id;
  }
  return std::nullopt;
}

}  // namespace

Condition condition_from_number(int n) {
  if (n < 1 || n > 3) throw ConfigError(fmt::format("condition must be 1, 2 or 3, got {}", n));
  return static_cast<Condition>(n);
}

int condition_number(Condition c) { return static_cast<int>(c); }

std::string_view to_string(Label label) {
  switch (label) {
    case Label::Lc_oc: return "Lc(oc)";
    case Label::Lp_op: return "Lp(op)";
    case Label::Lp_oc: return "Lp(oc)";
    case Label::Lc_op: return "Lc(op)";
    case Label::cross_rp_sc: return "o(rp,sc)";
    case Label::cross_rc_sp: return "o(rc,sp)";
    case Label::other: return "other";
  }
  return "other";
}

Label label_from_index(std::size_t i) {
  if (i > kChannelCount) throw ConfigError("label index out of range");
  return static_cast<Label>(i);
}

std::set<TokenId> first_tokens(const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                               const std::string& lang, const std::string& object_id) {
  std::set<TokenId> out;
  const auto* aliases = corpus.aliases_of(lang, object_id);
  if (aliases == nullptr) return out;
  for (const auto& a : *aliases) {
    const auto ids = runtime::tokenize(a, vocab);
    if (ids.empty() || std::find(ids.begin(), ids.end(), runtime::Vocabulary::kUnk) != ids.end()) continue;
    out.insert(ids.front());
  }
  return out;
}

std::vector<PatchPair> build_pairs(const std::map<std::string, std::vector<harvest::MemorizedExample>>& harvests,
                                   const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                                   const PairOptions& o) {
  const bool same_lang = o.condition == Condition::same_lang_diff_rel_diff_subj;
  const std::string lp = o.patch_lang;
  const std::string lc = same_lang ? o.patch_lang : o.context_lang;
  if (!same_lang && lp == lc) throw ConfigError("conditions 2 and 3 need two different languages");
  const auto pit = harvests.find(lp);
  const auto cit = harvests.find(lc);
  if (pit == harvests.end() || cit == harvests.end()) return {};

  std::vector<PatchPair> pairs;
  for (const auto& p : pit->second) {
    for (const auto& c : cit->second) {
      const bool same_rel = p.triplet.relation_id == c.triplet.relation_id;
      const bool same_subj = p.triplet.subject_id == c.triplet.subject_id;
      bool ok = false;
      switch (o.condition) {
        case Condition::same_lang_diff_rel_diff_subj: ok = !same_rel && !same_subj; break;
        case Condition::diff_lang_same_rel_diff_subj: ok = same_rel && !same_subj; break;
        case Condition::diff_lang_diff_rel_same_subj: ok = !same_rel && same_subj; break;
      }
      if (!ok) continue;
      PatchPair pair{o.condition, p, c, {}};
      auto& ch = pair.channels;
      auto set = [&](Label l, std::set<TokenId> tokens) {
        auto& slot = ch[static_cast<std::size_t>(l)];
        slot.tokens = std::move(tokens);
        slot.enabled = !slot.tokens.empty();
      };
      const auto& op = p.triplet.object_id;
      const auto& oc = c.triplet.object_id;
      set(Label::Lc_oc, first_tokens(corpus, vocab, lc, oc));
      set(Label::Lp_op, first_tokens(corpus, vocab, lp, op));
      if (same_lang) {
        if (const auto o1 = object_of(corpus, c.triplet.subject_id, p.triplet.relation_id)) {
          set(Label::cross_rp_sc, first_tokens(corpus, vocab, lp, *o1));
        }
        if (const auto o2 = object_of(corpus, p.triplet.subject_id, c.triplet.relation_id)) {
          set(Label::cross_rc_sp, first_tokens(corpus, vocab, lp, *o2));
        }
      } else {
        if (!corpus.aliases_of(lp, oc) || !corpus.aliases_of(lc, op)) continue;
        set(Label::Lp_oc, first_tokens(corpus, vocab, lp, oc));
        set(Label::Lc_op, first_tokens(corpus, vocab, lc, op));
        // A channel is only informative when the two spellings differ.
        if (!disjoint(ch[static_cast<std::size_t>(Label::Lp_oc)].tokens, ch[static_cast<std::size_t>(Label::Lc_oc)].tokens)) {
          ch[static_cast<std::size_t>(Label::Lp_oc)].enabled = false;
          ch[static_cast<std::size_t>(Label::Lc_oc)].enabled = false;
        }
        if (!disjoint(ch[static_cast<std::size_t>(Label::Lc_op)].tokens, ch[static_cast<std::size_t>(Label::Lp_op)].tokens)) {
          ch[static_cast<std::size_t>(Label::Lc_op)].enabled = false;
          ch[static_cast<std::size_t>(Label::Lp_op)].enabled = false;
        }
      }
      pairs.push_back(std::move(pair));
    }
  }
  if (o.max_pairs > 0 && pairs.size() > o.max_pairs) {
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(mix_seed(o.seed, fnv1a("pairs")));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(o.max_pairs);
    std::sort(idx.begin(), idx.end());
    std::vector<PatchPair> kept;
    for (auto i : idx) kept.push_back(std::move(pairs[i]));
    pairs = std::move(kept);
  }
  return pairs;
}

Label classify_prediction(TokenId token, const PatchPair& pair) {
  std::optional<Label> found;
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const auto& ch = pair.channels[i];
    if (!ch.enabled || !ch.tokens.contains(token)) continue;
    if (found) return Label::other;
    found = static_cast<Label>(i);
  }
  return found.value_or(Label::other);
}

}  // namespace rlab::patching
