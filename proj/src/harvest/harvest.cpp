#include "rlab/harvest/harvest.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/common/hash.hpp"
#include "rlab/common/parallel.hpp"

namespace rlab::harvest {
namespace {

using runtime::Vocabulary;

struct Candidate {
  const corpus::Template* tpl = nullptr;
  MemorizedExample example;
};

struct TripletOutcome {
  std::optional<MemorizedExample> example;
  bool matched = false;
  bool span_error = false;
  bool verify_error = false;
  std::string diagnostic;
};

bool has_unknown(std::span<const TokenId> ids) {
  return std::find(ids.begin(), ids.end(), Vocabulary::kUnk) != ids.end();
}

}  // namespace

std::optional<AnchoredMatch> find_anchored_match(std::span<const TokenId> decoded,
                                                 const std::vector<std::vector<TokenId>>& aliases,
                                                 std::span<const TokenId> stop_tokens, int max_prefix) {
  const int n = static_cast<int>(decoded.size());
  for (int k = 0; k <= max_prefix && k < n; ++k) {
    for (std::size_t a = 0; a < aliases.size(); ++a) {
      const auto& alias = aliases[a];
      if (alias.empty() || k + static_cast<int>(alias.size()) > n) continue;
      if (std::equal(alias.begin(), alias.end(), decoded.begin() + k)) {
        return AnchoredMatch{k, static_cast<int>(a)};
      }
    }
    if (std::find(stop_tokens.begin(), stop_tokens.end(), decoded[static_cast<std::size_t>(k)]) !=
        stop_tokens.end()) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

MemorizedExample absorb_prefix(MemorizedExample example, std::span<const TokenId> decoded,
                               const std::vector<TokenId>& alias_tokens, const AnchoredMatch& match) {
  const auto start = static_cast<std::size_t>(match.start);
  if (alias_tokens.empty() || match.start < 0 || start + alias_tokens.size() > decoded.size() ||
      !std::equal(alias_tokens.begin(), alias_tokens.end(), decoded.begin() + match.start)) {
    throw AbsorptionError("alias not found in the decoded continuation");
  }
  example.absorbed.assign(decoded.begin(), decoded.begin() + match.start);
  example.input_ids.insert(example.input_ids.end(), example.absorbed.begin(), example.absorbed.end());
  example.object_token = alias_tokens.front();
  return example;
}

std::pair<int, int> locate_subject_span(std::span<const TokenId> tokens, std::span<const TokenId> subject) {
  if (subject.empty()) throw SpanError("empty subject");
  int found = -1;
  int count = 0;
  for (std::size_t i = 0; i + subject.size() <= tokens.size(); ++i) {
    if (std::equal(subject.begin(), subject.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
      if (count++ == 0) found = static_cast<int>(i);
    }
  }
  if (count == 0) throw SpanError("subject does not occur in the input");
  if (count > 1) throw SpanError(fmt::format("subject occurs {} times in the input", count));
  return {found, found + static_cast<int>(subject.size()) - 1};
}

runtime::RunInputs build_prompt(const corpus::Template& tpl, const std::string& subject,
                                const Vocabulary& vocab, bool encoder_decoder) {
  runtime::RunInputs in;
  if (encoder_decoder) {
    const auto sentinels = vocab.sentinel_ids();
    if (sentinels.empty()) throw ConfigError("encoder-decoder prompts need a sentinel token");
    in.enc_tokens = runtime::tokenize(corpus::render(tpl, subject, Vocabulary::sentinel_text(0)), vocab);
    in.dec_tokens = {Vocabulary::kBos, sentinels.front()};
  } else {
    in.dec_tokens = {Vocabulary::kBos};
    const auto prefix = runtime::tokenize(corpus::render_prefix(tpl, subject), vocab);
    in.dec_tokens.insert(in.dec_tokens.end(), prefix.begin(), prefix.end());
  }
  return in;
}

bool reverify(const engine::Backend& backend, const MemorizedExample& example) {
  return backend.execute(example.inputs(), {}).predicted_token == example.object_token;
}

HarvestResult harvest(const engine::Backend& backend, const Vocabulary& vocab, const corpus::Corpus& corpus,
                      const std::string& lang, const HarvestOptions& options) {
  const bool ed = backend.capabilities().model.is_encoder_decoder();
  const auto triplets = corpus.triplets_in(lang);
  std::vector<TokenId> stops = vocab.sentinel_ids();
  stops.push_back(Vocabulary::kEos);

  std::vector<TripletOutcome> outcomes(triplets.size());
  parallel_for(
      triplets.size(),
      [&](std::size_t i) {
        const auto& t = triplets[i];
        auto& out = outcomes[i];
        const std::string& subject = corpus.surface(lang, t.subject_id);
        const auto subject_ids = runtime::tokenize(subject, vocab);
        const auto& alias_text = *corpus.aliases_of(lang, t.object_id);
        std::vector<std::vector<TokenId>> alias_ids;
        for (const auto& a : alias_text) {
          auto ids = runtime::tokenize(a, vocab);
          if (has_unknown(ids)) ids.clear();
          alias_ids.push_back(std::move(ids));
        }

        std::vector<Candidate> candidates;
        for (const auto* tpl : corpus.templates_for(t.relation_id, lang)) {
          if (!ed && !tpl->object_final) continue;
          if (corpus.is_excluded(t, *tpl)) continue;
          const auto prompt = build_prompt(*tpl, subject, vocab, ed);
          const auto decoded = engine::greedy_decode(backend, prompt, options.max_new_tokens);
          const auto match = find_anchored_match(decoded, alias_ids, stops, options.max_prefix);
          if (!match) continue;
          MemorizedExample base;
          base.lang = lang;
          base.triplet = t;
          base.template_id = tpl->id();
          base.pattern = tpl->pattern;
          base.input_ids = prompt.dec_tokens;
          base.enc_ids = prompt.enc_tokens;
          if (ed) base.sentinel = prompt.dec_tokens.back();
          base.object_alias = alias_text[static_cast<std::size_t>(match->alias_index)];
          candidates.push_back(
              {tpl, absorb_prefix(std::move(base), decoded, alias_ids[static_cast<std::size_t>(match->alias_index)],
                                  *match)});
        }
        if (candidates.empty()) return;
        out.matched = true;

        std::mt19937_64 rng(mix_seed(options.seed, fnv1a(lang + "|" + t.id())));
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        MemorizedExample chosen = std::move(candidates[pick(rng)].example);
        try {
          std::tie(chosen.subject_first, chosen.subject_last) =
              locate_subject_span(chosen.subject_stream(), subject_ids);
        } catch (const SpanError& e) {
          out.span_error = true;
          out.diagnostic = fmt::format("{}: {}", chosen.id(), e.what());
          return;
        }
        if (!reverify(backend, chosen)) {
          out.verify_error = true;
          out.diagnostic = fmt::format("{}: re-verification failed", chosen.id());
          return;
        }
        out.example = std::move(chosen);
      },
      options.threads);

  HarvestResult result;
  result.stats.triplets = triplets.size();
  for (auto& o : outcomes) {
    result.stats.matched += o.matched ? 1 : 0;
    result.stats.dropped_span += o.span_error ? 1 : 0;
    result.stats.dropped_verify += o.verify_error ? 1 : 0;
    if (!o.diagnostic.empty()) result.stats.diagnostics.push_back(std::move(o.diagnostic));
    if (o.example) result.examples.push_back(std::move(*o.example));
  }
  result.stats.emitted = result.examples.size();
  return result;
}

}  // namespace rlab::harvest
