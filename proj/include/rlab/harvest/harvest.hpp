#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlab/corpus/corpus.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/runtime/decode.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::harvest {

struct AnchoredMatch {
  int start = 0;        // number of prefix tokens before the alias
  int alias_index = 0;  // index into the alias list
};

// Earliest position k <= max_prefix where one of the aliases starts; the
// scan stops at </s> or a sentinel. Aliases are tried in list order at each k.
std::optional<AnchoredMatch> find_anchored_match(std::span<const TokenId> decoded,
                                                 const std::vector<std::vector<TokenId>>& aliases,
                                                 std::span<const TokenId> stop_tokens, int max_prefix);

// Moves decoded[0, match.start) into the input (decoder prefix for
// encoder-decoder) and records the alias' first token. Throws AbsorptionError
// when the match does not fit `decoded`.
MemorizedExample absorb_prefix(MemorizedExample example, std::span<const TokenId> decoded,
                               const std::vector<TokenId>& alias_tokens, const AnchoredMatch& match);

// Inclusive token span of `subject` inside `tokens`. Throws SpanError on zero
// or several occurrences.
std::pair<int, int> locate_subject_span(std::span<const TokenId> tokens, std::span<const TokenId> subject);

struct HarvestOptions {
  std::uint64_t seed = 0;
  int max_new_tokens = runtime::kDefaultMaxNewTokens;
  int max_prefix = 5;
  unsigned threads = 1;
};

struct HarvestStats {
  std::size_t triplets = 0;   // candidates in the language
  std::size_t matched = 0;    // some template produced an alias
  std::size_t emitted = 0;
  std::size_t dropped_span = 0;
  std::size_t dropped_verify = 0;
  std::vector<std::string> diagnostics;
};

struct HarvestResult {
  std::vector<MemorizedExample> examples;  // corpus triplet order
  HarvestStats stats;
};

// Prompt for one (triplet, template): decoder-only gets [<s>] + prefix tokens,
// encoder-decoder gets the sentinel-masked query and decoder [<s>, sentinel].
runtime::RunInputs build_prompt(const corpus::Template& tpl, const std::string& subject,
                                const runtime::Vocabulary& vocab, bool encoder_decoder);

HarvestResult harvest(const engine::Backend& backend, const runtime::Vocabulary& vocab,
                      const corpus::Corpus& corpus, const std::string& lang,
                      const HarvestOptions& options = {});

// True iff one plain forward pass predicts the stored object token.
bool reverify(const engine::Backend& backend, const MemorizedExample& example);

}  // namespace rlab::harvest
