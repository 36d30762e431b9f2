#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/corpus/corpus.hpp"
#include "rlab/runtime/model.hpp"

namespace rlab::harvest {

using runtime::TokenId;

// A triplet the model completes with its object, in one language.
// Decoder-only: `input_ids` is the whole prompt and the subject span indexes
// it. Encoder-decoder: `enc_ids` holds the sentinel-masked query (the subject
// span indexes it) and `input_ids` is the decoder prefix.
struct MemorizedExample {
  std::string lang;
  corpus::Triplet triplet;
  std::string template_id;
  std::string pattern;
  std::vector<TokenId> input_ids;
  std::vector<TokenId> enc_ids;
  TokenId sentinel = -1;
  std::vector<TokenId> absorbed;  // prefix tokens moved into the input
  std::string object_alias;       // alias that matched
  TokenId object_token = -1;      // first token of the matched alias
  int subject_first = 0;
  int subject_last = 0;

  std::string id() const { return lang + "|" + triplet.id(); }
  bool encoder_decoder() const { return !enc_ids.empty(); }
  runtime::RunInputs inputs() const { return {enc_ids, input_ids}; }
  // Tokens of the stream holding the subject.
  const std::vector<TokenId>& subject_stream() const { return encoder_decoder() ? enc_ids : input_ids; }

  bool operator==(const MemorizedExample&) const = default;
};

nlohmann::json to_json(const MemorizedExample& e);
MemorizedExample example_from_json(const nlohmann::json& j);

void write_examples(const std::filesystem::path& path, const std::vector<MemorizedExample>& examples);
std::vector<MemorizedExample> read_examples(const std::filesystem::path& path);

}  // namespace rlab::harvest
