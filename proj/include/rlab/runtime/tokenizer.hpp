#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rlab/runtime/config.hpp"

namespace rlab::runtime {

// Fixed word-level vocabulary. The file format is one token per line; the
// line number (from 0) is the id. Ids 0..3 are reserved.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::string_view kPadText = "<pad>";
  static constexpr std::string_view kBosText = "<s>";
  static constexpr std::string_view kEosText = "</s>";
  static constexpr std::string_view kUnkText = "<unk>";

  Vocabulary();

  // Reserved tokens, then `n_sentinels` sentinels <extra_id_N>, then `words`
  // in order with duplicates skipped.
  static Vocabulary build(const std::vector<std::string>& words, int n_sentinels = 0);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  std::vector<TokenId> sentinel_ids() const;
  static std::string sentinel_text(int index);

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Whitespace split; the punctuation marks , . ; : ! ? ( ) become their own
// tokens. Angle-bracketed chunks such as <extra_id_0> stay whole.
std::vector<std::string> split_words(std::string_view text);

// Joins words with single spaces, without a space before closing punctuation
// or after an opening parenthesis.
std::string join_words(std::span<const std::string> words);

// join_words(split_words(text)).
std::string normalize_text(std::string_view text);

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace rlab::runtime
