#include "rlab/runtime/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::runtime {
namespace {

bool is_split_punct(char c) {
  switch (c) {
    case ',': case '.': case ';': case ':': case '!': case '?': case '(': case ')':
      return true;
    default:
      return false;
  }
}

bool is_closing_punct(const std::string& w) {
  return w.size() == 1 && is_split_punct(w[0]) && w[0] != '(';
}

}  // namespace

Vocabulary::Vocabulary() {
  for (auto t : {kPadText, kBosText, kEosText, kUnkText}) add(std::string(t));
}

void Vocabulary::add(std::string token) {
  if (index_.contains(token)) return;
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& words, int n_sentinels) {
  Vocabulary v;
  for (int i = 0; i < n_sentinels; ++i) v.add(sentinel_text(i));
  for (const auto& w : words) v.add(w);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("cannot open vocabulary file {}", path.string()));
  Vocabulary v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || v.index_.contains(line)) {
      throw LoadError(fmt::format("{}:{}: empty or duplicate token", path.string(), line_no));
    }
    v.add(line);
  }
  if (v.size() < 4 || v.tokens_[kPad] != kPadText || v.tokens_[kBos] != kBosText ||
      v.tokens_[kEos] != kEosText || v.tokens_[kUnk] != kUnkText) {
    throw LoadError(fmt::format("{}: the first four tokens must be {} {} {} {}", path.string(),
                                kPadText, kBosText, kEosText, kUnkText));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw AddressingError(fmt::format("token id {} outside vocabulary", id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::sentinel_text(int index) { return fmt::format("<extra_id_{}>", index); }

std::vector<TokenId> Vocabulary::sentinel_ids() const {
  std::vector<TokenId> ids;
  for (int i = 0;; ++i) {
    auto it = index_.find(sentinel_text(i));
    if (it == index_.end()) break;
    ids.push_back(it->second);
  }
  return ids;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view chunk = text.substr(i, j - i);
    i = j;
    if (chunk.size() > 2 && chunk.front() == '<' && chunk.back() == '>') {
      words.emplace_back(chunk);
      continue;
    }
    std::string current;
    for (char c : chunk) {
      if (is_split_punct(c)) {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
        words.emplace_back(1, c);
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) words.push_back(std::move(current));
  }
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  bool after_open = false;
  for (const auto& w : words) {
    if (!out.empty() && !is_closing_punct(w) && !after_open) out.push_back(' ');
    out += w;
    after_open = (w == "(");
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  const auto words = split_words(text);
  return join_words(words);
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId id : ids) words.push_back(vocab.token(id));
  return join_words(words);
}

}  // namespace rlab::runtime
