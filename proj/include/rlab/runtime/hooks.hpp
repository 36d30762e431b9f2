#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/runtime/config.hpp"

namespace rlab::runtime {

enum class Stream { enc, dec };

// Where a vector lives in the computation of one layer:
//   embed        token embedding row E[id] (layer 0 only, before positions)
//   state_h      residual entering layer l; layer == n_layers is the final state
//   self_attn_s  self-attention output of layer l, before the residual add
//   cross_attn_c cross-attention output of decoder layer l (encoder-decoder)
//   mlp_f        MLP output of layer l, before the residual add
enum class SiteKind { embed, state_h, self_attn_s, cross_attn_c, mlp_f };

enum class AttentionKind { self, cross };

std::string_view to_string(Stream s);
std::string_view to_string(SiteKind k);
std::string_view to_string(AttentionKind k);
Stream parse_stream(std::string_view text);
SiteKind parse_site_kind(std::string_view text);
AttentionKind parse_attention_kind(std::string_view text);

struct HookSite {
  Stream stream = Stream::dec;
  int layer = 0;
  SiteKind kind = SiteKind::state_h;
  int token = -1;  // negative counts from the end of the stream

  auto operator<=>(const HookSite&) const = default;
};

std::string describe(const HookSite& site);

struct StreamShape {
  int enc_tokens = 0;
  int dec_tokens = 0;
  int tokens(Stream s) const { return s == Stream::enc ? enc_tokens : dec_tokens; }
};

// Layer count of a stream for `config` (0 for the encoder of a decoder-only model).
int stream_layers(const ModelConfig& config, Stream stream);

// Empty when the site is addressable on `config`; otherwise a human-readable
// reason. Token bounds are checked only when `shape` is given.
std::optional<std::string> site_problem(const ModelConfig& config, const HookSite& site,
                                        const std::optional<StreamShape>& shape = std::nullopt);

// Resolves a possibly negative token index; throws AddressingError when out of range.
int resolve_token(int token, int length);

struct ActivationRecord {
  HookSite site;
  std::vector<double> vector;
};

struct Replacement {
  HookSite site;
  std::vector<double> vector;
};

// Removes attention edges query -> key for every layer in `layers`.
// stream/attention select the attention module: (enc, self), (dec, self), (dec, cross).
// query_token indexes the querying stream; key_tokens index the key stream
// (the encoder for cross-attention).
struct AttentionBlock {
  Stream stream = Stream::dec;
  AttentionKind attention = AttentionKind::self;
  std::vector<int> layers;
  int query_token = -1;
  std::vector<int> key_tokens;
};

enum class KnockoutMode {
  mask_logits,   // blocked logits set to -inf before softmax; row renormalises
  zero_weights,  // blocked weights zeroed after softmax; no renormalisation
};

struct Hooks {
  std::vector<HookSite> captures;
  std::vector<Replacement> replacements;
  std::vector<AttentionBlock> blocks;
  KnockoutMode knockout_mode = KnockoutMode::mask_logits;
  bool record_attention = false;
};

}  // namespace rlab::runtime
