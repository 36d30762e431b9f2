#include "rlab/runtime/hooks.hpp"

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::runtime {

std::string_view to_string(Stream s) { return s == Stream::enc ? "enc" : "dec"; }

std::string_view to_string(SiteKind k) {
  switch (k) {
    case SiteKind::embed: return "embed";
    case SiteKind::state_h: return "state_h";
    case SiteKind::self_attn_s: return "self_attn_s";
    case SiteKind::cross_attn_c: return "cross_attn_c";
    case SiteKind::mlp_f: return "mlp_f";
  }
  return "?";
}

std::string_view to_string(AttentionKind k) { return k == AttentionKind::self ? "self" : "cross"; }

Stream parse_stream(std::string_view text) {
  if (text == "enc") return Stream::enc;
  if (text == "dec") return Stream::dec;
  throw AddressingError(fmt::format("unknown stream '{}'", text));
}

SiteKind parse_site_kind(std::string_view text) {
  for (SiteKind k : {SiteKind::embed, SiteKind::state_h, SiteKind::self_attn_s,
                     SiteKind::cross_attn_c, SiteKind::mlp_f}) {
    if (to_string(k) == text) return k;
  }
  throw AddressingError(fmt::format("unknown site kind '{}'", text));
}

AttentionKind parse_attention_kind(std::string_view text) {
  if (text == "self") return AttentionKind::self;
  if (text == "cross") return AttentionKind::cross;
  throw AddressingError(fmt::format("unknown attention kind '{}'", text));
}

std::string describe(const HookSite& site) {
  return fmt::format("{}/{}@layer{}/token{}", to_string(site.stream), to_string(site.kind),
                     site.layer, site.token);
}

int stream_layers(const ModelConfig& config, Stream stream) {
  return stream == Stream::enc ? config.n_layers_enc : config.n_layers_dec;
}

std::optional<std::string> site_problem(const ModelConfig& config, const HookSite& site,
                                        const std::optional<StreamShape>& shape) {
  if (site.stream == Stream::enc && !config.is_encoder_decoder()) {
    return "encoder stream requested on a decoder-only model";
  }
  const int layers = stream_layers(config, site.stream);
  switch (site.kind) {
    case SiteKind::embed:
      if (site.layer != 0) return "embed sites exist at layer 0 only";
      break;
    case SiteKind::state_h:
      if (site.layer < 0 || site.layer > layers) {
        return fmt::format("state_h layer {} outside [0, {}]", site.layer, layers);
      }
      break;
    case SiteKind::cross_attn_c:
      if (!config.is_encoder_decoder() || site.stream != Stream::dec) {
        return "cross_attn_c exists only in the decoder of encoder-decoder models";
      }
      [[fallthrough]];
    case SiteKind::self_attn_s:
    case SiteKind::mlp_f:
      if (site.layer < 0 || site.layer >= layers) {
        return fmt::format("{} layer {} outside [0, {})", to_string(site.kind), site.layer, layers);
      }
      break;
  }
  if (shape) {
    const int n = shape->tokens(site.stream);
    if (site.token >= n || site.token < -n) {
      return fmt::format("token {} outside a {}-token {} stream", site.token, n,
                         to_string(site.stream));
    }
  }
  return std::nullopt;
}

int resolve_token(int token, int length) {
  const int t = token < 0 ? length + token : token;
  if (t < 0 || t >= length) {
    throw AddressingError(fmt::format("token index {} outside sequence of length {}", token, length));
  }
  return t;
}

}  // namespace rlab::runtime
