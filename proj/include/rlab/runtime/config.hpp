#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rlab::runtime {

using TokenId = std::int32_t;

enum class Arch { decoder_only, encoder_decoder };

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view text);

struct ModelConfig {
  Arch arch = Arch::decoder_only;
  int n_layers_enc = 0;  // 0 for decoder-only
  int n_layers_dec = 2;
  int d_model = 8;
  int n_heads = 2;
  int d_ff = 32;
  int vocab_size = 32;
  int max_seq = 16;
  std::vector<TokenId> sentinel_ids;  // encoder-decoder only
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  bool is_encoder_decoder() const { return arch == Arch::encoder_decoder; }

  // Throws ConfigError on the first violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace rlab::runtime
