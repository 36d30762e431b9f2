#include "rlab/runtime/config.hpp"

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::runtime {

std::string_view to_string(Arch arch) {
  return arch == Arch::decoder_only ? "decoder_only" : "encoder_decoder";
}

Arch parse_arch(std::string_view text) {
  if (text == "decoder_only") return Arch::decoder_only;
  if (text == "encoder_decoder") return Arch::encoder_decoder;
  throw ConfigError(fmt::format("unknown architecture '{}'", text));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (n_layers_dec < 1) fail("n_layers_dec must be >= 1");
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff < 1) fail("d_ff must be positive");
  if (vocab_size < 4) fail("vocab_size must be >= 4");
  if (max_seq < 2) fail("max_seq must be >= 2");
  if (arch == Arch::decoder_only) {
    if (n_layers_enc != 0) fail("decoder-only models have no encoder layers");
    if (!sentinel_ids.empty()) fail("sentinel ids are only valid for encoder-decoder models");
  } else {
    if (n_layers_enc < 1) fail("encoder-decoder models need encoder layers");
    if (sentinel_ids.empty()) fail("encoder-decoder models need sentinel ids");
  }
  for (TokenId id : sentinel_ids) {
    if (id < 4 || id >= vocab_size) fail(fmt::format("sentinel id {} out of range", id));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", to_string(c.arch)},
                     {"n_layers_enc", c.n_layers_enc},
                     {"n_layers_dec", c.n_layers_dec},
                     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size},
                     {"max_seq", c.max_seq},
                     {"sentinel_ids", c.sentinel_ids},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.n_layers_enc = j.value("n_layers_enc", 0);
  c.n_layers_dec = j.at("n_layers_dec").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.sentinel_ids = j.value("sentinel_ids", std::vector<TokenId>{});
  c.seed = j.value("seed", std::uint64_t{0});
}

}  // namespace rlab::runtime
