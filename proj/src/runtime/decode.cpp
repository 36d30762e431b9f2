#include "rlab/runtime/decode.hpp"

#include "rlab/common/errors.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::runtime {

std::vector<TokenId> greedy_decode(const Model& model, const RunInputs& prompt, int max_new) {
  if (max_new < 1) throw ConfigError("greedy_decode needs max_new >= 1");
  RunInputs inputs = prompt;
  std::vector<TokenId> generated;
  for (int i = 0; i < max_new; ++i) {
    if (static_cast<int>(inputs.dec_tokens.size()) >= model.config().max_seq) break;
    const TokenId next = model.forward(inputs).predicted_token;
    generated.push_back(next);
    if (next == Vocabulary::kEos) break;
    inputs.dec_tokens.push_back(next);
  }
  return generated;
}

}  // namespace rlab::runtime
