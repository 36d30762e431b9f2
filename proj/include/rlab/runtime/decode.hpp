#pragma once

#include <vector>

#include "rlab/runtime/model.hpp"

namespace rlab::runtime {

inline constexpr int kDefaultMaxNewTokens = 50;

// Appends the argmax token until </s> is produced or `max_new` tokens were
// generated. The returned continuation includes the terminating </s>.
std::vector<TokenId> greedy_decode(const Model& model, const RunInputs& prompt,
                                   int max_new = kDefaultMaxNewTokens);

}  // namespace rlab::runtime
