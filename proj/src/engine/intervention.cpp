#include "rlab/engine/intervention.hpp"

namespace rlab::engine {

std::string action_name(const Action& action) {
  struct Namer {
    std::string operator()(const Capture&) const { return "capture"; }
    std::string operator()(const Replace&) const { return "replace"; }
    std::string operator()(const RestoreFrom&) const { return "restore_from"; }
    std::string operator()(const AttnBlock&) const { return "attn_block"; }
  };
  return std::visit(Namer{}, action);
}

}  // namespace rlab::engine
