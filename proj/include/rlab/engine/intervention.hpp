#pragma once

#include <compare>
#include <string>
#include <variant>
#include <vector>

#include "rlab/runtime/hooks.hpp"

namespace rlab::engine {

using runtime::AttentionBlock;
using runtime::HookSite;

struct RunId {
  std::string value;
  auto operator<=>(const RunId&) const = default;
};

struct Capture {};
struct Replace {
  std::vector<double> vector;
};
struct RestoreFrom {
  RunId run;
};
struct AttnBlock {
  AttentionBlock block;
};

using Action = std::variant<Capture, Replace, RestoreFrom, AttnBlock>;

// One step of an intervention plan. `site` is ignored for attention blocks.
struct Intervention {
  Action action;
  HookSite site;

  static Intervention capture(HookSite site) { return {Capture{}, site}; }
  static Intervention replace(HookSite site, std::vector<double> v) {
    return {Replace{std::move(v)}, site};
  }
  static Intervention restore(HookSite site, RunId run) { return {RestoreFrom{std::move(run)}, site}; }
  static Intervention block(AttentionBlock b) { return {AttnBlock{std::move(b)}, HookSite{}}; }

  bool is_write() const {
    return std::holds_alternative<Replace>(action) || std::holds_alternative<RestoreFrom>(action);
  }
};

using Plan = std::vector<Intervention>;

std::string action_name(const Action& action);

}  // namespace rlab::engine
