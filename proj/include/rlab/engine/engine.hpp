#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rlab/engine/backend.hpp"
#include "rlab/engine/intervention.hpp"

namespace rlab::engine {

// Every violation found in `plan`; empty means the plan is executable.
// Token bounds and fully-blocked attention rows are only checked when `shape`
// is known; restore_from references only when `store` is given.
std::vector<std::string> validate_plan(const Capabilities& caps, const Plan& plan,
                                       const std::optional<runtime::StreamShape>& shape = std::nullopt,
                                       const RunStore* store = nullptr,
                                       runtime::KnockoutMode mode = runtime::KnockoutMode::mask_logits);

// Stateless executor of intervention plans over a backend.
class Engine {
 public:
  Engine(const Backend& backend, RunStore& store,
         runtime::KnockoutMode mode = runtime::KnockoutMode::mask_logits);

  // One forward pass with every intervention applied. Captures are returned
  // in plan order. Throws PlanError listing all diagnostics.
  RunOutput run_with_plan(const RunInputs& inputs, const Plan& plan) const;

  // Runs `inputs` capturing `sites` and stores the captures for restore_from.
  RunId record(const RunInputs& inputs, const std::vector<HookSite>& sites,
               RunOutput* output = nullptr) const;

  const Backend& backend() const { return backend_; }
  RunStore& store() const { return store_; }
  runtime::KnockoutMode knockout_mode() const { return mode_; }

 private:
  const Backend& backend_;
  RunStore& store_;
  runtime::KnockoutMode mode_;
};

}  // namespace rlab::engine
