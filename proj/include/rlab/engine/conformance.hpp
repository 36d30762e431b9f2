#pragma once

#include <string>
#include <vector>

#include "rlab/engine/backend.hpp"

namespace rlab::engine {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ConformanceOptions {
  double tolerance = 1e-5;  // transport may round to float32
  std::uint64_t seed = 7;
};

// Identity battery run against any backend: no-op plan, self-replacement,
// final-layer patch, residual decomposition, knockout determinism.
std::vector<CheckResult> conformance_suite(const Backend& backend,
                                           const ConformanceOptions& options = {});

}  // namespace rlab::engine
