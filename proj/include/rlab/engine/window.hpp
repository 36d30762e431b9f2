#pragma once

#include <vector>

#include "rlab/runtime/config.hpp"

namespace rlab::engine {

// Layers [max(0, c - floor(w/2)), min(n - 1, c + ceil(w/2) - 1)].
struct LayerWindow {
  int center = 0;
  int width = 1;
  std::vector<int> layers;
};

LayerWindow resolve_window(int center, int width, int n_layers);

// Restoration window for sublayer tracing: 10 of 32 layers for decoder-only
// models and 6 of 24 for encoder-decoder models, scaled to other depths.
int default_trace_window(runtime::Arch arch, int n_layers);

// Knockout window: 6 of 32 (decoder-only) / 4 of 24 (encoder-decoder), scaled.
int default_knockout_window(runtime::Arch arch, int n_layers);

}  // namespace rlab::engine
