#include "rlab/engine/window.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::engine {

LayerWindow resolve_window(int center, int width, int n_layers) {
  if (n_layers < 1 || center < 0 || center >= n_layers || width < 1) {
    throw ConfigError(fmt::format("invalid window: center {} width {} over {} layers", center,
                                  width, n_layers));
  }
  LayerWindow w{center, width, {}};
  const int lo = std::max(0, center - width / 2);
  const int hi = std::min(n_layers - 1, center + (width + 1) / 2 - 1);
  for (int l = lo; l <= hi; ++l) w.layers.push_back(l);
  return w;
}

namespace {

int scaled(int reference_width, int reference_layers, int n_layers) {
  if (n_layers == reference_layers) return reference_width;
  const double w = static_cast<double>(reference_width) * n_layers / reference_layers;
  return std::clamp(static_cast<int>(std::lround(w)), 1, n_layers);
}

}  // namespace

int default_trace_window(runtime::Arch arch, int n_layers) {
  return arch == runtime::Arch::decoder_only ? scaled(10, 32, n_layers) : scaled(6, 24, n_layers);
}

int default_knockout_window(runtime::Arch arch, int n_layers) {
  return arch == runtime::Arch::decoder_only ? scaled(6, 32, n_layers) : scaled(4, 24, n_layers);
}

}  // namespace rlab::engine
