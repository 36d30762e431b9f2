#pragma once

#include <cstddef>
#include <span>

namespace rlab::report {

// (p_after - p_before) / p_before; throws GuardError when p_before <= 0.
double relative_difference(double p_after, double p_before);

// Left-to-right running mean. Every aggregate in the toolkit goes through this
// fold so that recomputation from raw dumps reproduces it bit for bit.
struct MeanFold {
  double sum = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    ++n;
  }
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

double mean_of(std::span<const double> values);

}  // namespace rlab::report
