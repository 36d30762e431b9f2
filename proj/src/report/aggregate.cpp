#include "rlab/report/aggregate.hpp"

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::report {

double relative_difference(double p_after, double p_before) {
  if (!(p_before > 0.0)) throw GuardError(fmt::format("relative difference needs p_before > 0, got {}", p_before));
  return (p_after - p_before) / p_before;
}

double mean_of(std::span<const double> values) {
  MeanFold f;
  for (double v : values) f.add(v);
  return f.mean();
}

}  // namespace rlab::report
