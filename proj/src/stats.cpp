#include "pmfuse/stats.hpp"

#include <cmath>

#include "pmfuse/error.hpp"

namespace pmfuse {

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw EmptyInput("quantile of an empty sample");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace pmfuse
