#pragma once

#include <span>

namespace pmfuse {

/// Linearly interpolated empirical quantile of an ascending sample.
double sorted_quantile(std::span<const double> sorted, double p);

}  // namespace pmfuse
