#include "pmfuse/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pmfuse/error.hpp"
#include "pmfuse/kernels.hpp"

namespace pmfuse {

double MixtureDistribution::variance() const {
  const double m = mean();
  const double second = w * (var1 + mu1 * mu1) + (1.0 - w) * (var2 + mu2 * mu2);
  return std::max(0.0, second - m * m);
}

double MixtureDistribution::sd() const { return std::sqrt(variance()); }

double MixtureDistribution::cdf(double x) const {
  double total = 0.0;
  if (w > 0.0) total += w * normal_cdf(x, mu1, var1);
  if (w < 1.0) total += (1.0 - w) * normal_cdf(x, mu2, var2);
  return total;
}

double MixtureDistribution::pdf(double x) const {
  double total = 0.0;
  if (w > 0.0) total += w * normal_pdf(x, mu1, var1);
  if (w < 1.0) total += (1.0 - w) * normal_pdf(x, mu2, var2);
  return total;
}

double MixtureDistribution::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: p must lie in (0, 1)");
  if (!(var1 > 0.0) || !(var2 > 0.0) || !(w >= 0.0 && w <= 1.0)) {
    throw DomainError("quantile: invalid mixture");
  }
  const double sd1 = std::sqrt(var1);
  const double sd2 = std::sqrt(var2);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  if (w > 0.0) {
    lo = std::min(lo, mu1 - 40.0 * sd1);
    hi = std::max(hi, mu1 + 40.0 * sd1);
  }
  if (w < 1.0) {
    lo = std::min(lo, mu2 - 40.0 * sd2);
    hi = std::max(hi, mu2 + 40.0 * sd2);
  }
  double x = std::clamp(mean(), lo, hi);
  const double scale = std::min(w > 0.0 ? sd1 : sd2, w < 1.0 ? sd2 : sd1);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = cdf(x) - p;
    if (f == 0.0) return x;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    if (hi - lo <= 1e-14 * (1.0 + std::abs(x)) + 1e-13 * scale) break;
    const double density = pdf(x);
    double next = density > 0.0 ? x - f / density : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * (1.0 + std::abs(x))) return next;
    x = next;
  }
  return 0.5 * (lo + hi);
}

}  // namespace pmfuse
