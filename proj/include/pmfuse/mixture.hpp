#pragma once

namespace pmfuse {

/// Two-component Normal mixture w * N(mu1, var1) + (1 - w) * N(mu2, var2).
/// A component with zero weight is ignored, so w = 1 gives a plain Normal.
struct MixtureDistribution {
  double w = 1.0;
  double mu1 = 0.0;
  double var1 = 1.0;
  double mu2 = 0.0;
  double var2 = 1.0;

  static MixtureDistribution single(double mu, double var) { return {1.0, mu, var, mu, var}; }

  double mean() const { return w * mu1 + (1.0 - w) * mu2; }
  double variance() const;
  double sd() const;
  double cdf(double x) const;
  double pdf(double x) const;
  /// Exact inverse of cdf by safeguarded Newton iteration on a bracket.
  double quantile(double p) const;
};

}  // namespace pmfuse
