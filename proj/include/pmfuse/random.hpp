#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace pmfuse {

/// Mixes a base seed with a stream index (splitmix64). Used to give every
/// chain, fold and prediction chunk its own reproducible generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma with shape/rate parameterization.
  double gamma(double shape, double rate);
  /// Inverse-Gamma(shape, scale): the reciprocal of Gamma(shape, rate = scale).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Draws an index with probability proportional to exp(log_weights[i]).
std::size_t sample_log_weights(std::span<const double> log_weights, Rng& rng);

}  // namespace pmfuse
