#pragma once

#include <cstdint>

namespace pmfuse {

/// Run-length, proposal and prior settings shared by every sampler.
struct MCMCConfig {
  int n_iter = 10000;
  int burn_in = 5000;
  int thin = 4;
  /// Proposal variance of the random walk on logit weights.
  double kappa_w = 0.25;
  /// Proposal variance of the log-scale random walk on GP ranges.
  double kappa_rho = 0.09;
  std::uint64_t seed = 1;
  /// Inverse-Gamma(a, b) prior on every variance component.
  double ig_a = 0.001;
  double ig_b = 0.001;
  /// Gamma(shape, rate) prior on GP ranges (km).
  double range_shape = 0.5;
  double range_rate = 0.005;
  /// Adapt proposal scales during burn-in, then freeze.
  bool adapt = true;

  void validate() const;
  int retained() const { return (n_iter - burn_in) / thin; }
  /// True if 1-based iteration `iter` is kept.
  bool keeps(int iter) const { return iter > burn_in && (iter - burn_in) % thin == 0; }
};

/// Random-walk proposal variance tuned in batches during burn-in toward an
/// acceptance rate in [0.30, 0.45].
class AdaptiveScale {
 public:
  explicit AdaptiveScale(double variance) : variance_(variance) {}

  double variance() const { return variance_; }
  double sd() const;
  void record(bool accepted);
  /// Called once per iteration; adjusts at batch boundaries when enabled.
  void end_iteration(bool adapting);
  double acceptance_rate() const {
    return total_ == 0 ? 0.0 : static_cast<double>(accepted_total_) / total_;
  }

 private:
  static constexpr int kBatch = 50;
  double variance_;
  int batch_tries_ = 0;
  int batch_accepts_ = 0;
  int iterations_ = 0;
  long total_ = 0;
  long accepted_total_ = 0;
};

}  // namespace pmfuse
