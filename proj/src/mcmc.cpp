#include "pmfuse/mcmc.hpp"

#include <algorithm>
#include <cmath>

#include "pmfuse/error.hpp"

namespace pmfuse {

void MCMCConfig::validate() const {
  if (n_iter < 1 || burn_in < 0 || burn_in >= n_iter) {
    throw ConfigError("MCMC: need 0 <= burn_in < n_iter");
  }
  if (thin < 1) throw ConfigError("MCMC: thin must be >= 1");
  if (retained() < 1) throw ConfigError("MCMC: no retained samples");
  if (!(kappa_w > 0.0) || !(kappa_rho > 0.0)) {
    throw ConfigError("MCMC: proposal variances must be positive");
  }
  if (!(ig_a > 0.0) || !(ig_b > 0.0) || !(range_shape > 0.0) || !(range_rate > 0.0)) {
    throw ConfigError("MCMC: prior hyperparameters must be positive");
  }
}

double AdaptiveScale::sd() const { return std::sqrt(variance_); }

void AdaptiveScale::record(bool accepted) {
  ++batch_tries_;
  ++total_;
  if (accepted) {
    ++batch_accepts_;
    ++accepted_total_;
  }
}

void AdaptiveScale::end_iteration(bool adapting) {
  ++iterations_;
  if (iterations_ % kBatch != 0) return;
  if (adapting && batch_tries_ > 0) {
    const double rate = static_cast<double>(batch_accepts_) / batch_tries_;
    // Scale the proposal sd by exp(+-delta); delta shrinks slowly with time.
    const double delta = std::min(0.5, 2.0 / std::sqrt(static_cast<double>(iterations_ / kBatch)));
    if (rate < 0.30) variance_ *= std::exp(-2.0 * delta);
    if (rate > 0.45) variance_ *= std::exp(2.0 * delta);
    variance_ = std::clamp(variance_, 1e-8, 1e4);
  }
  batch_tries_ = 0;
  batch_accepts_ = 0;
}

}  // namespace pmfuse
