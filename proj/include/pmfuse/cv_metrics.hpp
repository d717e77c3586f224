#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmfuse/kernels.hpp"
#include "pmfuse/mixture.hpp"

namespace pmfuse {

enum class FoldKind { KFold, SpatialLomo };

/// Assignment of records to cross-validation folds.
struct FoldPlan {
  FoldKind kind = FoldKind::KFold;
  int n_folds = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  ///< fold id per record

  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> complement(int fold) const;
};

/// Identity of a record for fold assignment.
struct RecordKey {
  std::string site_id;
  int day = 0;
};

/// KFold shuffles records (by identity, not input order) and deals them into
/// k folds whose sizes differ by at most one. SpatialLomo gives each site its
/// own fold, numbered by sorted site id. k is ignored for SpatialLomo.
FoldPlan make_folds(std::span<const RecordKey> records, FoldKind kind, int k, std::uint64_t seed);

/// Held-out observation with the point prediction, predictive SD and 95%
/// interval of whatever predictive distribution produced it.
struct HeldOutPrediction {
  double y = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;

  static HeldOutPrediction from(double y, const MixtureDistribution& m);
  static HeldOutPrediction from(double y, const GaussianSummary& g);
};

/// RMSE, 95% interval coverage (percent), mean predictive SD and R^2, where R^2
/// is the squared Pearson correlation between observed and predicted.
struct EvalReport {
  double rmse = 0.0;
  double coverage95 = 0.0;
  double avg_posterior_sd = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
};

EvalReport evaluate(std::span<const HeldOutPrediction> held_out);

}  // namespace pmfuse
