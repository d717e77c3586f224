#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pmfuse/cv_metrics.hpp"
#include "pmfuse/ensemble.hpp"
#include "pmfuse/error.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/io.hpp"
#include "pmfuse/mcmc.hpp"
#include "pmfuse/serialize.hpp"
#include "pmfuse/synth.hpp"

namespace pmfuse {

struct InputPaths {
  fs::path monitors;
  fs::path obs;
  fs::path grid_ctm;
  fs::path grid_sat;
  fs::path covariates;
  fs::path grid_covariates;
};

struct PipelineConfig {
  InputPaths inputs;
  GridSpec ctm_grid;
  GridSpec sat_grid;
  /// Grid of the emitted surfaces; the SAT grid when unset.
  std::optional<GridSpec> target_grid;
  fs::path out_dir = "out";
  MCMCConfig downscaler_mcmc;
  MCMCConfig ensemble_mcmc;
  EnsembleVariant variant = EnsembleVariant::Joint;
  FoldKind input_derivation = FoldKind::KFold;
  int n_folds = 10;
  /// Days of the combined surface; every fitted day when empty.
  std::vector<int> surface_days;
  std::uint64_t seed = 1;
  int threads = 0;  ///< 0: PMFUSE_THREADS or hardware concurrency
  bool overwrite = false;

  void validate() const;
  const GridSpec& surface_grid() const { return target_grid ? *target_grid : sat_grid; }
  /// Relative input paths are resolved against `base_dir`.
  static PipelineConfig from_json(const Json& j, const fs::path& base_dir = {});
  static PipelineConfig load(const fs::path& path);
  Json to_json() const;
  /// FNV-1a hash (16 hex digits) of every setting except out_dir, threads
  /// and overwrite.
  std::string hash() const;
};

std::string_view to_string(FoldKind kind);
FoldKind parse_fold_kind(std::string_view text);

/// Error raised by run_pipeline, naming the stage that failed.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Stream indices mixed with the master seed for each pipeline stage.
namespace seed_stream {
inline constexpr std::uint64_t kFolds = 1;
inline constexpr std::uint64_t kCvCtm = 2;
inline constexpr std::uint64_t kCvSat = 3;
inline constexpr std::uint64_t kEnsemble = 4;
inline constexpr std::uint64_t kFullCtm = 5;
inline constexpr std::uint64_t kFullSat = 6;
inline constexpr std::uint64_t kWeightKriging = 7;
inline constexpr std::uint64_t kEnsembleCv = 8;
}  // namespace seed_stream

/// File names inside a run directory.
namespace artifact {
inline constexpr const char* kPredictiveCv = "predictive_cv.csv";
inline constexpr const char* kWeights = "weights.csv";
inline constexpr const char* kPredictive = "predictive.csv";
inline constexpr const char* kWeightSurface = "weight_surface.csv";
inline constexpr const char* kSurface = "surface.csv";
inline constexpr const char* kEval = "eval.csv";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifact

struct PipelineResult {
  fs::path run_dir;
  std::string config_hash;
  std::vector<EvalRow> eval;
};

/// Loaded and linked pipeline inputs.
struct PipelineInputs {
  ObservationTable table;
  GriddedField ctm;
  GriddedField sat;
  CovariateField grid_covariates;
};

PipelineInputs load_inputs(const PipelineConfig& config);

/// Ensemble observations for every record from per-record predictive inputs.
std::vector<EnsembleObservation> ensemble_observations(const ObservationTable& table,
                                                       std::span<const PredictiveInput> ctm,
                                                       std::span<const PredictiveInput> sat);

WeightPosterior fit_ensemble(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                             EnsembleVariant variant, const MCMCConfig& config);

/// Out-of-sample weight for every record: the ensemble is refitted without
/// each fold and the posterior mean weight at the record's site is returned.
std::vector<double> cv_weights(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                               const FoldPlan& plan, EnsembleVariant variant, const MCMCConfig& config,
                               int threads = 1);

/// Stage 1 CV predictives, stage 2 weights, stage 3 full-data predictives,
/// kriged weight surface, combined surface and evaluation tables, written to
/// out_dir/run-<hash>/ with a manifest.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Writes a scene's inputs in the CSV formats plus a pipeline.json that
/// references them, and returns that configuration.
PipelineConfig export_scene(const SceneTruth& truth, const fs::path& dir, bool overwrite = false);

}  // namespace pmfuse
