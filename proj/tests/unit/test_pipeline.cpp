#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pmfuse/error.hpp"
#include "pmfuse/pipeline.hpp"

using namespace pmfuse;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pmfuse_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// A small exported scene with a short MCMC configuration.
PipelineConfig small_config(const fs::path& dir) {
  SceneConfig scene;
  scene.n_sites = 10;
  scene.n_days = 20;
  scene.domain_km = 120.0;
  scene.seed = 501;
  auto config = export_scene(generate_scene(scene), dir / "scene");
  config.downscaler_mcmc.n_iter = 200;
  config.downscaler_mcmc.burn_in = 100;
  config.downscaler_mcmc.thin = 2;
  config.ensemble_mcmc = config.downscaler_mcmc;
  config.n_folds = 4;
  config.surface_days = {1, 2};
  config.out_dir = dir / "out";
  return config;
}

const char* const kArtifacts[] = {artifact::kPredictiveCv, artifact::kWeights,       artifact::kPredictive,
                                  artifact::kWeightSurface, artifact::kSurface, artifact::kEval};

}  // namespace

TEST_CASE("pipeline writes every artifact and they parse") {
  const auto dir = scratch("smoke");
  auto config = small_config(dir);
  config.threads = 2;
  const auto result = run_pipeline(config);
  CHECK(result.run_dir == config.out_dir / ("run-" + config.hash()));
  for (const char* name : kArtifacts) {
    CAPTURE(name);
    REQUIRE(fs::exists(result.run_dir / name));
    const auto tag = read_artifact_tag(result.run_dir / name);
    REQUIRE(tag);
    CHECK(tag->seed == config.seed);
    CHECK(tag->config_hash == result.config_hash);
  }
  const std::size_t n_records = 10 * 20;
  CHECK(load_predictive(result.run_dir / artifact::kPredictiveCv).size() == 2 * n_records);
  CHECK(load_predictive(result.run_dir / artifact::kPredictive).size() == 2 * n_records);
  const auto weights = load_weights(result.run_dir / artifact::kWeights);
  CHECK(weights.size() == 10);
  for (const auto& w : weights) {
    CHECK(w.w_lo <= w.w_mean);
    CHECK(w.w_mean <= w.w_hi);
  }
  const auto grid = config.surface_grid();
  CHECK(load_weight_surface(result.run_dir / artifact::kWeightSurface).size() == grid.cell_count());
  const auto surface = load_surface(result.run_dir / artifact::kSurface);
  CHECK(surface.size() == 2 * grid.cell_count());
  for (const auto& s : surface) {
    CHECK(s.q025 <= s.q975);
    CHECK(s.w >= 0.0);
    CHECK(s.w <= 1.0);
    CHECK(s.sd > 0.0);
    CHECK(s.q025 <= s.mean);
    CHECK(s.mean <= s.q975);
  }
  const auto eval = load_eval(result.run_dir / artifact::kEval);
  CHECK(eval.size() == 5);
  for (const auto& e : eval) {
    CHECK(e.report.rmse >= 0.0);
    CHECK(e.report.coverage95 <= 100.0);
  }
  const auto manifest = read_json_file(result.run_dir / artifact::kManifest);
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("config_hash") == result.config_hash);
  CHECK(manifest.at("artifacts").size() == 6);
}

TEST_CASE("reruns are bit-identical and independent of the thread count") {
  const auto dir = scratch("determinism");
  auto a = small_config(dir);
  a.threads = 1;
  a.out_dir = dir / "a";
  auto b = a;
  b.threads = 2;
  b.out_dir = dir / "b";
  const auto ra = run_pipeline(a);
  const auto rb = run_pipeline(b);
  CHECK(ra.config_hash == rb.config_hash);
  for (const char* name : kArtifacts) {
    CAPTURE(name);
    CHECK(slurp(ra.run_dir / name) == slurp(rb.run_dir / name));
  }
}

TEST_CASE("existing runs are not overwritten") {
  const auto dir = scratch("overwrite");
  auto config = small_config(dir);
  config.threads = 1;
  run_pipeline(config);
  CHECK_THROWS_AS(run_pipeline(config), ConfigError);
  config.overwrite = true;
  CHECK(run_pipeline(config).config_hash == config.hash());

  auto changed = config;
  changed.seed = 77;
  CHECK(changed.hash() != config.hash());
  auto moved = config;
  moved.out_dir = dir / "elsewhere";
  moved.threads = 3;
  CHECK(moved.hash() == config.hash());
}

TEST_CASE("failures are reported with their stage") {
  const auto dir = scratch("failure");
  auto config = small_config(dir);
  config.threads = 1;
  std::ofstream(config.inputs.obs, std::ios::app) << "S001,3,not-a-number\n";
  try {
    run_pipeline(config);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "load");
  }
  const auto manifest = read_json_file(config.out_dir / ("run-" + config.hash()) / artifact::kManifest);
  CHECK(manifest.at("status") == "incomplete");
  CHECK(manifest.at("failed_stage") == "load");
}

TEST_CASE("joint and two-stage pipelines agree") {
  const auto dir = scratch("variants");
  auto joint = small_config(dir);
  joint.threads = 1;
  auto two = joint;
  two.variant = EnsembleVariant::TwoStage;
  const auto rj = run_pipeline(joint);
  const auto rt = run_pipeline(two);
  CHECK(rj.run_dir != rt.run_dir);
  const auto find = [](const std::vector<EvalRow>& rows) {
    for (const auto& r : rows)
      if (r.method == "ensemble" && r.subset == "all") return r.report.rmse;
    return kMissing;
  };
  CHECK(std::abs(find(rj.eval) - find(rt.eval)) < 0.15);
}

TEST_CASE("configuration files round trip") {
  const auto dir = scratch("config");
  auto config = small_config(dir);
  config.variant = EnsembleVariant::TwoStage;
  config.input_derivation = FoldKind::SpatialLomo;
  config.target_grid = GridSpec{0, 0, 20, 6, 6, Source::Sat};
  write_json_file(dir / "config.json", config.to_json());
  const auto back = PipelineConfig::load(dir / "config.json");
  CHECK(back.hash() == config.hash());
  CHECK(back.surface_grid() == *config.target_grid);

  auto j = config.to_json();
  j["variant"] = "bma";
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = config.to_json();
  j.erase("inputs");
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
}
