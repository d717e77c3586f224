#include <doctest.h>

#include <chrono>
#include <cmath>
#include <fstream>

#include "pmfuse/error.hpp"
#include "pmfuse/io.hpp"
#include "pmfuse/pipeline.hpp"
#include "pmfuse/random.hpp"
#include "pmfuse/serialize.hpp"

using namespace pmfuse;

namespace {

/// Fresh empty directory under the system temp dir.
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pmfuse_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("surface round trip") {
  const auto dir = scratch("surface");
  Rng rng(401);
  std::vector<SurfaceRow> rows;
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 30; ++c) {
      const double mean = rng.normal(12, 3), sd = rng.uniform() * 2;
      rows.push_back({7, r, c, mean, sd, mean - 1.96 * sd, mean + 1.96 * sd, rng.uniform()});
    }
  const ArtifactTag tag{42, "00ff00ff00ff00ff"};
  write_surface(dir / "surface.csv", rows, {tag, false});
  const auto back = load_surface(dir / "surface.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].day == rows[i].day);
    CHECK(back[i].row == rows[i].row);
    CHECK(back[i].col == rows[i].col);
    CHECK(back[i].mean == rows[i].mean);
    CHECK(back[i].sd == rows[i].sd);
    CHECK(back[i].q025 == rows[i].q025);
    CHECK(back[i].q975 == rows[i].q975);
    CHECK(back[i].w == rows[i].w);
  }
  const auto read_tag = read_artifact_tag(dir / "surface.csv");
  REQUIRE(read_tag);
  CHECK(read_tag->seed == 42);
  CHECK(read_tag->config_hash == "00ff00ff00ff00ff");

  std::ifstream in(dir / "surface.csv");
  std::string first, header;
  std::getline(in, first);
  std::getline(in, header);
  CHECK(first == "# seed=42 config_hash=00ff00ff00ff00ff");
  CHECK(header == "day,row,col,mean,sd,q025,q975,w");
}

TEST_CASE("existing files are not overwritten") {
  const auto dir = scratch("overwrite");
  std::vector<WeightRow> rows{{"S1", 0.5, 0.1, 0.9, 0.0}};
  write_weights(dir / "w.csv", rows);
  CHECK_THROWS_AS(write_weights(dir / "w.csv", rows), ConfigError);
  rows[0].w_mean = 0.6;
  write_weights(dir / "w.csv", rows, {std::nullopt, true});
  CHECK(load_weights(dir / "w.csv")[0].w_mean == 0.6);
  CHECK_THROWS_AS(write_json_file(dir / "w.csv", Json::object()), ConfigError);
}

TEST_CASE("predictive round trip encodes unavailable inputs as empty fields") {
  const auto dir = scratch("predictive");
  std::vector<PredictiveRow> rows{{"S1", 3, Source::Ctm, {12.5, 1.25, true}},
                                  {"S1", 3, Source::Sat, {0.0, 0.0, false}},
                                  {"S2", 4, Source::Sat, {0.1 + 0.2, 1e-300, true}}};
  write_predictive(dir / "p.csv", rows);
  const auto back = load_predictive(dir / "p.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[0].input.mu == 12.5);
  CHECK(back[0].input.available);
  CHECK(back[1].source == Source::Sat);
  CHECK_FALSE(back[1].input.available);
  CHECK(back[2].input.mu == 0.1 + 0.2);
  CHECK(back[2].input.var == 1e-300);
  std::ifstream in(dir / "p.csv");
  std::string header, l1, l2;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(header == "site_id,day,source,mu,var");
  CHECK(l2 == "S1,3,sat,,");
}

TEST_CASE("parse errors carry the line number") {
  const auto dir = scratch("parse");
  write_text(dir / "obs.csv", "site_id,day,pm25\nS1,1,10.5\nS1,2,abc\nS1,3,11\n");
  try {
    load_obs(dir / "obs.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write_text(dir / "short.csv", "site_id,day,pm25\nS1,1\n");
  CHECK_THROWS_AS(load_obs(dir / "short.csv"), ParseError);
  write_text(dir / "inf.csv", "site_id,day,pm25\nS1,1,inf\n");
  CHECK_THROWS_AS(load_obs(dir / "inf.csv"), ParseError);
  write_text(dir / "empty_pm.csv", "site_id,day,pm25\nS1,1,\n");
  CHECK_THROWS_AS(load_obs(dir / "empty_pm.csv"), ParseError);
}

TEST_CASE("schema errors name the missing column") {
  const auto dir = scratch("schema");
  write_text(dir / "monitors.csv", "site_id,x_km\nS1,1.0\n");
  try {
    load_monitors(dir / "monitors.csv");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.column() == "y_km");
  }
}

TEST_CASE("grids with missing cells") {
  const auto dir = scratch("grid");
  const GridSpec g{0, 0, 6, 2, 3, Source::Sat};
  write_text(dir / "grid.csv", "day,row,col,value\n1,0,0,0.2\n1,0,1,\n1,1,2,0.4\n2,0,0,0.25\n");
  const auto field = load_grid(dir / "grid.csv", g);
  CHECK(field.day_lo == 1);
  CHECK(field.n_days == 2);
  CHECK(field.at(1, {0, 0}) == 0.2);
  CHECK(is_missing(field.at(1, {0, 1})));
  CHECK(field.at(1, {1, 2}) == 0.4);
  CHECK(is_missing(field.at(2, {1, 2})));

  write_grid(dir / "grid2.csv", field);
  const auto again = load_grid(dir / "grid2.csv", g);
  for (std::size_t i = 0; i < field.values.size(); ++i)
    CHECK((again.values[i] == field.values[i] || (is_missing(again.values[i]) && is_missing(field.values[i]))));

  write_text(dir / "outside.csv", "day,row,col,value\n1,5,0,0.2\n");
  CHECK_THROWS(load_grid(dir / "outside.csv", g));
}

TEST_CASE("grid covariates are static or daily, not both") {
  const auto dir = scratch("gridcov");
  const GridSpec g{0, 0, 6, 1, 2, Source::Sat};
  write_text(dir / "static.csv",
             "day,row,col,elev,forest,road,emis,wind,temp\n,0,0,1,2,3,4,5,6\n,0,1,6,5,4,3,2,1\n");
  const auto f = load_grid_covariates(dir / "static.csv", g);
  CHECK_FALSE(f.dynamic);
  CHECK(f.at(99, 1)[0] == 6.0);
  write_text(dir / "mixed.csv",
             "day,row,col,elev,forest,road,emis,wind,temp\n,0,0,1,2,3,4,5,6\n3,0,1,6,5,4,3,2,1\n");
  CHECK_THROWS(load_grid_covariates(dir / "mixed.csv", g));
}

TEST_CASE("observation table joins monitors, grids and covariates") {
  const auto dir = scratch("join");
  const GridSpec ctm{0, 0, 12, 2, 2, Source::Ctm};
  const GridSpec sat{0, 0, 6, 4, 4, Source::Sat};
  GriddedField c(ctm, 1, 2), s(sat, 1, 2);
  for (auto& v : c.values) v = 10.0;
  s.at(1, {0, 0}) = 0.2;
  const std::vector<Location> monitors{{"A", 3, 3}, {"B", 20, 20}};
  const std::vector<ObsRow> obs{{"A", 1, 11.0}, {"B", 2, 9.0}};
  SiteCovariates cov;
  cov[{"A", 1}] = {1, 2, 3, 4, 5, 6};
  cov[{"B", 2}] = {6, 5, 4, 3, 2, 1};
  const auto table = build_observation_table(monitors, obs, c, s, cov);
  REQUIRE(table.records.size() == 2);
  CHECK(table.records[0].x_sat == 0.2);
  CHECK(is_missing(table.records[1].x_sat));
  CHECK(table.records[1].z[0] == 6.0);
  const std::vector<ObsRow> unknown{{"C", 1, 1.0}};
  CHECK_THROWS(build_observation_table(monitors, unknown, c, s, cov));
  const std::vector<ObsRow> late{{"A", 9, 1.0}};
  CHECK_THROWS(build_observation_table(monitors, late, c, s, cov));
}

TEST_CASE("a 16,063-cell surface loads in under a second") {
  const auto dir = scratch("bench");
  std::vector<SurfaceRow> rows;
  Rng rng(409);
  for (int i = 0; i < 16063; ++i) {
    const double m = rng.normal(12, 3);
    rows.push_back({1, i / 127, i % 127, m, 1.5, m - 3, m + 3, rng.uniform()});
  }
  write_surface(dir / "surface.csv", rows);
  const auto start = std::chrono::steady_clock::now();
  const auto back = load_surface(dir / "surface.csv");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(back.size() == 16063);
  CHECK(seconds < 1.0);
}

TEST_CASE("json serialization round trips") {
  SceneConfig scene;
  scene.n_sites = 17;
  scene.weight_pattern = WeightPattern::HalfSplit;
  scene.gamma[2] = 9.5;
  const auto back = scene_from_json(to_json(scene));
  CHECK(back.n_sites == 17);
  CHECK(back.weight_pattern == WeightPattern::HalfSplit);
  CHECK(back.gamma[2] == 9.5);

  MCMCConfig m;
  m.n_iter = 77;
  m.burn_in = 7;
  m.kappa_w = 0.123;
  const auto mb = mcmc_from_json(to_json(m));
  CHECK(mb.n_iter == 77);
  CHECK(mb.burn_in == 7);
  CHECK(mb.kappa_w == 0.123);

  WeightPosterior post;
  post.sites = {{"A", 1, 2}, {"B", 3, 4}};
  post.field_sites = post.sites;
  post.summaries = {{0.7, 0.5, 0.9, 0.8, 0.7}, {0.2, 0.1, 0.3, -1.4, 0.2}};
  post.samples.push_back({Eigen::Vector2d(0.3, -0.4), 1.5, 210.0});
  const auto pb = weight_posterior_from_json(to_json(post));
  CHECK(pb.sites[1].id == "B");
  CHECK(pb.summaries[1].q_mean == -1.4);
  CHECK(pb.samples[0].q(1) == -0.4);
  CHECK(pb.samples[0].rho == 210.0);
}
