#pragma once

#include <filesystem>

#include <json.hpp>

#include "pmfuse/downscaler.hpp"
#include "pmfuse/ensemble.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/mcmc.hpp"
#include "pmfuse/synth.hpp"

namespace pmfuse {

using Json = nlohmann::ordered_json;

Json to_json(const GridSpec& grid);
GridSpec grid_from_json(const Json& j, Source source);

/// Run-length and proposal settings; the seed is carried separately.
Json to_json(const MCMCConfig& config);
/// Missing keys keep the values of `base`.
MCMCConfig mcmc_from_json(const Json& j, MCMCConfig base = {});

Json to_json(const SceneConfig& config);
SceneConfig scene_from_json(const Json& j);

Json to_json(const DownscalerFit& fit);
DownscalerFit downscaler_fit_from_json(const Json& j);

Json to_json(const WeightPosterior& posterior);
WeightPosterior weight_posterior_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
/// Refuses to replace an existing file unless `overwrite`.
void write_json_file(const std::filesystem::path& path, const Json& j, bool overwrite = false);

}  // namespace pmfuse
