#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmfuse/cv_metrics.hpp"
#include "pmfuse/data.hpp"
#include "pmfuse/geo.hpp"

namespace pmfuse {

namespace fs = std::filesystem;

/// Provenance line written as the first line of every artifact:
///   # seed=<seed> config_hash=<hex>
struct ArtifactTag {
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Streaming reader for comma-separated files with a header row. Lines
/// starting with '#' and blank lines are skipped. Empty fields read as NaN
/// where missing values are allowed.
class CsvReader {
 public:
  explicit CsvReader(const fs::path& path);

  /// Index of a header column; SchemaError if absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  /// Advances to the next data row; false at end of file.
  bool next();

  std::string_view field(std::size_t col) const;
  double number(std::size_t col, bool allow_missing = false) const;
  long integer(std::size_t col) const;
  std::size_t line() const { return line_no_; }
  const std::string& file() const { return name_; }

 private:
  std::string name_;
  std::string buffer_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
  std::vector<std::string> header_;
  std::vector<std::string_view> fields_;
  bool read_line(std::string_view& out);
};

/// Buffered writer; refuses to replace an existing file unless `overwrite`.
class CsvWriter {
 public:
  CsvWriter(fs::path path, const std::vector<std::string_view>& header,
            const std::optional<ArtifactTag>& tag = std::nullopt, bool overwrite = false);
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;
  ~CsvWriter();

  CsvWriter& text(std::string_view s);
  /// Shortest representation that reads back to the same double; NaN is
  /// written as an empty field.
  CsvWriter& number(double v);
  CsvWriter& integer(long v);
  void end_row();
  /// Flushes to disk; called by the destructor if not called explicitly.
  void close();

 private:
  void separator();
  fs::path path_;
  std::string buffer_;
  bool row_start_ = true;
  bool closed_ = false;
};

struct ObsRow {
  std::string site_id;
  int day = 0;
  double pm25 = 0.0;
};

struct PredictiveRow {
  std::string site_id;
  int day = 0;
  Source source = Source::Ctm;
  PredictiveInput input;
};

struct WeightRow {
  std::string site_id;
  double w_mean = 0.0;
  double w_lo = 0.0;
  double w_hi = 0.0;
  double q_mean = 0.0;
};

struct SurfaceRow {
  int day = 0;
  int row = 0;
  int col = 0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double w = 0.0;
};

struct WeightSurfaceRow {
  int row = 0;
  int col = 0;
  double w_mean = 0.0;
  double w_lo = 0.0;
  double w_hi = 0.0;
};

struct EvalRow {
  std::string method;
  std::string estimation;
  std::string input_derivation;
  std::string subset;
  EvalReport report;
};

/// Covariates keyed by (site id, day).
using SiteCovariates = std::map<std::pair<std::string, int>, Covariates>;

std::vector<Location> load_monitors(const fs::path& path);
std::vector<ObsRow> load_obs(const fs::path& path);
/// Cells absent from the file, or with an empty value, are missing.
GriddedField load_grid(const fs::path& path, const GridSpec& grid);
SiteCovariates load_covariates(const fs::path& path);
/// Rows with an empty day are static; a file must be all static or all daily.
CovariateField load_grid_covariates(const fs::path& path, const GridSpec& grid);
std::vector<PredictiveRow> load_predictive(const fs::path& path);
std::vector<WeightRow> load_weights(const fs::path& path);
std::vector<SurfaceRow> load_surface(const fs::path& path);
std::vector<WeightSurfaceRow> load_weight_surface(const fs::path& path);
std::vector<EvalRow> load_eval(const fs::path& path);

struct WriteOptions {
  std::optional<ArtifactTag> tag;
  bool overwrite = false;
};

void write_monitors(const fs::path& path, std::span<const Location> sites, const WriteOptions& opt = {});
void write_obs(const fs::path& path, std::span<const ObsRow> rows, const WriteOptions& opt = {});
void write_grid(const fs::path& path, const GriddedField& field, const WriteOptions& opt = {});
void write_covariates(const fs::path& path, const ObservationTable& table, const WriteOptions& opt = {});
void write_grid_covariates(const fs::path& path, const CovariateField& field, const WriteOptions& opt = {});
void write_predictive(const fs::path& path, std::span<const PredictiveRow> rows, const WriteOptions& opt = {});
void write_weights(const fs::path& path, std::span<const WeightRow> rows, const WriteOptions& opt = {});
void write_surface(const fs::path& path, std::span<const SurfaceRow> rows, const WriteOptions& opt = {});
void write_weight_surface(const fs::path& path, std::span<const WeightSurfaceRow> rows,
                          const WriteOptions& opt = {});
void write_eval(const fs::path& path, std::span<const EvalRow> rows, const WriteOptions& opt = {});

/// Joins monitor locations, observations, both proxy grids and site
/// covariates into an observation table. Records whose day lies outside the
/// CTM field, or without a CTM value, raise DomainError.
ObservationTable build_observation_table(std::span<const Location> monitors, std::span<const ObsRow> obs,
                                         const GriddedField& ctm, const GriddedField& sat,
                                         const SiteCovariates& covariates);

/// Reads the tag line of an artifact, if present.
std::optional<ArtifactTag> read_artifact_tag(const fs::path& path);

}  // namespace pmfuse
