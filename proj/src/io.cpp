#include "pmfuse/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "pmfuse/error.hpp"

namespace pmfuse {

CsvReader::CsvReader(const fs::path& path) : name_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(name_, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  buffer_ = std::move(ss).str();
  std::string_view line;
  if (!read_line(line)) throw ParseError(name_, 0, "missing header row");
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    header_.emplace_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
}

bool CsvReader::read_line(std::string_view& out) {
  while (pos_ < buffer_.size()) {
    std::size_t end = buffer_.find('\n', pos_);
    if (end == std::string::npos) end = buffer_.size();
    std::string_view line(buffer_.data() + pos_, end - pos_);
    pos_ = end + 1;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    out = line;
    return true;
  }
  return false;
}

std::size_t CsvReader::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw SchemaError(name_, std::string(name));
}

bool CsvReader::has_column(std::string_view name) const {
  for (const auto& h : header_) {
    if (h == name) return true;
  }
  return false;
}

bool CsvReader::next() {
  std::string_view line;
  if (!read_line(line)) return false;
  fields_.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields_.push_back(line.substr(start));
      break;
    }
    fields_.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (fields_.size() != header_.size()) {
    throw ParseError(name_, line_no_,
                     "expected " + std::to_string(header_.size()) + " fields, found " +
                         std::to_string(fields_.size()));
  }
  return true;
}

std::string_view CsvReader::field(std::size_t col) const { return fields_.at(col); }

double CsvReader::number(std::size_t col, bool allow_missing) const {
  const std::string_view f = field(col);
  if (f.empty()) {
    if (allow_missing) return kMissing;
    throw ParseError(name_, line_no_, "missing value in column '" + header_[col] + "'");
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
    throw ParseError(name_, line_no_,
                     "invalid number '" + std::string(f) + "' in column '" + header_[col] + "'");
  }
  return v;
}

long CsvReader::integer(std::size_t col) const {
  const std::string_view f = field(col);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
    throw ParseError(name_, line_no_,
                     "invalid integer '" + std::string(f) + "' in column '" + header_[col] + "'");
  }
  return v;
}

CsvWriter::CsvWriter(fs::path path, const std::vector<std::string_view>& header,
                     const std::optional<ArtifactTag>& tag, bool overwrite)
    : path_(std::move(path)) {
  if (!overwrite && fs::exists(path_)) {
    throw ConfigError("refusing to overwrite existing file " + path_.string());
  }
  if (tag) {
    buffer_ += "# seed=" + std::to_string(tag->seed) + " config_hash=" + tag->config_hash + "\n";
  }
  for (auto h : header) text(h);
  end_row();
}

CsvWriter::~CsvWriter() {
  try {
    close();
  } catch (...) {
  }
}

void CsvWriter::separator() {
  if (!row_start_) buffer_.push_back(',');
  row_start_ = false;
}

CsvWriter& CsvWriter::text(std::string_view s) {
  separator();
  buffer_.append(s);
  return *this;
}

CsvWriter& CsvWriter::number(double v) {
  separator();
  if (std::isnan(v)) return *this;
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  buffer_.append(buf, ptr);
  return *this;
}

CsvWriter& CsvWriter::integer(long v) {
  separator();
  char buf[24];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  buffer_.append(buf, ptr);
  return *this;
}

void CsvWriter::end_row() {
  buffer_.push_back('\n');
  row_start_ = true;
}

void CsvWriter::close() {
  if (closed_) return;
  closed_ = true;
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (!out) throw Error("failed to write " + path_.string());
}

namespace {

int to_int(long v, const CsvReader& r, std::string_view what) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ParseError(r.file(), r.line(), std::string(what) + " out of range");
  }
  return static_cast<int>(v);
}

void check_cell(const GridSpec& grid, int row, int col, const CsvReader& r) {
  if (row < 0 || row >= grid.n_rows || col < 0 || col >= grid.n_cols) {
    throw ParseError(r.file(), r.line(),
                     "cell (" + std::to_string(row) + ", " + std::to_string(col) + ") outside the grid");
  }
}

}  // namespace

std::vector<Location> load_monitors(const fs::path& path) {
  CsvReader r(path);
  const auto id = r.column("site_id");
  const auto x = r.column("x_km");
  const auto y = r.column("y_km");
  std::vector<Location> out;
  while (r.next()) out.push_back({std::string(r.field(id)), r.number(x), r.number(y)});
  validate_locations(out);
  return out;
}

std::vector<ObsRow> load_obs(const fs::path& path) {
  CsvReader r(path);
  const auto id = r.column("site_id");
  const auto day = r.column("day");
  const auto pm = r.column("pm25");
  std::vector<ObsRow> out;
  while (r.next()) {
    out.push_back({std::string(r.field(id)), to_int(r.integer(day), r, "day"), r.number(pm)});
  }
  return out;
}

GriddedField load_grid(const fs::path& path, const GridSpec& grid) {
  grid.validate();
  CsvReader r(path);
  const auto day_c = r.column("day");
  const auto row_c = r.column("row");
  const auto col_c = r.column("col");
  const auto val_c = r.column("value");
  struct Cell {
    int day;
    int row;
    int col;
    double value;
  };
  std::vector<Cell> cells;
  int lo = std::numeric_limits<int>::max();
  int hi = std::numeric_limits<int>::min();
  while (r.next()) {
    Cell c{to_int(r.integer(day_c), r, "day"), to_int(r.integer(row_c), r, "row"),
           to_int(r.integer(col_c), r, "col"), r.number(val_c, true)};
    check_cell(grid, c.row, c.col, r);
    lo = std::min(lo, c.day);
    hi = std::max(hi, c.day);
    cells.push_back(c);
  }
  if (cells.empty()) throw EmptyInput(path.string() + ": grid file has no rows");
  GriddedField field(grid, lo, hi - lo + 1);
  for (const auto& c : cells) field.at(c.day, {c.row, c.col}) = c.value;
  return field;
}

SiteCovariates load_covariates(const fs::path& path) {
  CsvReader r(path);
  const auto id = r.column("site_id");
  const auto day = r.column("day");
  std::array<std::size_t, kNumCovariates> cols{};
  for (std::size_t j = 0; j < kNumCovariates; ++j) cols[j] = r.column(kCovariateNames[j]);
  SiteCovariates out;
  while (r.next()) {
    Covariates z{};
    for (std::size_t j = 0; j < kNumCovariates; ++j) z[j] = r.number(cols[j]);
    out[{std::string(r.field(id)), to_int(r.integer(day), r, "day")}] = z;
  }
  return out;
}

CovariateField load_grid_covariates(const fs::path& path, const GridSpec& grid) {
  grid.validate();
  CsvReader r(path);
  const auto day_c = r.column("day");
  const auto row_c = r.column("row");
  const auto col_c = r.column("col");
  std::array<std::size_t, kNumCovariates> cols{};
  for (std::size_t j = 0; j < kNumCovariates; ++j) cols[j] = r.column(kCovariateNames[j]);
  struct Cell {
    int day;
    std::size_t flat;
    Covariates z;
  };
  std::vector<Cell> cells;
  bool any_static = false;
  bool any_daily = false;
  int lo = std::numeric_limits<int>::max();
  int hi = std::numeric_limits<int>::min();
  while (r.next()) {
    Cell c{};
    if (r.field(day_c).empty()) {
      any_static = true;
    } else {
      any_daily = true;
      c.day = to_int(r.integer(day_c), r, "day");
      lo = std::min(lo, c.day);
      hi = std::max(hi, c.day);
    }
    const int row = to_int(r.integer(row_c), r, "row");
    const int col = to_int(r.integer(col_c), r, "col");
    check_cell(grid, row, col, r);
    c.flat = grid.flat_index({row, col});
    for (std::size_t j = 0; j < kNumCovariates; ++j) c.z[j] = r.number(cols[j]);
    if (any_static && any_daily) {
      throw ParseError(r.file(), r.line(), "static and daily covariate rows are mixed");
    }
    cells.push_back(c);
  }
  if (cells.empty()) throw EmptyInput(path.string() + ": covariate grid has no rows");
  CovariateField field;
  field.grid = grid;
  field.dynamic = any_daily;
  field.day_lo = any_daily ? lo : 0;
  field.n_days = any_daily ? hi - lo + 1 : 1;
  Covariates nan_row;
  nan_row.fill(kMissing);
  field.values.assign(static_cast<std::size_t>(field.n_days) * grid.cell_count(), nan_row);
  for (const auto& c : cells) {
    const std::size_t offset = any_daily ? static_cast<std::size_t>(c.day - lo) * grid.cell_count() : 0;
    field.values[offset + c.flat] = c.z;
  }
  return field;
}

std::vector<PredictiveRow> load_predictive(const fs::path& path) {
  CsvReader r(path);
  const auto id = r.column("site_id");
  const auto day = r.column("day");
  const auto src = r.column("source");
  const auto mu = r.column("mu");
  const auto var = r.column("var");
  std::vector<PredictiveRow> out;
  while (r.next()) {
    PredictiveRow row;
    row.site_id = std::string(r.field(id));
    row.day = to_int(r.integer(day), r, "day");
    try {
      row.source = parse_source(r.field(src));
    } catch (const DomainError& e) {
      throw ParseError(r.file(), r.line(), e.what());
    }
    const double m = r.number(mu, true);
    const double v = r.number(var, true);
    if (is_missing(m) != is_missing(v)) throw ParseError(r.file(), r.line(), "mu and var must both be present");
    row.input = {is_missing(m) ? 0.0 : m, is_missing(v) ? 0.0 : v, !is_missing(m)};
    out.push_back(row);
  }
  return out;
}

std::vector<WeightRow> load_weights(const fs::path& path) {
  CsvReader r(path);
  const auto id = r.column("site_id");
  const auto m = r.column("w_mean");
  const auto lo = r.column("w_lo");
  const auto hi = r.column("w_hi");
  const auto q = r.column("q_mean");
  std::vector<WeightRow> out;
  while (r.next()) {
    out.push_back({std::string(r.field(id)), r.number(m), r.number(lo), r.number(hi), r.number(q)});
  }
  return out;
}

std::vector<SurfaceRow> load_surface(const fs::path& path) {
  CsvReader r(path);
  const std::array<std::size_t, 8> c{r.column("day"), r.column("row"),  r.column("col"),
                                     r.column("mean"), r.column("sd"), r.column("q025"),
                                     r.column("q975"), r.column("w")};
  std::vector<SurfaceRow> out;
  while (r.next()) {
    out.push_back({to_int(r.integer(c[0]), r, "day"), to_int(r.integer(c[1]), r, "row"),
                   to_int(r.integer(c[2]), r, "col"), r.number(c[3]), r.number(c[4]), r.number(c[5]),
                   r.number(c[6]), r.number(c[7])});
  }
  return out;
}

std::vector<WeightSurfaceRow> load_weight_surface(const fs::path& path) {
  CsvReader r(path);
  const std::array<std::size_t, 5> c{r.column("row"), r.column("col"), r.column("w_mean"),
                                     r.column("w_lo"), r.column("w_hi")};
  std::vector<WeightSurfaceRow> out;
  while (r.next()) {
    out.push_back({to_int(r.integer(c[0]), r, "row"), to_int(r.integer(c[1]), r, "col"), r.number(c[2]),
                   r.number(c[3]), r.number(c[4])});
  }
  return out;
}

std::vector<EvalRow> load_eval(const fs::path& path) {
  CsvReader r(path);
  const std::array<std::size_t, 9> c{r.column("method"), r.column("estimation"),
                                     r.column("input_derivation"), r.column("subset"),
                                     r.column("n"),      r.column("rmse"),
                                     r.column("coverage95"), r.column("avg_posterior_sd"),
                                     r.column("r2")};
  std::vector<EvalRow> out;
  while (r.next()) {
    EvalRow row;
    row.method = r.field(c[0]);
    row.estimation = r.field(c[1]);
    row.input_derivation = r.field(c[2]);
    row.subset = r.field(c[3]);
    row.report.n = static_cast<std::size_t>(r.integer(c[4]));
    row.report.rmse = r.number(c[5], true);
    row.report.coverage95 = r.number(c[6], true);
    row.report.avg_posterior_sd = r.number(c[7], true);
    row.report.r2 = r.number(c[8], true);
    out.push_back(row);
  }
  return out;
}

void write_monitors(const fs::path& path, std::span<const Location> sites, const WriteOptions& opt) {
  CsvWriter w(path, {"site_id", "x_km", "y_km"}, opt.tag, opt.overwrite);
  for (const auto& s : sites) {
    w.text(s.id).number(s.x).number(s.y);
    w.end_row();
  }
  w.close();
}

void write_obs(const fs::path& path, std::span<const ObsRow> rows, const WriteOptions& opt) {
  CsvWriter w(path, {"site_id", "day", "pm25"}, opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.text(r.site_id).integer(r.day).number(r.pm25);
    w.end_row();
  }
  w.close();
}

void write_grid(const fs::path& path, const GriddedField& field, const WriteOptions& opt) {
  CsvWriter w(path, {"day", "row", "col", "value"}, opt.tag, opt.overwrite);
  for (int t = 0; t < field.n_days; ++t) {
    const int day = field.day_lo + t;
    for (int r = 0; r < field.grid.n_rows; ++r) {
      for (int c = 0; c < field.grid.n_cols; ++c) {
        w.integer(day).integer(r).integer(c).number(field.at(day, {r, c}));
        w.end_row();
      }
    }
  }
  w.close();
}

void write_covariates(const fs::path& path, const ObservationTable& table, const WriteOptions& opt) {
  std::vector<std::string_view> header{"site_id", "day"};
  header.insert(header.end(), kCovariateNames.begin(), kCovariateNames.end());
  CsvWriter w(path, header, opt.tag, opt.overwrite);
  for (const auto& rec : table.records) {
    w.text(table.sites[rec.site].id).integer(rec.day);
    for (double v : rec.z) w.number(v);
    w.end_row();
  }
  w.close();
}

void write_grid_covariates(const fs::path& path, const CovariateField& field, const WriteOptions& opt) {
  std::vector<std::string_view> header{"day", "row", "col"};
  header.insert(header.end(), kCovariateNames.begin(), kCovariateNames.end());
  CsvWriter w(path, header, opt.tag, opt.overwrite);
  const int n_days = field.dynamic ? field.n_days : 1;
  for (int t = 0; t < n_days; ++t) {
    for (int r = 0; r < field.grid.n_rows; ++r) {
      for (int c = 0; c < field.grid.n_cols; ++c) {
        if (field.dynamic) {
          w.integer(field.day_lo + t);
        } else {
          w.text("");
        }
        w.integer(r).integer(c);
        for (double v : field.at(field.day_lo + t, field.grid.flat_index({r, c}))) w.number(v);
        w.end_row();
      }
    }
  }
  w.close();
}

void write_predictive(const fs::path& path, std::span<const PredictiveRow> rows, const WriteOptions& opt) {
  CsvWriter w(path, {"site_id", "day", "source", "mu", "var"}, opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.text(r.site_id).integer(r.day).text(to_string(r.source));
    if (r.input.available) {
      w.number(r.input.mu).number(r.input.var);
    } else {
      w.text("").text("");
    }
    w.end_row();
  }
  w.close();
}

void write_weights(const fs::path& path, std::span<const WeightRow> rows, const WriteOptions& opt) {
  CsvWriter w(path, {"site_id", "w_mean", "w_lo", "w_hi", "q_mean"}, opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.text(r.site_id).number(r.w_mean).number(r.w_lo).number(r.w_hi).number(r.q_mean);
    w.end_row();
  }
  w.close();
}

void write_surface(const fs::path& path, std::span<const SurfaceRow> rows, const WriteOptions& opt) {
  CsvWriter w(path, {"day", "row", "col", "mean", "sd", "q025", "q975", "w"}, opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.integer(r.day).integer(r.row).integer(r.col).number(r.mean).number(r.sd).number(r.q025);
    w.number(r.q975).number(r.w);
    w.end_row();
  }
  w.close();
}

void write_weight_surface(const fs::path& path, std::span<const WeightSurfaceRow> rows,
                          const WriteOptions& opt) {
  CsvWriter w(path, {"row", "col", "w_mean", "w_lo", "w_hi"}, opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.integer(r.row).integer(r.col).number(r.w_mean).number(r.w_lo).number(r.w_hi);
    w.end_row();
  }
  w.close();
}

void write_eval(const fs::path& path, std::span<const EvalRow> rows, const WriteOptions& opt) {
  CsvWriter w(path,
              {"method", "estimation", "input_derivation", "subset", "n", "rmse", "coverage95",
               "avg_posterior_sd", "r2"},
              opt.tag, opt.overwrite);
  for (const auto& r : rows) {
    w.text(r.method).text(r.estimation).text(r.input_derivation).text(r.subset);
    w.integer(static_cast<long>(r.report.n)).number(r.report.rmse).number(r.report.coverage95);
    w.number(r.report.avg_posterior_sd).number(r.report.r2);
    w.end_row();
  }
  w.close();
}

ObservationTable build_observation_table(std::span<const Location> monitors, std::span<const ObsRow> obs,
                                         const GriddedField& ctm, const GriddedField& sat,
                                         const SiteCovariates& covariates) {
  ObservationTable table;
  table.sites.assign(monitors.begin(), monitors.end());
  validate_locations(table.sites);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < table.sites.size(); ++i) index[table.sites[i].id] = i;
  const GridLink link(table.sites, ctm.grid, sat.grid);
  table.records.reserve(obs.size());
  for (const auto& o : obs) {
    const auto it = index.find(o.site_id);
    if (it == index.end()) throw DomainError("observation for unknown monitor '" + o.site_id + "'");
    const std::size_t s = it->second;
    const std::string where = "monitor '" + o.site_id + "' day " + std::to_string(o.day);
    if (!ctm.has_day(o.day)) throw DomainError(where + ": no CTM field for that day");
    ObservationRecord rec;
    rec.site = s;
    rec.day = o.day;
    rec.y = o.pm25;
    rec.x_ctm = ctm.at(o.day, link.ctm_cell(s));
    if (is_missing(rec.x_ctm)) throw DomainError(where + ": CTM value missing");
    rec.x_sat = sat.has_day(o.day) ? sat.at(o.day, link.sat_cell(s)) : kMissing;
    const auto cov = covariates.find({o.site_id, o.day});
    if (cov == covariates.end()) throw DomainError(where + ": no covariates");
    rec.z = cov->second;
    table.records.push_back(rec);
  }
  table.validate();
  return table;
}

std::optional<ArtifactTag> read_artifact_tag(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# seed=", 0) != 0) return std::nullopt;
  std::istringstream ss(line.substr(2));
  std::string seed_part;
  std::string hash_part;
  ss >> seed_part >> hash_part;
  ArtifactTag tag;
  tag.seed = std::stoull(seed_part.substr(5));
  if (hash_part.rfind("config_hash=", 0) == 0) tag.config_hash = hash_part.substr(12);
  return tag;
}

}  // namespace pmfuse
