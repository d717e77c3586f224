#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string_view>
#include <vector>

#include "pmfuse/geo.hpp"

namespace pmfuse {

inline constexpr std::size_t kNumCovariates = 6;
inline constexpr std::array<std::string_view, kNumCovariates> kCovariateNames{
    "elev", "forest", "road", "emis", "wind", "temp"};

using Covariates = std::array<double, kNumCovariates>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// One monitor-day: measured PM2.5, the linked proxy values and covariates.
struct ObservationRecord {
  std::size_t site = 0;  ///< index into ObservationTable::sites
  int day = 0;
  double y = 0.0;
  double x_ctm = 0.0;
  double x_sat = kMissing;  ///< NaN when the retrieval is missing
  Covariates z{};

  double x(Source source) const { return source == Source::Ctm ? x_ctm : x_sat; }
};

struct ObservationTable {
  std::vector<Location> sites;
  std::vector<ObservationRecord> records;

  /// Throws DomainError on bad sites, duplicate (site, day) pairs, non-finite
  /// y or CTM values, or site indices out of range.
  void validate() const;
  /// Inclusive day span of the records.
  std::pair<int, int> day_range() const;
  /// Table restricted to the records with the given indices (sites kept).
  ObservationTable subset(std::span<const std::size_t> indices) const;
};

/// Normal predictive distribution of one source at one site-day.
struct PredictiveInput {
  double mu = 0.0;
  double var = 0.0;
  bool available = false;
};

/// An observed value with the predictive distributions from both sources,
/// the unit the ensemble works on.
struct EnsembleObservation {
  std::size_t site = 0;
  int day = 0;
  double y = 0.0;
  PredictiveInput ctm;
  PredictiveInput sat;

  bool both_available() const { return ctm.available && sat.available; }
};

/// Day-by-cell field of one gridded proxy. Missing cells are NaN.
struct GriddedField {
  GridSpec grid;
  int day_lo = 0;
  int n_days = 0;
  std::vector<double> values;

  GriddedField() = default;
  GriddedField(GridSpec spec, int first_day, int days)
      : grid(spec), day_lo(first_day), n_days(days),
        values(static_cast<std::size_t>(days) * spec.cell_count(), kMissing) {}

  bool has_day(int day) const { return day >= day_lo && day < day_lo + n_days; }
  double& at(int day, CellIndex cell) {
    return values[static_cast<std::size_t>(day - day_lo) * grid.cell_count() + grid.flat_index(cell)];
  }
  double at(int day, CellIndex cell) const {
    return values[static_cast<std::size_t>(day - day_lo) * grid.cell_count() + grid.flat_index(cell)];
  }
};

/// Covariates on the cells of a grid, either static or per day.
struct CovariateField {
  GridSpec grid;
  bool dynamic = false;
  int day_lo = 0;
  int n_days = 1;
  std::vector<Covariates> values;  ///< [day][cell] when dynamic, [cell] otherwise

  const Covariates& at(int day, std::size_t cell) const {
    if (!dynamic) return values[cell];
    return values[static_cast<std::size_t>(day - day_lo) * grid.cell_count() + cell];
  }
};

}  // namespace pmfuse
