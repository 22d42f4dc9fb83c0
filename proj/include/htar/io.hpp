#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "htar/als.hpp"
#include "htar/model.hpp"
#include "htar/selection.hpp"

namespace htar {

/// "3-2-1", "3,2,1" or "321" (1-based).
ActionOrder parse_order(const std::string& text);

/// Writes through `body` into a temporary file next to `path`, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);

/**
 * Series text format:
 *   dims: p1 p2 ... pN
 *   T: count
 * followed by T lines of Q values in vec order. `NA` marks a missing value;
 * interior gaps are filled by linear interpolation along time.
 */
TensorSeries read_series(std::istream& in, const std::string& source = "<stream>");
TensorSeries read_series(const std::filesystem::path& path);
void write_series(std::ostream& out, const TensorSeries& series);
void write_series(const std::filesystem::path& path, const TensorSeries& series);

/// Versioned text serialization of a model; values are written with 17 significant digits.
void write_model(std::ostream& out, const HtarModel& model);
void write_model(const std::filesystem::path& path, const HtarModel& model);
HtarModel read_model(std::istream& in, const std::string& source = "<stream>");
HtarModel read_model(const std::filesystem::path& path);

/// `loss_trajectory` one row per sweep plus a summary header.
void write_fit_report(std::ostream& out, const FitReport& report);

/// What preprocess did, enough to map forecasts back to levels.
struct Transform {
  bool differenced = false;
  bool centered = false;
  Vector mean;          ///< subtracted per-entry mean (after differencing)
  Vector first_level;   ///< the dropped first observation when differenced
};

struct Preprocessed {
  TensorSeries series;
  Transform transform;
};

/// First differences (optional), then per-entry centering (optional).
Preprocessed preprocess(const TensorSeries& series, bool difference, bool center);

/// Inverse of preprocess on a whole series.
TensorSeries invert(const Transform& transform, const TensorSeries& series);

/// Level forecast from a forecast of the transformed series and the last observed level.
Vector to_level(const Transform& transform, const Vector& forecast, const Vector& previous_level);

struct RollingConfig {
  /// Hyperparameters of every refit. When unset they are chosen once on the
  /// first training window by lag search and boosting over `candidates`.
  std::optional<ModelShape> shape;
  ActionSetState candidates;
  SelectionConfig selection;
  FitConfig fit;
  /// Start the first fit from this model (its shape is used when `shape` is unset).
  std::optional<HtarModel> initial;
};

struct ForecastReport {
  Index lag = 0;
  std::vector<Index> targets;   ///< 0-based index of each forecast observation
  std::vector<double> squared;  ///< ||y - y_hat||^2 per target
  std::vector<double> absolute; ///< sum |y - y_hat| per target
  std::vector<double> null_squared;
  double msfe = 0.0;  ///< sum of squared errors over all test entries
  double mafe = 0.0;  ///< sum of absolute errors over all test entries
  double null_msfe = 0.0;
  double null_mafe = 0.0;
};

/// For every t >= split - 1 with t + 1 < T: refit on observations 0..t (warm
/// from the previous fit) and forecast t + 1. The null forecast is zero.
ForecastReport rolling_forecast(const TensorSeries& series, Index split, const RollingConfig& config);

void write_forecast_report(std::ostream& out, const ForecastReport& report);

} // namespace htar
