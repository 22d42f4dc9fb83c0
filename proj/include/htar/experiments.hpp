#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "htar/model.hpp"

namespace htar {

enum class StudyKind { scaling_a, scaling_b, scaling_c, misspec };

const char* study_name(StudyKind kind);
StudyKind parse_study(const std::string& name);

struct StudySpec {
  StudyKind kind = StudyKind::scaling_c;
  int replications = 20;
  std::uint64_t seed = 0;
  std::vector<NoiseKind> noises{NoiseKind::iid_uniform, NoiseKind::iid_gaussian, NoiseKind::correlated_gaussian};
  /// Axis values; empty means the default grid of the study.
  std::vector<Index> grid;
  double rel_loss_tol = 1e-6;

  // Misspecification study only.
  Index true_rank = 2;
  Index samples = 1000;
  Index test_samples = 1000;
  int restarts = 1;

  void validate() const;
  std::vector<Index> axis() const;
};

/// One fit: the error of replication `replication` at one grid point.
struct StudyRow {
  std::string setting;
  std::string noise;
  Index axis_value = 0;
  int replication = 0;
  double value = 0.0;
};

struct StudyPoint {
  std::string setting;
  std::string noise;
  Index axis_value = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct StudyTable {
  std::string value_name;  ///< CSV header of the value column
  std::vector<StudyRow> rows;

  /// Mean and standard error per (setting, noise, axis value), in first-seen order.
  std::vector<StudyPoint> summary() const;
  /// Same grouping with the mean of the squared values.
  std::vector<StudyPoint> squared_summary() const;
};

/// Scaling study: AR(2) on q x q x q tensors with two stacks per side
/// (predictor ranks r, response ranks r - 1), fit with the true hyperparameters
/// from the truth. Value: ||A_hat - A||_F.
StudyTable run_scaling_study(const StudySpec& spec);

/// Misspecification study: regression of the true-order features of
/// 6 x 6 x 6 predictors, refit under every order and working rank. Value: held-out MSE per entry.
StudyTable run_misspec_study(const StudySpec& spec);

StudyTable run_study(const StudySpec& spec);

/// Setting a, b or c of the scaling study at one grid point.
ModelShape scaling_shape(StudyKind kind, Index axis_value);
Index scaling_samples(StudyKind kind, Index axis_value);

/// ||coef(a) - coef(b)||_F computed from loading cross-Grams (no Q x QL matrices).
double coefficient_distance(const HtarModel& a, const HtarModel& b);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line of log(value) on log(axis). Needs three distinct positive axis values.
RateFit fit_rate_slope(const std::vector<double>& axis, const std::vector<double>& value);

/// fit_rate_slope over the squared errors of one setting and noise.
RateFit fit_rate_slope(const StudyTable& table, const std::string& setting, const std::string& noise);

void write_rows_csv(const StudyTable& table, std::ostream& out);
void write_summary_csv(const StudyTable& table, std::ostream& out);

} // namespace htar
