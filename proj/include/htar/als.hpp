#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "htar/model.hpp"

namespace htar {

struct FitConfig {
  int max_sweeps = 200;
  double rel_loss_tol = 1e-7;
  int restarts = 3;
  /// Relative Tikhonov weight on every normal equation.
  double ridge_eps = 1e-10;
  std::uint64_t seed = 0;
  /// BIC multiplier used for the report.
  double phi = 1.0;
  /// Extra start tried before the random restarts; the lowest final loss wins (the warm start on ties).
  std::optional<HtarModel> warm;
};

struct FitReport {
  std::vector<double> loss_trajectory;  ///< loss after each sweep
  int sweeps_used = 0;
  bool converged = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  Index d = 0;
  double bic = 0.0;
  int restart = -1;  ///< winning restart, -1 for the warm start
};

struct FitResult {
  HtarModel model;
  FitReport report;
};

/// Mean squared residual norm over the samples of `data`.
double loss(const HtarModel& model, const LaggedData& data);

/// Number of component blocks: predictor stacks first (stack-major), then response stacks.
Index block_count(const HtarModel& model);

/// Exact least-squares update of one component with everything else fixed. Not orthonormalized.
void block_ls_update(HtarModel& model, const LaggedData& data, Index block, double ridge = 1e-10);

/// QR sweep of every stack; the trailing triangular factors move into the core.
/// Rank-deficient components are kept exactly (Householder Q is always orthonormal).
void ssvd_renormalize(HtarModel& model);

/// Least-squares core for the current loadings.
void update_core(HtarModel& model, const LaggedData& data, double ridge = 1e-10);

/// Random orthonormal loadings for `shape` and the least-squares core.
HtarModel initial_model(const ModelShape& shape, const LaggedData& data, Rng& rng, double ridge = 1e-10);

/// Model with the given dims and lag but no stacks (predicts zero).
HtarModel empty_model(const Shape& response_dims, const Shape& predictor_dims, Index lag);

/// ALS sweeps from `start` until the relative loss change drops below tolerance.
FitResult refine_als(const LaggedData& data, HtarModel start, const FitConfig& config);

/// Best of the warm start (if any) and `config.restarts` random starts.
/// If the warm start fails numerically, at least one random start is made.
FitResult fit_als(const LaggedData& data, const ModelShape& shape, const FitConfig& config);

} // namespace htar
