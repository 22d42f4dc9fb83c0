#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "htar/als.hpp"
#include "htar/model.hpp"

namespace htar {

struct SelectionConfig {
  /// One random start, loss tolerance well below a BIC tie.
  static FitConfig selection_fit() {
    FitConfig fit;
    fit.restarts = 1;
    fit.max_sweeps = 100;
    fit.rel_loss_tol = 1e-6;
    return fit;
  }

  double phi = 1.0;        ///< BIC multiplier
  int max_iterations = 10;  ///< boosting rounds V_max
  Index max_lag = 3;       ///< lag grid {1..max_lag}
  FitConfig weak = selection_fit();  ///< weak-learner fits
  FitConfig full = selection_fit();  ///< full refits (warm-started from the previous round)
  double rank_tol = kDefaultRankTol;
  /// Two BICs tie when they differ by at most tie_tol * samples.
  double tie_tol = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Candidate orders of both sides and how many unit ranks each has collected.
struct ActionSetState {
  std::vector<ActionOrder> response_candidates;
  std::vector<ActionOrder> predictor_candidates;
  std::vector<Index> response_counts;
  std::vector<Index> predictor_counts;
  int iteration = 0;

  ActionSetState() = default;
  ActionSetState(std::vector<ActionOrder> response_candidates, std::vector<ActionOrder> predictor_candidates);
  void validate() const;
  Index active_pairs() const;
};

/// Shape of the model with count c on order k given ranks c in every mode.
ModelShape shape_for(const ActionSetState& state, const Shape& response_dims, const Shape& predictor_dims, Index lag);

/// Default candidates: all orders when the tensor has at most four modes.
std::vector<ActionOrder> default_candidates(Index modes);

struct WeakLearner {
  HtarModel model;
  double loss = 0.0;
  double bic = 0.0;
};

/// All-ones-rank model of the residuals on the lagged predictors of `data`.
/// With `warm` (same orders), ALS runs from it alone instead of random starts.
WeakLearner fit_weak_learner(const Matrix& residuals, const LaggedData& data, const ActionOrder& response_order,
                             const ActionOrder& predictor_order, const SelectionConfig& config,
                             std::uint64_t seed, const std::optional<HtarModel>& warm = std::nullopt);

struct SelectionResult {
  ActionSetState state;
  HtarModel model;
  double loss = 0.0;
  double bic = 0.0;
  std::vector<double> bic_trajectory;  ///< null model first, then each accepted round
};

/// Boosting over order pairs. Weak learners of every pair are ranked by BIC;
/// pairs within the tie tolerance are ranked by the refit BIC after one more
/// unit on that pair, then after two. Stops when the refit BIC does not drop.
SelectionResult boost_select(const LaggedData& data, ActionSetState candidates, const SelectionConfig& config);

struct RankReduction {
  HtarModel model;
  Index params_before = 0;
  Index params_after = 0;
  int merges = 0;
};

/// Greedily merges stacks into other active stacks (re-expressed under the
/// target order) while that lowers the parameter count. The core is carried
/// through the feature maps, so predictions are preserved up to `tol`.
RankReduction rank_reduce(const HtarModel& model, double tol = kDefaultRankTol);

struct LagSelection {
  Index lag = 1;
  std::vector<double> bic;  ///< per lag 1..max_lag
  SelectionResult best;
};

/// Runs boost_select for every lag on a common sample and keeps the lowest BIC (ties to the smaller lag).
LagSelection select_lag(const TensorSeries& series, const ActionSetState& candidates, const SelectionConfig& config);

} // namespace htar
