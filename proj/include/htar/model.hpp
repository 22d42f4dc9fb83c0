#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "htar/loading.hpp"

namespace htar {

/// T observations of a tensor with shape `dims`, one vec'd tensor per column (Q x T).
struct TensorSeries {
  Shape dims;
  Matrix values;

  TensorSeries() = default;
  TensorSeries(Shape dims, Matrix values);

  Index length() const { return values.cols(); }
  Index size() const { return values.rows(); }
  DenseTensor at(Index t) const { return DenseTensor(dims, values.col(t)); }
};

/**
 * Aligned responses and lagged predictors for least squares.
 *
 * Sample i (0-based) has response column i and, at lag l = 1..L, predictor
 * column i + L - l. Storage is shared, so copies are cheap and the AR case
 * does not duplicate the series.
 */
class LaggedData {
public:
  LaggedData() = default;
  /// responses: Q x n, predictors: P x (n + lag - 1).
  LaggedData(Shape response_dims, Matrix responses, Shape predictor_dims, Matrix predictors, Index lag);

  /// Y_t on Y_{t-1..t-L} for t = L..T-1.
  static LaggedData autoregressive(const TensorSeries& series, Index lag);
  /// Same as above but drops the first `skip` usable samples, so several lags share one sample.
  static LaggedData autoregressive(const TensorSeries& series, Index lag, Index skip);
  /// Contemporaneous pairs (lag 1): sample i regresses y_i on x_i.
  static LaggedData regression(const TensorSeries& responses, const TensorSeries& predictors);

  /// Same predictors, new responses (Q x n).
  LaggedData with_responses(Matrix responses) const;

  Index lag() const { return lag_; }
  Index samples() const { return n_; }
  const Shape& response_dims() const { return response_dims_; }
  const Shape& predictor_dims() const { return predictor_dims_; }
  Eigen::Block<const Matrix, -1, -1, true> responses() const;
  Eigen::Block<const Matrix, -1, -1, true> predictors() const;

private:
  Shape response_dims_;
  Shape predictor_dims_;
  std::shared_ptr<const Matrix> responses_;
  std::shared_ptr<const Matrix> predictors_;
  Index response_offset_ = 0;
  Index predictor_offset_ = 0;
  Index n_ = 0;
  Index lag_ = 1;
};

enum class NoiseKind { iid_uniform, iid_gaussian, correlated_gaussian };

/**
 * Innovation distribution. Every kind has unit marginal variance before
 * `scale`. Correlated noise has covariance correlation^{|i-j|} over the vec
 * index unless an explicit lower-triangular `factor` (Q x Q) is given.
 */
struct NoiseSpec {
  NoiseKind kind = NoiseKind::iid_gaussian;
  double scale = 1.0;
  double correlation = 0.5;
  std::optional<Matrix> factor;
};

const char* noise_name(NoiseKind kind);
NoiseKind parse_noise(const std::string& name);

/// Order and target ranks r_1..r_M of one stack, before clamping.
struct StackShape {
  ActionOrder order;
  std::vector<Index> ranks;
};

/// Ranks clamped to r_m <= r_{m-1} p_{order[m]}; returns the full profile (1, r_1, ..., r_M).
RankProfile feasible_profile(const StackShape& shape, const Shape& dims);

/// Hyperparameters of a model without its values.
struct ModelShape {
  Index lag = 1;
  Shape response_dims;
  Shape predictor_dims;
  std::vector<StackShape> response;
  std::vector<StackShape> predictor;
};

/**
 * Loadings for both sides plus the core. The core is s x (r L): lag block l
 * (1-based) occupies columns (l-1) r .. l r - 1, and within a block the
 * columns follow the predictor stacks in order. Rows follow response stacks.
 */
struct HtarModel {
  Index lag = 1;
  LoadingSpec response;
  LoadingSpec predictor;
  Matrix core;
  NoiseSpec noise;

  HtarModel() = default;
  HtarModel(Index lag, LoadingSpec response, LoadingSpec predictor, Matrix core, NoiseSpec noise = {});

  /// Throws InvalidArgument if the core does not match the loadings.
  void validate() const;
  Index response_features() const { return response.feature_count(); }
  Index predictor_features() const { return predictor.feature_count(); }
  /// Lag block l (1-based).
  auto lag_block(Index l) const { return core.middleCols((l - 1) * predictor_features(), predictor_features()); }
  auto lag_block(Index l) { return core.middleCols((l - 1) * predictor_features(), predictor_features()); }
  ModelShape shape() const;
};

/// Largest Q * (Q L) that coefficient_matrix will materialize.
inline constexpr Index kMaxCoefficientEntries = Index{1} << 26;

/// [A_1, ..., A_L] as a Q x (P L) matrix. Small sizes only.
Matrix coefficient_matrix(const HtarModel& model);

/// Forecast from history newest first (history[0] is lag 1).
DenseTensor predict(const HtarModel& model, const std::vector<DenseTensor>& history);

/// Predictions for every sample of `data` (Q x n), via feature extraction.
Matrix predict(const HtarModel& model, const LaggedData& data);

/// Lagged predictor features stacked lag 1 first: column i is [f_{i+L-1}; ...; f_i] (r L x n).
Matrix lagged_features(const HtarModel& model, const LaggedData& data);

struct Stationarity {
  double spectral_radius = 0.0;
  bool stationary = true;
};

inline constexpr double kDefaultStationarityMargin = 0.02;

/**
 * Spectral radius of the AR companion. The nonzero eigenvalues of the Q L
 * companion coincide with those of the r L companion built from
 * Lambda_x^T Lambda_y Theta_l, which is what is computed.
 */
Stationarity check_stationarity(const HtarModel& model, double margin = kDefaultStationarityMargin);

/// Companion matrix of the reduced system (r L x r L).
Matrix reduced_companion(const HtarModel& model);

/// Scale the core so the spectral radius equals `target_rho` (to 1e-6).
HtarModel rescale_to_stationary(const HtarModel& model, double target_rho);

inline constexpr Index kDefaultBurnIn = 200;

/// T + L observations after discarding `burn_in` warm-up steps from a zero start.
TensorSeries simulate(const HtarModel& model, Index length, Index burn_in, std::uint64_t seed);

/// Noise matrix (Q x count) for `spec`.
Matrix draw_noise(const NoiseSpec& spec, Index size, Index count, Rng& rng);

/// Random orthonormal loadings, N(0, 1) core rescaled to `target_rho`.
HtarModel random_model(const ModelShape& shape, std::uint64_t seed, double target_rho = 0.8);

/// sum of block parameter counts on both sides plus L s r.
Index param_count(const ModelShape& shape);
Index param_count(const HtarModel& model);

/// T log(loss) + phi d log(T). Throws if loss <= 0 or T < 2.
double bic(double loss, Index d, Index samples, double phi = 1.0);

/// Loss floor used before taking logs of exact fits.
inline constexpr double kLossFloor = 1e-300;

} // namespace htar
