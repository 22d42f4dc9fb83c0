#include "htar/model.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include <Eigen/Eigenvalues>

#include "htar/error.hpp"

namespace htar {

TensorSeries::TensorSeries(Shape dims_, Matrix values_) : dims(std::move(dims_)), values(std::move(values_)) {
  if (values.rows() != shape_size(dims)) {
    throw InvalidArgument("series rows " + std::to_string(values.rows()) + " do not match dims " +
                          shape_to_string(dims));
  }
}

LaggedData::LaggedData(Shape response_dims, Matrix responses, Shape predictor_dims, Matrix predictors, Index lag)
    : response_dims_(std::move(response_dims)), predictor_dims_(std::move(predictor_dims)), n_(responses.cols()),
      lag_(lag) {
  if (lag < 1) throw InvalidArgument("lag must be at least 1");
  if (responses.rows() != shape_size(response_dims_)) throw InvalidArgument("responses do not match response dims");
  if (predictors.rows() != shape_size(predictor_dims_)) {
    throw InvalidArgument("predictors do not match predictor dims");
  }
  if (n_ < 1) throw InvalidArgument("no samples");
  if (predictors.cols() != n_ + lag - 1) {
    throw InvalidArgument("need " + std::to_string(n_ + lag - 1) + " predictor columns, got " +
                          std::to_string(predictors.cols()));
  }
  responses_ = std::make_shared<const Matrix>(std::move(responses));
  predictors_ = std::make_shared<const Matrix>(std::move(predictors));
}

LaggedData LaggedData::autoregressive(const TensorSeries& series, Index lag) { return autoregressive(series, lag, 0); }

LaggedData LaggedData::autoregressive(const TensorSeries& series, Index lag, Index skip) {
  if (lag < 1) throw InvalidArgument("lag must be at least 1");
  const Index n = series.length() - lag - skip;
  if (n < 1) {
    throw InvalidArgument("series of length " + std::to_string(series.length()) + " is too short for lag " +
                          std::to_string(lag));
  }
  LaggedData out;
  out.response_dims_ = series.dims;
  out.predictor_dims_ = series.dims;
  auto shared = std::make_shared<const Matrix>(series.values);
  out.responses_ = shared;
  out.predictors_ = shared;
  out.response_offset_ = lag + skip;
  out.predictor_offset_ = skip;
  out.n_ = n;
  out.lag_ = lag;
  return out;
}

LaggedData LaggedData::regression(const TensorSeries& responses, const TensorSeries& predictors) {
  if (responses.length() != predictors.length()) throw InvalidArgument("responses and predictors differ in length");
  return LaggedData(responses.dims, responses.values, predictors.dims, predictors.values, 1);
}

LaggedData LaggedData::with_responses(Matrix responses) const {
  if (responses.rows() != shape_size(response_dims_) || responses.cols() != n_) {
    throw InvalidArgument("replacement responses have the wrong shape");
  }
  LaggedData out = *this;
  out.responses_ = std::make_shared<const Matrix>(std::move(responses));
  out.response_offset_ = 0;
  return out;
}

Eigen::Block<const Matrix, -1, -1, true> LaggedData::responses() const {
  return responses_->middleCols(response_offset_, n_);
}

Eigen::Block<const Matrix, -1, -1, true> LaggedData::predictors() const {
  return predictors_->middleCols(predictor_offset_, n_ + lag_ - 1);
}

const char* noise_name(NoiseKind kind) {
  switch (kind) {
  case NoiseKind::iid_uniform: return "iid_uniform";
  case NoiseKind::iid_gaussian: return "iid_gaussian";
  case NoiseKind::correlated_gaussian: return "correlated_gaussian";
  }
  return "unknown";
}

NoiseKind parse_noise(const std::string& name) {
  if (name == "iid_uniform" || name == "uniform") return NoiseKind::iid_uniform;
  if (name == "iid_gaussian" || name == "gaussian") return NoiseKind::iid_gaussian;
  if (name == "correlated_gaussian" || name == "correlated") return NoiseKind::correlated_gaussian;
  throw InvalidArgument("unknown noise kind '" + name + "'");
}

RankProfile feasible_profile(const StackShape& shape, const Shape& dims) {
  if (shape.order.size() != static_cast<Index>(dims.size()) || shape.ranks.size() != dims.size()) {
    throw InvalidArgument("stack with order " + shape.order.label() + " does not match " +
                          std::to_string(dims.size()) + " modes");
  }
  RankProfile out(dims.size() + 1, 1);
  for (std::size_t m = 0; m < dims.size(); ++m) {
    if (shape.ranks[m] < 1) throw InvalidArgument("ranks must be positive");
    out[m + 1] = std::min(shape.ranks[m], out[m] * dims[static_cast<std::size_t>(shape.order[static_cast<Index>(m)])]);
  }
  return out;
}

HtarModel::HtarModel(Index lag_, LoadingSpec response_, LoadingSpec predictor_, Matrix core_, NoiseSpec noise_)
    : lag(lag_), response(std::move(response_)), predictor(std::move(predictor_)), core(std::move(core_)),
      noise(std::move(noise_)) {
  validate();
}

void HtarModel::validate() const {
  if (lag < 1) throw InvalidArgument("lag must be at least 1");
  if (core.rows() != response_features() || core.cols() != predictor_features() * lag) {
    throw InvalidArgument("core is " + std::to_string(core.rows()) + "x" + std::to_string(core.cols()) +
                          ", expected " + std::to_string(response_features()) + "x" +
                          std::to_string(predictor_features() * lag));
  }
}

ModelShape HtarModel::shape() const {
  ModelShape out;
  out.lag = lag;
  out.response_dims = response.dims;
  out.predictor_dims = predictor.dims;
  auto ranks = [](const LoadingStack& s) {
    const RankProfile p = s.profile();
    return std::vector<Index>(p.begin() + 1, p.end());
  };
  for (const auto& s : response.stacks) out.response.push_back({s.order(), ranks(s)});
  for (const auto& s : predictor.stacks) out.predictor.push_back({s.order(), ranks(s)});
  return out;
}

Matrix coefficient_matrix(const HtarModel& model) {
  const Index q = shape_size(model.response.dims);
  const Index p = shape_size(model.predictor.dims);
  if (q * p * model.lag > kMaxCoefficientEntries) {
    throw InvalidArgument("coefficient matrix of " + std::to_string(q) + "x" + std::to_string(p * model.lag) +
                          " exceeds the materialization cap");
  }
  Matrix out = Matrix::Zero(q, p * model.lag);
  if (model.response.stacks.empty() || model.predictor.stacks.empty()) return out;
  const Matrix lambda_y = assemble_loading(model.response);
  const Matrix lambda_x = assemble_loading(model.predictor);
  for (Index l = 1; l <= model.lag; ++l) {
    out.middleCols((l - 1) * p, p) = lambda_y * model.lag_block(l) * lambda_x.transpose();
  }
  return out;
}

namespace {

Matrix expand_spec(const LoadingSpec& spec, const Eigen::Ref<const Matrix>& features) {
  Matrix out = Matrix::Zero(shape_size(spec.dims), features.cols());
  Index offset = 0;
  for (const auto& stack : spec.stacks) {
    out += expand_features(stack, features.middleRows(offset, stack.feature_count()));
    offset += stack.feature_count();
  }
  return out;
}

double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> solver(m, false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

} // namespace

Matrix lagged_features(const HtarModel& model, const LaggedData& data) {
  if (data.lag() != model.lag) throw InvalidArgument("data lag does not match model lag");
  const Index r = model.predictor_features();
  const Index n = data.samples();
  Matrix out(r * model.lag, n);
  if (r == 0) return out;
  const Matrix features = extract_features(model.predictor, data.predictors());
  for (Index l = 1; l <= model.lag; ++l) out.middleRows((l - 1) * r, r) = features.middleCols(model.lag - l, n);
  return out;
}

Matrix predict(const HtarModel& model, const LaggedData& data) {
  if (data.response_dims() != model.response.dims || data.predictor_dims() != model.predictor.dims) {
    throw InvalidArgument("data dims do not match the model");
  }
  if (model.core.size() == 0) return Matrix::Zero(shape_size(model.response.dims), data.samples());
  const Matrix z = model.core * lagged_features(model, data);
  return expand_spec(model.response, z);
}

DenseTensor predict(const HtarModel& model, const std::vector<DenseTensor>& history) {
  if (static_cast<Index>(history.size()) != model.lag) {
    throw InvalidArgument("history holds " + std::to_string(history.size()) + " tensors, model lag is " +
                          std::to_string(model.lag));
  }
  const Index r = model.predictor_features();
  Vector z = Vector::Zero(model.response_features());
  for (Index l = 1; l <= model.lag; ++l) {
    const auto& x = history[static_cast<std::size_t>(l - 1)];
    if (x.shape() != model.predictor.dims) {
      throw InvalidArgument("history entry " + std::to_string(l) + " has shape " + shape_to_string(x.shape()));
    }
    if (r > 0) z += model.lag_block(l) * extract_features(model.predictor, x.data());
  }
  return DenseTensor(model.response.dims, expand_spec(model.response, z));
}

Matrix reduced_companion(const HtarModel& model) {
  if (model.response.dims != model.predictor.dims) {
    throw InvalidArgument("stationarity needs equal response and predictor dims");
  }
  const Index r = model.predictor_features();
  const Index lag = model.lag;
  Matrix companion = Matrix::Zero(r * lag, r * lag);
  if (r == 0 || model.response_features() == 0) return companion;
  const Matrix cross = extract_features(model.predictor, assemble_loading(model.response));
  for (Index l = 1; l <= lag; ++l) companion.block(0, (l - 1) * r, r, r) = cross * model.lag_block(l);
  if (lag > 1) companion.bottomLeftCorner(r * (lag - 1), r * (lag - 1)).setIdentity();
  return companion;
}

Stationarity check_stationarity(const HtarModel& model, double margin) {
  Stationarity out;
  out.spectral_radius = spectral_radius(reduced_companion(model));
  out.stationary = out.spectral_radius <= 1.0 - margin;
  return out;
}

HtarModel rescale_to_stationary(const HtarModel& model, double target_rho) {
  if (!(target_rho > 0.0 && target_rho < 1.0)) throw InvalidArgument("target spectral radius must lie in (0, 1)");
  auto radius_at = [&](double c) {
    HtarModel scaled = model;
    scaled.core *= c;
    return check_stationarity(scaled, 0.0).spectral_radius;
  };
  const double rho = radius_at(1.0);
  if (rho == 0.0) throw InvalidArgument("cannot rescale a model with zero spectral radius");
  HtarModel out = model;
  if (model.lag == 1) {
    out.core *= target_rho / rho;
    return out;
  }
  double lo = 0.0;
  double hi = target_rho / rho;
  for (int k = 0; radius_at(hi) < target_rho; ++k) {
    if (k == 200) throw NumericalError("could not bracket the target spectral radius");
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double value = radius_at(mid);
    if (std::abs(value - target_rho) <= 1e-6) {
      out.core *= mid;
      return out;
    }
    (value < target_rho ? lo : hi) = mid;
  }
  throw NumericalError("spectral radius bisection did not converge in 100 iterations");
}

Matrix draw_noise(const NoiseSpec& spec, Index size, Index count, Rng& rng) {
  Matrix out(size, count);
  switch (spec.kind) {
  case NoiseKind::iid_uniform: {
    const double half = std::sqrt(3.0);
    std::uniform_real_distribution<double> uniform(-half, half);
    for (Index j = 0; j < count; ++j)
      for (Index i = 0; i < size; ++i) out(i, j) = uniform(rng);
    break;
  }
  case NoiseKind::iid_gaussian: out = gaussian_matrix(size, count, rng); break;
  case NoiseKind::correlated_gaussian: {
    const Matrix z = gaussian_matrix(size, count, rng);
    if (spec.factor) {
      if (spec.factor->rows() != size || spec.factor->cols() != size) {
        throw InvalidArgument("noise factor must be " + std::to_string(size) + "x" + std::to_string(size));
      }
      out = spec.factor->triangularView<Eigen::Lower>() * z;
      break;
    }
    const double rho = spec.correlation;
    if (!(std::abs(rho) < 1.0)) throw InvalidArgument("noise correlation must lie in (-1, 1)");
    const double innovation = std::sqrt(1.0 - rho * rho);
    for (Index j = 0; j < count; ++j) {
      out(0, j) = z(0, j);
      for (Index i = 1; i < size; ++i) out(i, j) = rho * out(i - 1, j) + innovation * z(i, j);
    }
    break;
  }
  }
  return out * spec.scale;
}

TensorSeries simulate(const HtarModel& model, Index length, Index burn_in, std::uint64_t seed) {
  if (model.response.dims != model.predictor.dims) throw InvalidArgument("simulation needs an autoregressive model");
  if (length < 1 || burn_in < 0) throw InvalidArgument("length must be positive and burn-in non-negative");
  const auto status = check_stationarity(model, 0.0);
  if (status.spectral_radius >= 1.0) {
    std::clog << "warning: simulating a non-stationary model (spectral radius " << status.spectral_radius << ")\n";
  }
  Rng rng(seed);
  const Index q = shape_size(model.response.dims);
  const Index r = model.predictor_features();
  const Index lag = model.lag;
  const Index keep = length + lag;
  const Index total = burn_in + keep;
  const bool active = r > 0 && model.response_features() > 0;
  const Matrix lambda_y = active ? assemble_loading(model.response) : Matrix(q, 0);

  Matrix out(q, keep);
  Matrix recent = Matrix::Zero(r, lag);  // column (t mod lag) holds features of y_t
  constexpr Index chunk = 256;
  Matrix noise;
  for (Index t = 0; t < total; ++t) {
    if (t % chunk == 0) noise = draw_noise(model.noise, q, std::min(chunk, total - t), rng);
    Vector y = noise.col(t % chunk);
    if (active) {
      Vector z = Vector::Zero(model.response_features());
      for (Index l = 1; l <= std::min(lag, t); ++l) z += model.lag_block(l) * recent.col((t - l) % lag);
      y += lambda_y * z;
      recent.col(t % lag) = extract_features(model.predictor, y);
    }
    if (!y.allFinite() || y.cwiseAbs().maxCoeff() > 1e150) {
      throw NumericalError("simulation diverged at step " + std::to_string(t) + " (spectral radius " +
                           std::to_string(status.spectral_radius) + ")");
    }
    if (t >= burn_in) out.col(t - burn_in) = y;
  }
  return TensorSeries(model.response.dims, std::move(out));
}

HtarModel random_model(const ModelShape& shape, std::uint64_t seed, double target_rho) {
  Rng rng(seed);
  std::vector<LoadingStack> response;
  std::vector<LoadingStack> predictor;
  for (const auto& s : shape.response) response.push_back(random_stack(s.order, shape.response_dims, s.ranks, rng));
  for (const auto& s : shape.predictor) predictor.push_back(random_stack(s.order, shape.predictor_dims, s.ranks, rng));
  LoadingSpec yspec(Side::response, shape.response_dims, std::move(response));
  LoadingSpec xspec(Side::predictor, shape.predictor_dims, std::move(predictor));
  Matrix core = gaussian_matrix(yspec.feature_count(), xspec.feature_count() * shape.lag, rng);
  HtarModel model(shape.lag, std::move(yspec), std::move(xspec), std::move(core));
  if (shape.response_dims == shape.predictor_dims && model.core.size() > 0) {
    return rescale_to_stationary(model, target_rho);
  }
  return model;
}

Index param_count(const ModelShape& shape) {
  Index total = 0;
  Index s = 0;
  Index r = 0;
  for (const auto& st : shape.response) {
    const auto profile = feasible_profile(st, shape.response_dims);
    total += param_count_block(st.order, shape.response_dims, profile);
    s += profile.back();
  }
  for (const auto& st : shape.predictor) {
    const auto profile = feasible_profile(st, shape.predictor_dims);
    total += param_count_block(st.order, shape.predictor_dims, profile);
    r += profile.back();
  }
  return total + shape.lag * s * r;
}

Index param_count(const HtarModel& model) {
  Index total = 0;
  for (const auto& st : model.response.stacks) total += param_count_block(st);
  for (const auto& st : model.predictor.stacks) total += param_count_block(st);
  return total + model.lag * model.response_features() * model.predictor_features();
}

double bic(double loss, Index d, Index samples, double phi) {
  if (!(loss > 0.0)) throw InvalidArgument("BIC needs a positive loss; substitute the loss floor for exact fits");
  if (samples < 2) throw InvalidArgument("BIC needs at least two samples");
  const double n = static_cast<double>(samples);
  return n * std::log(loss) + phi * static_cast<double>(d) * std::log(n);
}

} // namespace htar
