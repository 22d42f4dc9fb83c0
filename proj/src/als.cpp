#include "htar/als.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>

#include "htar/error.hpp"

namespace htar {

namespace {

using ConstMap = Eigen::Map<const Matrix>;

constexpr Index kChunk = 256;
constexpr double kTiny = 1e-300;

/// Solve (A + ridge * tr(A)/k * I) X = B for symmetric PSD A.
Matrix ridge_solve(const Matrix& a, const Matrix& b, double ridge) {
  const double scale = a.trace() / static_cast<double>(std::max<Index>(a.rows(), 1));
  Matrix reg = a;
  reg.diagonal().array() += ridge * std::max(scale, kTiny);
  Eigen::LDLT<Matrix> ldlt(reg);
  Matrix x = ldlt.solve(b);
  if (ldlt.info() != Eigen::Success || !x.allFinite()) {
    x = reg.completeOrthogonalDecomposition().solve(b);
  }
  if (!x.allFinite()) throw NumericalError("normal equations have no finite solution");
  return x;
}

/// X (A + ridge I)^{-1} for symmetric PSD A.
Matrix ridge_solve_right(const Matrix& x, const Matrix& a, double ridge) {
  return ridge_solve(a, x.transpose(), ridge).transpose();
}

/// U with U^T U = W for symmetric PSD W.
Matrix psd_root(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(w);
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return roots.asDiagonal() * eig.eigenvectors().transpose();
}

bool negligible(const Matrix& h) { return !(h.trace() > 1e-200); }

constexpr double kMaxMomentEntries = 4.0e6;

/// M[(l-1) L + (l2-1)] = sum_i x_{i+L-l} x_{i+L-l2}^T for l <= l2 over the n samples; the others are left empty.
std::vector<Matrix> lagged_moments(const Matrix& states, Index lag, Index n) {
  const Index dim = states.rows();
  std::vector<Matrix> out(static_cast<std::size_t>(lag * lag));
  Matrix full = Matrix::Zero(dim, dim);
  full.selfadjointView<Eigen::Lower>().rankUpdate(states);
  for (Index l = 1; l <= lag; ++l) {
    Matrix diag = full;
    for (Index tau = 0; tau < states.cols(); ++tau) {
      if (tau >= lag - l && tau < lag - l + n) continue;
      diag.selfadjointView<Eigen::Lower>().rankUpdate(states.col(tau), -1.0);
    }
    out[static_cast<std::size_t>((l - 1) * lag + (l - 1))] = diag.selfadjointView<Eigen::Lower>();
    for (Index l2 = l + 1; l2 <= lag; ++l2) {
      out[static_cast<std::size_t>((l - 1) * lag + (l2 - 1))] =
          states.middleCols(lag - l, n) * states.middleCols(lag - l2, n).transpose();
    }
  }
  return out;
}

/// T M T^T where T contracts a raw state through the first `steps` components.
Matrix congruence(const LoadingStack& stack, const Matrix& moment, Index steps) {
  if (moment.size() == 0 || steps == 0) return moment;
  const Matrix left = detail::advance_state(stack, moment, 0, steps);
  return detail::advance_state(stack, left.transpose(), 0, steps).transpose();
}

class Workspace {
public:
  Workspace(HtarModel& model, const LaggedData& data, double ridge) : model_(model), data_(data), ridge_(ridge) {
    if (data.lag() != model.lag || data.response_dims() != model.response.dims ||
        data.predictor_dims() != model.predictor.dims) {
      throw InvalidArgument("data does not match the model dims or lag");
    }
    for (const auto& stack : model_.predictor.stacks) {
      permuted_x_.push_back(detail::permuted_columns(stack, data_.predictors()));
      features_.push_back(detail::advance_state(stack, permuted_x_.back(), 0, stack.modes()));
    }
    raw_moments_.resize(features_.size());
    for (const auto& stack : model_.response.stacks) permuted_y_.push_back(detail::permuted_columns(stack, data_.responses()));
    refresh_response();
    response_energy_ = data_.responses().squaredNorm();
  }

  void update_predictor_block(Index k, Index c);
  void update_response_block(Index k, Index c);
  void update_core();
  void renormalize();
  double loss() const;

private:
  struct PredictorBlock {
    Index ra = 0, rb = 0, rest = 0;
    const Matrix* prefix = nullptr;  // (ra rest) x (n + L - 1)
    Matrix suffix;  // (rb rest) x r_k
    std::vector<Matrix> theta;
  };
  void sample_normal(const PredictorBlock& blk, const Matrix& target, Matrix& normal, Vector& rhs) const;
  void lagged_normal(const PredictorBlock& blk, const std::vector<Matrix>& moments, const Matrix& target,
                     Matrix& normal, Vector& rhs) const;
  const std::vector<Matrix>& raw_moments(Index k);
  Matrix stacked_lags() const;
  Matrix latent() const { return model_.core * stacked_lags(); }
  void refresh_response();
  void refresh_predictor(Index k) {
    const auto& stack = model_.predictor.stacks[static_cast<std::size_t>(k)];
    features_[static_cast<std::size_t>(k)] =
        detail::advance_state(stack, permuted_x_[static_cast<std::size_t>(k)], 0, stack.modes());
  }

  HtarModel& model_;
  const LaggedData& data_;
  double ridge_;
  std::vector<Matrix> permuted_x_;  // per predictor stack, predictors in its action order
  std::vector<Matrix> permuted_y_;  // per response stack
  std::vector<Matrix> features_;    // per predictor stack, r_k x (n + L - 1)
  std::vector<std::vector<Matrix>> raw_moments_;  // per predictor stack, lazily filled
  Matrix lambda_y_;               // Q x s
  Matrix projected_;              // Lambda_y^T Y, s x n
  Matrix gram_;                   // Lambda_y^T Lambda_y
  double response_energy_ = 0.0;
};

void Workspace::refresh_response() {
  lambda_y_ = assemble_loading(model_.response);
  projected_ = lambda_y_.transpose() * data_.responses();
  gram_ = lambda_y_.transpose() * lambda_y_;
}

Matrix Workspace::stacked_lags() const {
  const Index r = model_.predictor_features();
  const Index n = data_.samples();
  const Index lag = model_.lag;
  Matrix out(r * lag, n);
  Index offset = 0;
  for (const auto& f : features_) {
    for (Index l = 1; l <= lag; ++l) out.middleRows((l - 1) * r + offset, f.rows()) = f.middleCols(lag - l, n);
    offset += f.rows();
  }
  return out;
}

double Workspace::loss() const {
  const Index n = data_.samples();
  if (model_.core.size() == 0) return response_energy_ / static_cast<double>(n);
  const Matrix z = latent();
  const auto y = data_.responses();
  double total = 0.0;
  for (Index start = 0; start < n; start += kChunk) {
    const Index width = std::min(kChunk, n - start);
    total += (y.middleCols(start, width) - lambda_y_ * z.middleCols(start, width)).squaredNorm();
  }
  return total / static_cast<double>(n);
}

void Workspace::update_predictor_block(Index k, Index c) {
  const auto& stack = model_.predictor.stacks[static_cast<std::size_t>(k)];
  const Matrix& g = stack.component(c);
  const Index ra = g.rows();
  const Index rb = g.cols();
  const Index npar = ra * rb;
  const Index rm = stack.feature_count();
  const Index rest = detail::rest_size(stack, c);
  const Index offset = model_.predictor.feature_offset(k);
  const Index s = model_.response_features();
  const Index lag = model_.lag;
  const Index n = data_.samples();
  if (s == 0) return;

  PredictorBlock blk;
  blk.ra = ra;
  blk.rb = rb;
  blk.rest = rest;
  const Matrix& permuted = permuted_x_[static_cast<std::size_t>(k)];
  Matrix owned;
  if (c > 0) owned = detail::advance_state(stack, permuted, 0, c);
  blk.prefix = c > 0 ? &owned : &permuted;
  blk.suffix = detail::suffix_matrix(stack, c);
  for (Index l = 1; l <= lag; ++l) blk.theta.push_back(model_.lag_block(l).middleCols(offset, rm));

  Matrix z = latent();
  const Matrix& own = features_[static_cast<std::size_t>(k)];
  for (Index l = 1; l <= lag; ++l) z.noalias() -= blk.theta[static_cast<std::size_t>(l - 1)] * own.middleCols(lag - l, n);
  const Matrix target = projected_ - gram_ * z;

  // All paths give the same normal equations; pick the cheapest.
  const double count = static_cast<double>(lag * (lag + 1) / 2);
  const double moment_passes = 0.5 + 0.5 * static_cast<double>(lag * (lag - 1));
  const double contraction = static_cast<double>(lag * lag * rest * rest) * static_cast<double>(npar * npar);
  const double state = static_cast<double>(ra * rest);
  const double raw = static_cast<double>(stack.input_size());
  const double direct_cost = state * state * static_cast<double>(n) * moment_passes + contraction;
  const bool cacheable = raw * raw <= kMaxMomentEntries;
  const double cached_cost =
      count * 2.0 * raw * raw * static_cast<double>(stack.rank(1)) * static_cast<double>(c) + contraction +
      (raw_moments_[static_cast<std::size_t>(k)].empty() ? 0.25 * raw * raw * static_cast<double>(n) * moment_passes : 0.0);
  const double sample_cost = 0.5 * static_cast<double>(s * n) * static_cast<double>(npar * npar);

  Matrix normal(npar, npar);
  Vector rhs(npar);
  if (cacheable && cached_cost < std::min(direct_cost, sample_cost)) {
    std::vector<Matrix> moments = raw_moments(k);
    for (auto& m : moments) m = congruence(stack, m, c);
    lagged_normal(blk, moments, target, normal, rhs);
  } else if (direct_cost < sample_cost) {
    lagged_normal(blk, lagged_moments(*blk.prefix, lag, n), target, normal, rhs);
  } else {
    sample_normal(blk, target, normal, rhs);
  }
  if (negligible(normal)) return;
  const Vector solution = ridge_solve(normal, rhs, ridge_);
  auto& updated = model_.predictor.stacks[static_cast<std::size_t>(k)];
  updated.set_component(c, Eigen::Map<const Matrix>(solution.data(), ra, rb));
  features_[static_cast<std::size_t>(k)] = detail::advance_state(updated, *blk.prefix, c, updated.modes());
}

const std::vector<Matrix>& Workspace::raw_moments(Index k) {
  auto& cached = raw_moments_[static_cast<std::size_t>(k)];
  if (cached.empty()) cached = lagged_moments(permuted_x_[static_cast<std::size_t>(k)], model_.lag, data_.samples());
  return cached;
}

void Workspace::sample_normal(const PredictorBlock& blk, const Matrix& target, Matrix& normal, Vector& rhs) const {
  const Index ra = blk.ra, rb = blk.rb, rest = blk.rest;
  const Index npar = ra * rb;
  const Index rm = blk.suffix.cols();
  const Index s = gram_.rows();
  const Index lag = model_.lag;
  const Index n = data_.samples();
  const Index cols = n + lag - 1;

  Matrix suffix_t(rest, rb * rm);  // (rho, (b, feature))
  for (Index f = 0; f < rm; ++f)
    for (Index rho = 0; rho < rest; ++rho)
      for (Index b = 0; b < rb; ++b) suffix_t(rho, b + rb * f) = blk.suffix(b + rb * rho, f);

  // design[tau]: npar x rm with features_tau = design_tau^T vec(G).
  Matrix design(npar, rm * cols);
  for (Index tau = 0; tau < cols; ++tau) {
    Eigen::Map<Matrix> out(design.data() + tau * npar * rm, ra, rb * rm);
    out.noalias() = ConstMap(blk.prefix->col(tau).data(), ra, rest) * suffix_t;
  }

  const Matrix root = psd_root(gram_);
  normal.setZero();
  rhs.setZero();
  Matrix block(s, npar);
  Matrix stacked(s * kChunk, npar);
  for (Index start = 0; start < n; start += kChunk) {
    const Index width = std::min(kChunk, n - start);
    for (Index j = 0; j < width; ++j) {
      const Index i = start + j;
      block.setZero();
      for (Index l = 1; l <= lag; ++l) {
        const Index tau = i + lag - l;
        block.noalias() +=
            blk.theta[static_cast<std::size_t>(l - 1)] * ConstMap(design.data() + tau * npar * rm, npar, rm).transpose();
      }
      rhs.noalias() += block.transpose() * target.col(i);
      stacked.middleRows(j * s, s).noalias() = root * block;
    }
    normal.selfadjointView<Eigen::Lower>().rankUpdate(stacked.topRows(width * s).transpose());
  }
  normal = normal.selfadjointView<Eigen::Lower>();
}

void Workspace::lagged_normal(const PredictorBlock& blk, const std::vector<Matrix>& moments, const Matrix& target,
                              Matrix& normal, Vector& rhs) const {
  const Index ra = blk.ra, rb = blk.rb, rest = blk.rest;
  const Index lag = model_.lag;
  const Index n = data_.samples();

  // normal((a, b), (a', b')) = sum_{l, l2, rho, rho'} moment_{l l2}((a, rho), (a', rho')) kernel_{l l2}((b, rho), (b', rho')),
  // evaluated as one product of the regrouped moments (a a') x (rho rho' l l2) and kernels (rho rho' l l2) x (b b').
  const Index pairs = rest * rest;
  Matrix moment_cols(ra * ra, pairs * lag * lag);
  Matrix kernel_rows(pairs * lag * lag, rb * rb);
  Matrix rhs_mat = Matrix::Zero(ra, rb);
  for (Index l = 1; l <= lag; ++l) {
    const Matrix& theta_l = blk.theta[static_cast<std::size_t>(l - 1)];
    const Matrix weighted = theta_l.transpose() * gram_;
    for (Index l2 = 1; l2 <= lag; ++l2) {
      const Matrix kernel = blk.suffix * (weighted * blk.theta[static_cast<std::size_t>(l2 - 1)]) * blk.suffix.transpose();
      const bool upper = l <= l2;
      const Matrix& moment = upper ? moments[static_cast<std::size_t>((l - 1) * lag + (l2 - 1))]
                                   : moments[static_cast<std::size_t>((l2 - 1) * lag + (l - 1))];
      const Index base = ((l - 1) * lag + (l2 - 1)) * pairs;
      for (Index rho2 = 0; rho2 < rest; ++rho2) {
        for (Index rho = 0; rho < rest; ++rho) {
          const Index col = base + rho + rest * rho2;
          Eigen::Map<Matrix> m(moment_cols.col(col).data(), ra, ra);
          if (upper) {
            m = moment.block(ra * rho, ra * rho2, ra, ra);
          } else {
            m = moment.block(ra * rho2, ra * rho, ra, ra).transpose();
          }
          for (Index b2 = 0; b2 < rb; ++b2)
            for (Index b = 0; b < rb; ++b) kernel_rows(col, b + rb * b2) = kernel(b + rb * rho, b2 + rb * rho2);
        }
      }
    }
    const Matrix v = blk.suffix * (theta_l.transpose() * target);  // (rb rest) x n
    rhs_mat.noalias() += ConstMap(blk.prefix->col(lag - l).data(), ra, rest * n) * ConstMap(v.data(), rb, rest * n).transpose();
  }
  const Matrix grouped = moment_cols * kernel_rows;  // (a a') x (b b')
  for (Index b2 = 0; b2 < rb; ++b2)
    for (Index b = 0; b < rb; ++b)
      normal.block(ra * b, ra * b2, ra, ra) = ConstMap(grouped.col(b + rb * b2).data(), ra, ra);
  rhs = Eigen::Map<const Vector>(rhs_mat.data(), rhs_mat.size());
}

void Workspace::update_response_block(Index k, Index c) {
  auto& spec = model_.response;
  const auto& stack = spec.stacks[static_cast<std::size_t>(k)];
  const Matrix& g = stack.component(c);
  const Index ra = g.rows();
  const Index rb = g.cols();
  const Index rest = detail::rest_size(stack, c);
  const Index n = data_.samples();
  if (model_.predictor_features() == 0) return;

  const Matrix z = latent();
  const Matrix& permuted = permuted_y_[static_cast<std::size_t>(k)];
  Matrix owned;
  if (c > 0) owned = detail::advance_state(stack, permuted, 0, c);
  const Matrix& state = c > 0 ? owned : permuted;  // (ra rest) x n
  const Matrix weights = detail::suffix_matrix(stack, c) * z.middleRows(spec.feature_offset(k), stack.feature_count());

  const ConstMap w(weights.data(), rb, rest * n);
  const ConstMap v(state.data(), ra, rest * n);
  Matrix cross = v * w.transpose();
  // Remove the part explained by the other response stacks.
  for (Index other = 0; other < spec.stack_count(); ++other) {
    if (other == k) continue;
    const auto& os = spec.stacks[static_cast<std::size_t>(other)];
    const Matrix lifted = detail::prefix_state(stack, assemble_block(os), c);  // (ra rest) x s_other
    const auto z_other = z.middleRows(spec.feature_offset(other), os.feature_count());
    for (Index rho = 0; rho < rest; ++rho) {
      cross.noalias() -= lifted.middleRows(ra * rho, ra) * (z_other * weights.middleRows(rb * rho, rb).transpose());
    }
  }
  const Matrix right_gram = w * w.transpose();
  if (negligible(right_gram)) return;
  const Matrix left_gram = kron(Matrix::Identity(stack.step_dim(c), stack.step_dim(c)), detail::prefix_gram(stack, c));
  const Matrix solution = ridge_solve_right(ridge_solve(left_gram, cross, ridge_), right_gram, ridge_);
  spec.stacks[static_cast<std::size_t>(k)].set_component(c, solution);
  refresh_response();
}

void Workspace::update_core() {
  if (model_.core.size() == 0) return;
  const Matrix lags = stacked_lags();
  const Matrix cross = projected_ * lags.transpose();
  const Matrix lag_gram = lags * lags.transpose();
  model_.core = ridge_solve_right(ridge_solve(gram_, cross, ridge_), lag_gram, ridge_);
}

/// Orthonormalizes `stack` in place and returns the trailing factor R (old features = R^T new features).
/// Householder Q stays orthonormal when R is singular, so rank-deficient components pass through exactly.
Matrix orthonormalize(LoadingStack& stack) {
  Matrix carry = Matrix::Identity(1, 1);
  for (Index c = 0; c < stack.modes(); ++c) {
    const Matrix g = detail::absorb_left(stack.component(c), carry, stack.step_dim(c));
    if (g.rows() < g.cols()) throw NumericalError("component " + std::to_string(c + 1) + " has more columns than rows");
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
    Matrix r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    if (!r.allFinite()) {
      throw NumericalError("component " + std::to_string(c + 1) + " of order " + stack.order().label() +
                           " is not finite");
    }
    for (Index j = 0; j < r.rows(); ++j) {
      if (r(j, j) < 0.0) {
        r.row(j) *= -1.0;
        q.col(j) *= -1.0;
      }
    }
    stack.set_component(c, std::move(q));
    carry = std::move(r);
  }
  return carry;
}

void Workspace::renormalize() {
  ssvd_renormalize(model_);
  for (Index k = 0; k < model_.predictor.stack_count(); ++k) refresh_predictor(k);
  refresh_response();
}

} // namespace

double loss(const HtarModel& model, const LaggedData& data) {
  HtarModel copy = model;
  return Workspace(copy, data, 0.0).loss();
}

Index block_count(const HtarModel& model) {
  Index total = 0;
  for (const auto& s : model.predictor.stacks) total += s.modes();
  for (const auto& s : model.response.stacks) total += s.modes();
  return total;
}

void block_ls_update(HtarModel& model, const LaggedData& data, Index block, double ridge) {
  Workspace ws(model, data, ridge);
  Index index = block;
  for (Index k = 0; k < model.predictor.stack_count(); ++k) {
    const Index m = model.predictor.stacks[static_cast<std::size_t>(k)].modes();
    if (index < m) return ws.update_predictor_block(k, index);
    index -= m;
  }
  for (Index k = 0; k < model.response.stack_count(); ++k) {
    const Index m = model.response.stacks[static_cast<std::size_t>(k)].modes();
    if (index < m) return ws.update_response_block(k, index);
    index -= m;
  }
  throw InvalidArgument("block index " + std::to_string(block + 1) + " exceeds " + std::to_string(block_count(model)) +
                        " blocks");
}

void ssvd_renormalize(HtarModel& model) {
  const Index r = model.predictor_features();
  for (Index k = 0; k < model.predictor.stack_count(); ++k) {
    auto& stack = model.predictor.stacks[static_cast<std::size_t>(k)];
    const Matrix tail = orthonormalize(stack);
    const Index offset = model.predictor.feature_offset(k);
    for (Index l = 0; l < model.lag; ++l) {
      auto cols = model.core.middleCols(l * r + offset, stack.feature_count());
      cols = (cols * tail.transpose()).eval();
    }
  }
  for (Index k = 0; k < model.response.stack_count(); ++k) {
    auto& stack = model.response.stacks[static_cast<std::size_t>(k)];
    const Matrix tail = orthonormalize(stack);
    auto rows = model.core.middleRows(model.response.feature_offset(k), stack.feature_count());
    rows = (tail * rows).eval();
  }
}

void update_core(HtarModel& model, const LaggedData& data, double ridge) {
  Workspace(model, data, ridge).update_core();
}

HtarModel empty_model(const Shape& response_dims, const Shape& predictor_dims, Index lag) {
  return HtarModel(lag, LoadingSpec(Side::response, response_dims, {}), LoadingSpec(Side::predictor, predictor_dims, {}),
                   Matrix(0, 0));
}

HtarModel initial_model(const ModelShape& shape, const LaggedData& data, Rng& rng, double ridge) {
  std::vector<LoadingStack> response;
  std::vector<LoadingStack> predictor;
  for (const auto& s : shape.response) response.push_back(random_stack(s.order, shape.response_dims, s.ranks, rng));
  for (const auto& s : shape.predictor) predictor.push_back(random_stack(s.order, shape.predictor_dims, s.ranks, rng));
  LoadingSpec yspec(Side::response, shape.response_dims, std::move(response));
  LoadingSpec xspec(Side::predictor, shape.predictor_dims, std::move(predictor));
  Matrix core = Matrix::Zero(yspec.feature_count(), xspec.feature_count() * shape.lag);
  HtarModel model(shape.lag, std::move(yspec), std::move(xspec), std::move(core));
  update_core(model, data, ridge);
  return model;
}

FitResult refine_als(const LaggedData& data, HtarModel start, const FitConfig& config) {
  if (config.max_sweeps < 1 || !(config.rel_loss_tol > 0.0) || config.ridge_eps < 0.0) {
    throw InvalidArgument("invalid fit configuration");
  }
  FitResult result{std::move(start), {}};
  HtarModel& model = result.model;
  FitReport& report = result.report;
  Workspace ws(model, data, config.ridge_eps);
  double previous = ws.loss();
  report.initial_loss = previous;
  const bool active = model.core.size() > 0;
  const double floor = std::max(1e-10 * data.responses().squaredNorm() / static_cast<double>(data.samples()), kTiny);
  for (int sweep = 0; sweep < config.max_sweeps && active; ++sweep) {
    for (Index k = 0; k < model.predictor.stack_count(); ++k) {
      for (Index c = 0; c < model.predictor.stacks[static_cast<std::size_t>(k)].modes(); ++c) {
        ws.update_predictor_block(k, c);
      }
    }
    for (Index k = 0; k < model.response.stack_count(); ++k) {
      for (Index c = 0; c < model.response.stacks[static_cast<std::size_t>(k)].modes(); ++c) {
        ws.update_response_block(k, c);
      }
    }
    ws.renormalize();
    ws.update_core();
    const double current = ws.loss();
    if (!std::isfinite(current)) throw NumericalError("loss became non-finite at sweep " + std::to_string(sweep + 1));
    report.loss_trajectory.push_back(current);
    report.sweeps_used = sweep + 1;
    if (std::abs(previous - current) <= config.rel_loss_tol * std::max(previous, floor)) {
      report.converged = true;
      break;
    }
    previous = current;
  }
  if (!active) report.converged = true;
  report.final_loss = ws.loss();
  report.d = param_count(model);
  report.bic = bic(std::max(report.final_loss, kLossFloor), report.d, data.samples(), config.phi);
  return result;
}

FitResult fit_als(const LaggedData& data, const ModelShape& shape, const FitConfig& config) {
  if (config.restarts < 0) throw InvalidArgument("restarts must be non-negative");
  if (!config.warm && config.restarts < 1) throw InvalidArgument("need a warm start or at least one restart");
  std::optional<FitResult> best;
  std::string last_error;
  if (config.warm) {
    try {
      best = refine_als(data, *config.warm, config);
    } catch (const NumericalError& e) {
      last_error = e.what();
    }
  }
  // Random restarts also run after a failed warm start.
  const int restarts = config.warm && !best ? std::max(config.restarts, 1) : config.restarts;
  for (int restart = 0; restart < restarts; ++restart) {
    try {
      Rng rng(derived_seed(config.seed, static_cast<std::uint64_t>(restart)));
      FitResult candidate = refine_als(data, initial_model(shape, data, rng, config.ridge_eps), config);
      candidate.report.restart = restart;
      if (!best || candidate.report.final_loss < best->report.final_loss) best = std::move(candidate);
    } catch (const NumericalError& e) {
      last_error = e.what();
    }
  }
  if (!best) throw NumericalError("every start failed: " + last_error);
  return std::move(*best);
}

} // namespace htar
