#include "htar/loading.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "htar/error.hpp"

namespace htar {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

Index keep_count(const Vector& sigma, double tol, Index rows, Index cols) {
  if (sigma.size() == 0) return 0;
  const double largest = sigma[0];
  if (largest <= 0.0) return 0;
  const double floor = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
  const double cutoff = std::max(tol, floor) * largest;
  Index keep = 0;
  while (keep < sigma.size() && sigma[keep] > cutoff) ++keep;
  return keep;
}

Matrix gather_rows(const Eigen::Ref<const Matrix>& columns, const std::vector<Index>& map) {
  Matrix out(columns.rows(), columns.cols());
  for (Index j = 0; j < columns.cols(); ++j) {
    const double* src = columns.col(j).data();
    double* dst = out.col(j).data();
    for (std::size_t i = 0; i < map.size(); ++i) dst[i] = src[map[i]];
  }
  return out;
}

void check_input(const LoadingStack& stack, Index rows) {
  if (rows != stack.input_size()) {
    throw InvalidArgument("input of length " + std::to_string(rows) + " does not match loading dims " +
                          shape_to_string(stack.dims()));
  }
}

} // namespace

LoadingStack::LoadingStack(ActionOrder order, Shape dims, std::vector<Matrix> components)
    : order_(std::move(order)), dims_(std::move(dims)), components_(std::move(components)) {
  shape_size(dims_);
  if (order_.size() != static_cast<Index>(dims_.size())) {
    throw InvalidArgument("action order " + order_.label() + " does not match " + std::to_string(dims_.size()) +
                          " modes");
  }
  if (components_.size() != dims_.size()) {
    throw InvalidArgument("loading stack needs " + std::to_string(dims_.size()) + " components, got " +
                          std::to_string(components_.size()));
  }
  Index incoming = 1;
  for (Index c = 0; c < modes(); ++c) {
    const Matrix& g = component(c);
    if (g.rows() != incoming * step_dim(c)) {
      throw InvalidArgument("component " + std::to_string(c + 1) + " has " + std::to_string(g.rows()) +
                            " rows, expected " + std::to_string(incoming) + " x " + std::to_string(step_dim(c)));
    }
    if (g.cols() < 1) throw InvalidArgument("component " + std::to_string(c + 1) + " has no columns");
    incoming = g.cols();
  }
}

RankProfile LoadingStack::profile() const {
  RankProfile out(components_.size() + 1);
  out[0] = 1;
  for (std::size_t c = 0; c < components_.size(); ++c) out[c + 1] = components_[c].cols();
  return out;
}

Index LoadingStack::rank(Index m) const { return m == 0 ? 1 : components_[static_cast<std::size_t>(m - 1)].cols(); }

void LoadingStack::set_component(Index m, Matrix g) {
  auto& slot = components_.at(static_cast<std::size_t>(m));
  if (g.rows() != slot.rows() || g.cols() != slot.cols()) {
    throw InvalidArgument("component " + std::to_string(m + 1) + " replacement has shape " +
                          std::to_string(g.rows()) + "x" + std::to_string(g.cols()) + ", expected " +
                          std::to_string(slot.rows()) + "x" + std::to_string(slot.cols()));
  }
  slot = std::move(g);
}

bool LoadingStack::is_feasible() const {
  for (Index c = 0; c < modes(); ++c) {
    if (rank(c + 1) > rank(c) * step_dim(c)) return false;
  }
  return true;
}

double LoadingStack::orthonormality_error() const {
  double worst = 0.0;
  for (const auto& g : components_) {
    const Matrix gram = g.transpose() * g;
    worst = std::max(worst, (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
  }
  return worst;
}

LoadingSpec::LoadingSpec(Side side_, Shape dims_, std::vector<LoadingStack> stacks_)
    : side(side_), dims(std::move(dims_)), stacks(std::move(stacks_)) {
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    if (stacks[k].dims() != dims) {
      throw InvalidArgument("stack " + std::to_string(k + 1) + " has dims " + shape_to_string(stacks[k].dims()) +
                            ", expected " + shape_to_string(dims));
    }
  }
}

Index LoadingSpec::feature_count() const {
  Index total = 0;
  for (const auto& s : stacks) total += s.feature_count();
  return total;
}

Index LoadingSpec::feature_offset(Index k) const {
  Index total = 0;
  for (Index j = 0; j < k; ++j) total += stacks[static_cast<std::size_t>(j)].feature_count();
  return total;
}

namespace detail {

Index rest_size(const LoadingStack& stack, Index c) {
  Index rest = 1;
  for (Index j = c + 1; j < stack.modes(); ++j) rest *= stack.step_dim(j);
  return rest;
}

Matrix permuted_columns(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns) {
  check_input(stack, columns.rows());
  return stack.order().is_identity() ? Matrix(columns)
                                     : gather_rows(columns, permutation_gather(stack.dims(), stack.order()));
}

Matrix advance_state(const LoadingStack& stack, const Eigen::Ref<const Matrix>& state, Index from, Index to) {
  if (from >= to) return state;
  if (state.outerStride() != state.rows()) return advance_state(stack, Matrix(state), from, to);
  const Index n = state.cols();
  Matrix current;
  Index per_column = state.rows();
  for (Index c = from; c < to; ++c) {
    const Matrix& g = stack.component(c);
    const Index width = per_column / g.rows() * n;
    const double* source = c == from ? state.data() : current.data();
    Matrix next(g.cols(), width);
    next.noalias() = g.transpose() * ConstMap(source, g.rows(), width);
    per_column = per_column / g.rows() * g.cols();
    current = MutMap(next.data(), per_column, n);
  }
  return current;
}

Matrix prefix_state(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns, Index steps) {
  return advance_state(stack, permuted_columns(stack, columns), 0, steps);
}

Matrix suffix_matrix(const LoadingStack& stack, Index c) {
  const Index features = stack.feature_count();
  Matrix current = Matrix::Identity(features, features);
  for (Index j = stack.modes() - 1; j > c; --j) {
    const Matrix& g = stack.component(j);
    const Index width = current.size() / g.cols();
    Matrix next(g.rows(), width);
    next.noalias() = g * ConstMap(current.data(), g.cols(), width);
    current = MutMap(next.data(), next.size() / features, features);
  }
  return current;
}

Matrix prefix_gram(const LoadingStack& stack, Index c) {
  Matrix gram = Matrix::Identity(1, 1);
  for (Index j = 0; j < c; ++j) {
    const Matrix& g = stack.component(j);
    const Index p = stack.step_dim(j);
    const Matrix lifted = kron(Matrix::Identity(p, p), gram);
    gram = g.transpose() * lifted * g;
  }
  return gram;
}

Matrix absorb_left(const Matrix& g, const Matrix& r, Index p) {
  const Index r_old = g.rows() / p;
  if (r_old * p != g.rows() || r.cols() != r_old) throw InvalidArgument("absorb_left: incompatible shapes");
  Matrix out(r.rows(), p * g.cols());
  out.noalias() = r * ConstMap(g.data(), r_old, p * g.cols());
  return MutMap(out.data(), r.rows() * p, g.cols());
}

} // namespace detail

Matrix expand_features(const LoadingStack& stack, const Eigen::Ref<const Matrix>& features) {
  const Index n = features.cols();
  if (features.rows() != stack.feature_count()) {
    throw InvalidArgument("expand_features: got " + std::to_string(features.rows()) + " features, stack has " +
                          std::to_string(stack.feature_count()));
  }
  Matrix current = features;
  for (Index c = stack.modes() - 1; c >= 0; --c) {
    const Matrix& g = stack.component(c);
    const Index width = current.size() / g.cols();
    Matrix next(g.rows(), width);
    next.noalias() = g * ConstMap(current.data(), g.cols(), width);
    current = std::move(next);
  }
  Matrix permuted = MutMap(current.data(), stack.input_size(), n);
  if (stack.order().is_identity()) return permuted;
  const auto map = permutation_gather(stack.dims(), stack.order());
  Matrix out(stack.input_size(), n);
  for (Index j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < map.size(); ++i) out(map[i], j) = permuted(static_cast<Index>(i), j);
  }
  return out;
}

Matrix assemble_block(const LoadingStack& stack) {
  return expand_features(stack, Matrix::Identity(stack.feature_count(), stack.feature_count()));
}

Matrix assemble_loading(const LoadingSpec& spec) {
  Matrix out(shape_size(spec.dims), spec.feature_count());
  Index offset = 0;
  for (const auto& stack : spec.stacks) {
    out.middleCols(offset, stack.feature_count()) = assemble_block(stack);
    offset += stack.feature_count();
  }
  return out;
}

Matrix extract_features(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns) {
  return detail::prefix_state(stack, columns, stack.modes());
}

Matrix extract_features(const LoadingSpec& spec, const Eigen::Ref<const Matrix>& columns) {
  Matrix out(spec.feature_count(), columns.cols());
  Index offset = 0;
  for (const auto& stack : spec.stacks) {
    out.middleRows(offset, stack.feature_count()) = extract_features(stack, columns);
    offset += stack.feature_count();
  }
  return out;
}

Vector extract_features(const DenseTensor& x, const LoadingStack& stack) {
  if (x.shape() != stack.dims()) {
    throw InvalidArgument("tensor shape " + shape_to_string(x.shape()) + " does not match loading dims " +
                          shape_to_string(stack.dims()));
  }
  return extract_features(stack, x.data());
}

Reduction sequential_svd(const Eigen::Ref<const Matrix>& basis, const Shape& dims, const ActionOrder& order,
                         double tol, const std::optional<std::vector<Index>>& max_ranks) {
  const Shape steps = permuted_shape(dims, order);
  const Index modes = static_cast<Index>(steps.size());
  if (basis.rows() != shape_size(dims)) throw InvalidArgument("sequential_svd: basis rows do not match dims");
  if (max_ranks && static_cast<Index>(max_ranks->size()) != modes) {
    throw InvalidArgument("sequential_svd: need one rank cap per mode");
  }
  Matrix carry = order.is_identity() ? Matrix(basis) : gather_rows(basis, permutation_gather(dims, order));
  std::vector<Matrix> components;
  Index incoming = 1;
  Matrix feature_map;
  for (Index c = 0; c < modes; ++c) {
    const Index rows = incoming * steps[static_cast<std::size_t>(c)];
    const Index cols = carry.size() / rows;
    Eigen::BDCSVD<Matrix> svd(ConstMap(carry.data(), rows, cols), Eigen::ComputeThinU | Eigen::ComputeThinV);
    Index keep = std::max<Index>(1, keep_count(svd.singularValues(), tol, rows, cols));
    if (max_ranks) keep = std::min(keep, (*max_ranks)[static_cast<std::size_t>(c)]);
    components.push_back(svd.matrixU().leftCols(keep));
    Matrix next = svd.singularValues().head(keep).asDiagonal() * svd.matrixV().leftCols(keep).transpose();
    if (c + 1 == modes) {
      feature_map = std::move(next);
    } else {
      carry = std::move(next);
    }
    incoming = keep;
  }
  return {LoadingStack(order, dims, std::move(components)), std::move(feature_map)};
}

Reduction compress_stack(const LoadingStack& stack, double tol) {
  const Index modes = stack.modes();
  std::vector<Matrix> comps = stack.components();

  // Right-to-left: make every component after the first row-orthonormal so the
  // left-to-right singular values are those of the full unfoldings.
  for (Index c = modes - 1; c >= 1; --c) {
    Matrix& g = comps[static_cast<std::size_t>(c)];
    const Index r_in = g.rows() / stack.step_dim(c);
    const Index width = stack.step_dim(c) * g.cols();
    const Matrix unfolded_t = ConstMap(g.data(), r_in, width).transpose();
    Eigen::HouseholderQR<Matrix> qr(unfolded_t);
    const Index kept = std::min(r_in, width);
    const Matrix q = qr.householderQ() * Matrix::Identity(width, kept);
    const Matrix r = qr.matrixQR().topRows(kept).triangularView<Eigen::Upper>();
    Matrix qt = q.transpose();
    g = MutMap(qt.data(), kept * stack.step_dim(c), g.cols());
    comps[static_cast<std::size_t>(c - 1)] = comps[static_cast<std::size_t>(c - 1)] * r.transpose();
  }

  std::vector<Matrix> out;
  Matrix carry = Matrix::Identity(1, 1);
  Matrix feature_map;
  for (Index c = 0; c < modes; ++c) {
    const Matrix g = detail::absorb_left(comps[static_cast<std::size_t>(c)], carry, stack.step_dim(c));
    Eigen::BDCSVD<Matrix> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Index keep = std::max<Index>(1, keep_count(svd.singularValues(), tol, g.rows(), g.cols()));
    if (c + 1 == modes && keep == g.cols() &&
        (g.transpose() * g - Matrix::Identity(g.cols(), g.cols())).cwiseAbs().maxCoeff() < 1e-12) {
      out.push_back(g);
      feature_map = Matrix::Identity(g.cols(), g.cols());
      break;
    }
    out.push_back(svd.matrixU().leftCols(keep));
    Matrix next = svd.singularValues().head(keep).asDiagonal() * svd.matrixV().leftCols(keep).transpose();
    if (c + 1 == modes) {
      feature_map = std::move(next);
    } else {
      carry = std::move(next);
    }
  }
  return {LoadingStack(stack.order(), stack.dims(), std::move(out)), std::move(feature_map)};
}

LoadingStack block_embed(const LoadingStack& a, const LoadingStack& b) {
  if (!(a.order() == b.order()) || a.dims() != b.dims()) {
    throw InvalidArgument("block_embed: stacks differ in order (" + a.order().label() + " vs " + b.order().label() +
                          ") or dims");
  }
  std::vector<Matrix> comps;
  for (Index c = 0; c < a.modes(); ++c) {
    const Matrix& ga = a.component(c);
    const Matrix& gb = b.component(c);
    const Index p = a.step_dim(c);
    const Index ra = a.rank(c);
    const Index rb = b.rank(c);
    const Index rows = (c == 0 ? 1 : ra + rb) * p;
    Matrix g = Matrix::Zero(rows, ga.cols() + gb.cols());
    if (c == 0) {
      g.leftCols(ga.cols()) = ga;
      g.rightCols(gb.cols()) = gb;
    } else {
      for (Index j = 0; j < p; ++j) {
        g.block(j * (ra + rb), 0, ra, ga.cols()) = ga.middleRows(j * ra, ra);
        g.block(j * (ra + rb) + ra, ga.cols(), rb, gb.cols()) = gb.middleRows(j * rb, rb);
      }
    }
    comps.push_back(std::move(g));
  }
  return LoadingStack(a.order(), a.dims(), std::move(comps));
}

Reduction merge_same_order(const LoadingStack& a, const LoadingStack& b, double tol) {
  if (!(a.order() == b.order())) {
    throw InvalidArgument("merge_same_order: orders differ (" + a.order().label() + " vs " + b.order().label() + ")");
  }
  return compress_stack(block_embed(a, b), tol);
}

Reduction reexpress(const LoadingStack& stack, const ActionOrder& target, double tol) {
  if (target.size() != stack.modes()) {
    throw InvalidArgument("reexpress: target order " + target.label() + " does not match " +
                          std::to_string(stack.modes()) + " modes");
  }
  if (target == stack.order()) {
    return {stack, Matrix::Identity(stack.feature_count(), stack.feature_count())};
  }
  return sequential_svd(assemble_block(stack), stack.dims(), target, tol);
}

Index param_count_block(const ActionOrder& order, std::span<const Index> dims, const RankProfile& profile) {
  if (static_cast<Index>(profile.size()) != order.size() + 1) {
    throw InvalidArgument("rank profile must have M + 1 entries");
  }
  Index total = 0;
  for (Index c = 0; c < order.size(); ++c) {
    total += profile[static_cast<std::size_t>(c)] * profile[static_cast<std::size_t>(c + 1)] *
             dims[static_cast<std::size_t>(order[c])];
  }
  return total;
}

Index param_count_block(const LoadingStack& stack) {
  return param_count_block(stack.order(), stack.dims(), stack.profile());
}

Matrix random_orthonormal(Index rows, Index cols, Rng& rng) {
  if (cols > rows) throw InvalidArgument("random_orthonormal: more columns than rows");
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rows, cols, rng));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

LoadingStack random_stack(const ActionOrder& order, const Shape& dims, const std::vector<Index>& ranks, Rng& rng) {
  if (static_cast<Index>(ranks.size()) != order.size()) {
    throw InvalidArgument("random_stack: need " + std::to_string(order.size()) + " ranks");
  }
  const Shape steps = permuted_shape(dims, order);
  std::vector<Matrix> comps;
  Index incoming = 1;
  for (std::size_t c = 0; c < steps.size(); ++c) {
    if (ranks[c] < 1) throw InvalidArgument("ranks must be positive");
    const Index rows = incoming * steps[c];
    const Index cols = std::min(ranks[c], rows);
    comps.push_back(random_orthonormal(rows, cols, rng));
    incoming = cols;
  }
  return LoadingStack(order, dims, std::move(comps));
}

LoadingStack pad_stack(const LoadingStack& stack, const std::vector<Index>& ranks, Rng& rng) {
  if (static_cast<Index>(ranks.size()) != stack.modes()) throw InvalidArgument("pad_stack: need one rank per mode");
  std::vector<Matrix> comps;
  Index incoming_old = 1;
  Index incoming_new = 1;
  for (Index c = 0; c < stack.modes(); ++c) {
    const Matrix& g = stack.component(c);
    const Index p = stack.step_dim(c);
    const Index rows = incoming_new * p;
    const Index cols = std::min(std::max(ranks[static_cast<std::size_t>(c)], g.cols()), rows);
    Matrix out = Matrix::Zero(rows, cols);
    for (Index j = 0; j < p; ++j) {
      out.block(j * incoming_new, 0, incoming_old, g.cols()) = g.middleRows(j * incoming_old, incoming_old);
    }
    if (cols > g.cols()) {
      const Matrix kept = out.leftCols(g.cols());
      Matrix extra = gaussian_matrix(rows, cols - g.cols(), rng);
      extra -= kept * (kept.transpose() * extra);
      Eigen::HouseholderQR<Matrix> qr(extra);
      out.rightCols(cols - g.cols()) = qr.householderQ() * Matrix::Identity(rows, cols - g.cols());
      out.rightCols(cols - g.cols()) -= kept * (kept.transpose() * out.rightCols(cols - g.cols()));
    }
    comps.push_back(std::move(out));
    incoming_old = g.cols();
    incoming_new = cols;
  }
  return LoadingStack(stack.order(), stack.dims(), std::move(comps));
}

} // namespace htar
