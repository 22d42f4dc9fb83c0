#pragma once

#include <optional>
#include <vector>

#include "htar/random.hpp"
#include "htar/tensor.hpp"

namespace htar {

/// Interim ranks (r_0 = 1, r_1, ..., r_M).
using RankProfile = std::vector<Index>;

/// Default relative singular-value cutoff for compression and re-expression.
inline constexpr double kDefaultRankTol = 1e-8;

/**
 * Component matrices {G_m} of one action order.
 *
 * Component m (0-based) has shape (r_{m-1} p_{order[m]}) x r_m, with the row
 * index split as (previous feature, current mode) previous-feature-fastest.
 * The profile is derived from the component shapes; r_0 must be 1.
 */
class LoadingStack {
public:
  LoadingStack() = default;
  /// Validates the shape chain; throws InvalidArgument naming the offending component.
  LoadingStack(ActionOrder order, Shape dims, std::vector<Matrix> components);

  const ActionOrder& order() const { return order_; }
  const Shape& dims() const { return dims_; }
  Index modes() const { return static_cast<Index>(dims_.size()); }
  const std::vector<Matrix>& components() const { return components_; }
  const Matrix& component(Index m) const { return components_[static_cast<std::size_t>(m)]; }
  RankProfile profile() const;
  Index rank(Index m) const;  ///< r_m, with rank(0) == 1
  Index feature_count() const { return rank(modes()); }
  /// Dimension consumed at step m (0-based): p_{order[m]}.
  Index step_dim(Index m) const { return dims_[static_cast<std::size_t>(order_[m])]; }
  Index input_size() const { return shape_size(dims_); }

  /// Replace component m; the new matrix must have the same shape.
  void set_component(Index m, Matrix g);

  /// r_m <= r_{m-1} p_{order[m]} for every step (required for orthonormal columns).
  bool is_feasible() const;
  /// max_m ||G_m^T G_m - I||_max.
  double orthonormality_error() const;

private:
  ActionOrder order_;
  Shape dims_;
  std::vector<Matrix> components_;
};

enum class Side { predictor, response };

/// Ordered set of stacks on one side of the model; all stacks share `dims`.
struct LoadingSpec {
  Side side = Side::predictor;
  Shape dims;
  std::vector<LoadingStack> stacks;

  LoadingSpec() = default;
  LoadingSpec(Side side, Shape dims, std::vector<LoadingStack> stacks);

  Index feature_count() const;
  /// First feature index of stack k in the concatenated feature vector.
  Index feature_offset(Index k) const;
  Index stack_count() const { return static_cast<Index>(stacks.size()); }
};

/// P x r_M matrix T(order)^T (I (x) G_1) ... G_M. Small P only.
Matrix assemble_block(const LoadingStack& stack);

/// Column concatenation of the blocks of every stack.
Matrix assemble_loading(const LoadingSpec& spec);

/// Features of one tensor by sequential contraction; equals assemble_block(stack)^T vec(x).
Vector extract_features(const DenseTensor& x, const LoadingStack& stack);

/// Batched extraction: each column of `columns` is a vec'd tensor. Returns r_M x n.
Matrix extract_features(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns);
/// Concatenated features of every stack: r x n.
Matrix extract_features(const LoadingSpec& spec, const Eigen::Ref<const Matrix>& columns);

/// Lambda * z for each column z of `features` (r_M x n); P x n, never materializing Lambda.
Matrix expand_features(const LoadingStack& stack, const Eigen::Ref<const Matrix>& features);

/// A stack together with the map back to the features it replaces:
/// Lambda_original ~= assemble_block(stack) * feature_map.
struct Reduction {
  LoadingStack stack;
  Matrix feature_map;
};

/// Truncated left-to-right SVD sweep of the columns of `basis` (P x k) under
/// `order`. Singular values <= tol * (largest) are dropped; `max_ranks` (r_1..r_M),
/// when given, caps each interim rank (which makes the result an approximation).
Reduction sequential_svd(const Eigen::Ref<const Matrix>& basis, const Shape& dims, const ActionOrder& order,
                         double tol, const std::optional<std::vector<Index>>& max_ranks = std::nullopt);

/// Minimal-profile equivalent of `stack` (orthonormality of the input not required).
Reduction compress_stack(const LoadingStack& stack, double tol = kDefaultRankTol);

/// Exact block embedding: assemble_block(result) == [assemble_block(a), assemble_block(b)].
LoadingStack block_embed(const LoadingStack& a, const LoadingStack& b);

/// Block embedding followed by compression; the feature map sends the merged
/// features to [features(a); features(b)].
Reduction merge_same_order(const LoadingStack& a, const LoadingStack& b, double tol = kDefaultRankTol);

/// Equivalent stack under another action order with the same column space.
Reduction reexpress(const LoadingStack& stack, const ActionOrder& target, double tol = kDefaultRankTol);

/// sum_m r_{m-1} r_m p_{order[m]}.
Index param_count_block(const LoadingStack& stack);
Index param_count_block(const ActionOrder& order, std::span<const Index> dims, const RankProfile& profile);

/// Random stack with orthonormal components (thin QR of Gaussian matrices).
/// `ranks` holds r_1..r_M; each is clamped to r_{m-1} p_{order[m]}.
LoadingStack random_stack(const ActionOrder& order, const Shape& dims, const std::vector<Index>& ranks, Rng& rng);

/// Orthonormal basis of a Gaussian rows x cols matrix (rows >= cols).
Matrix random_orthonormal(Index rows, Index cols, Rng& rng);

/// Grow a stack to larger ranks: existing features are kept as the leading
/// features and the new directions are random and orthogonal to the old ones.
LoadingStack pad_stack(const LoadingStack& stack, const std::vector<Index>& ranks, Rng& rng);

namespace detail {

/// Apply the permutation and the first `steps` components to each column.
/// Output column j holds the state after `steps` contractions: a matrix of
/// (rank(steps) p_{order[steps]}) x rest_size(steps), stored column-major.
Matrix prefix_state(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns, Index steps);

/// Columns reordered by the stack's action order (the state before any contraction).
Matrix permuted_columns(const LoadingStack& stack, const Eigen::Ref<const Matrix>& columns);

/// Contract a prefix state from step `from` to step `to`.
Matrix advance_state(const LoadingStack& stack, const Eigen::Ref<const Matrix>& state, Index from, Index to);

/// Components after step c as one matrix: (rank(c+1) rest_size(c)) x rank(M).
/// Identity when c is the last step.
Matrix suffix_matrix(const LoadingStack& stack, Index c);

/// P_c^T P_c for the prefix P_c built from components 0..c-1 (rank(c) x rank(c)).
Matrix prefix_gram(const LoadingStack& stack, Index c);

/// prod_{j>c} p_{order[j]}.
Index rest_size(const LoadingStack& stack, Index c);

/// (I_p (x) R) g: left-multiplies the leading feature index of the rows of g.
/// g has (r_old p) rows, R is r_new x r_old; result has (r_new p) rows.
Matrix absorb_left(const Matrix& g, const Matrix& r, Index p);

} // namespace detail

} // namespace htar
