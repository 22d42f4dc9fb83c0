#pragma once

#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace htar {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Shape = std::vector<Index>;

/// Product of the entries of a shape. Throws on non-positive entries or overflow.
Index shape_size(std::span<const Index> shape);

std::string shape_to_string(std::span<const Index> shape);

/**
 * Dense multiway array of doubles.
 *
 * Storage is mode-1-fastest (column-major multi-index): the entry at 0-based
 * index (i_1, ..., i_d) lives at i_1 + p_1 i_2 + p_1 p_2 i_3 + ... . This is the
 * single linearization convention used by every matricization, permutation
 * and loading in the library, so `data()` is vec(X).
 */
class DenseTensor {
public:
  DenseTensor() = default;
  /// Zero tensor of the given shape.
  explicit DenseTensor(Shape shape);
  DenseTensor(Shape shape, Vector data);

  const Shape& shape() const { return shape_; }
  Index order() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  const Vector& data() const { return data_; }

  /// Entry at a 0-based multi-index.
  double operator()(std::span<const Index> index) const;
  double operator()(std::initializer_list<Index> index) const {
    return (*this)(std::span<const Index>(index.begin(), index.size()));
  }

private:
  Shape shape_;
  Vector data_;
};

/**
 * Permutation of the modes {1..M}, stored 0-based.
 *
 * Output mode m of `permute_modes(X, order)` carries input mode `order[m]`.
 * Use `from_one_based` for user-facing input; `label()` prints 1-based.
 */
class ActionOrder {
public:
  ActionOrder() = default;
  /// 0-based permutation; throws InvalidArgument if not a bijection.
  explicit ActionOrder(std::vector<Index> perm);

  static ActionOrder from_one_based(std::span<const Index> perm);
  static ActionOrder from_one_based(std::initializer_list<Index> perm) {
    return from_one_based(std::span<const Index>(perm.begin(), perm.size()));
  }
  static ActionOrder identity(Index modes);
  /// All M! orders, lexicographic.
  static std::vector<ActionOrder> all(Index modes);

  Index size() const { return static_cast<Index>(perm_.size()); }
  Index operator[](Index m) const { return perm_[static_cast<std::size_t>(m)]; }
  const std::vector<Index>& perm() const { return perm_; }
  bool is_identity() const;
  ActionOrder inverse() const;

  /// 1-based, dash separated, e.g. "3-2-1".
  std::string label() const;

  friend bool operator==(const ActionOrder&, const ActionOrder&) = default;

private:
  std::vector<Index> perm_;
};

/// vec(X): the mode-1-fastest linearization.
Vector vec(const DenseTensor& x);

/// [X]_s: rows index the leading `s` modes, columns the rest (1 <= s <= d).
Matrix seq_matricize(const DenseTensor& x, Index s);

/// Mode-n unfolding, `mode` 0-based. Columns run over the remaining modes in
/// ascending order, mode-1-fastest.
Matrix mode_matricize(const DenseTensor& x, Index mode);

Matrix kron(const Matrix& a, const Matrix& b);

/// Shape of the permuted tensor: entry m is dims[order[m]].
Shape permuted_shape(std::span<const Index> dims, const ActionOrder& order);

/**
 * Gather map of the mode permutation: vec(permute_modes(X, order))[i] equals
 * vec(X)[map[i]]. O(P) to build; this is what production code uses instead of
 * `permutation_matrix`.
 */
std::vector<Index> permutation_gather(std::span<const Index> dims, const ActionOrder& order);

DenseTensor permute_modes(const DenseTensor& x, const ActionOrder& order);

/// Explicit 0/1 matrix with vec(permute_modes(X, order)) = T vec(X).
/// Small P only; throws InvalidArgument above `kMaxPermutationMatrixSize`.
Matrix permutation_matrix(const ActionOrder& order, std::span<const Index> dims);

inline constexpr Index kMaxPermutationMatrixSize = 8192;

} // namespace htar
