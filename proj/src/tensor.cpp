#include "htar/tensor.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/KroneckerProduct>

#include "htar/error.hpp"

namespace htar {

Index shape_size(std::span<const Index> shape) {
  Index total = 1;
  for (std::size_t j = 0; j < shape.size(); ++j) {
    if (shape[j] < 1) {
      throw InvalidArgument("shape entry " + std::to_string(j + 1) + " must be positive, got " +
                            std::to_string(shape[j]));
    }
    if (total > std::numeric_limits<Index>::max() / shape[j]) {
      throw InvalidArgument("shape product overflows: " + shape_to_string(shape));
    }
    total *= shape[j];
  }
  return total;
}

std::string shape_to_string(std::span<const Index> shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t j = 0; j < shape.size(); ++j) {
    if (j) out << ',';
    out << shape[j];
  }
  out << ')';
  return out.str();
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
  data_ = Vector::Zero(shape_size(shape_));
}

DenseTensor::DenseTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  const Index expected = shape_size(shape_);
  if (data_.size() != expected) {
    throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_to_string(shape_));
  }
}

double DenseTensor::operator()(std::span<const Index> index) const {
  if (index.size() != shape_.size()) throw InvalidArgument("index arity does not match tensor order");
  Index linear = 0;
  Index stride = 1;
  for (std::size_t j = 0; j < shape_.size(); ++j) {
    if (index[j] < 0 || index[j] >= shape_[j]) {
      throw InvalidArgument("index out of range at mode " + std::to_string(j + 1));
    }
    linear += index[j] * stride;
    stride *= shape_[j];
  }
  return data_[linear];
}

ActionOrder::ActionOrder(std::vector<Index> perm) : perm_(std::move(perm)) {
  std::vector<bool> seen(perm_.size(), false);
  for (Index p : perm_) {
    if (p < 0 || p >= static_cast<Index>(perm_.size()) || seen[static_cast<std::size_t>(p)]) {
      std::ostringstream msg;
      msg << "action order is not a permutation of 1.." << perm_.size() << ":";
      for (Index q : perm_) msg << ' ' << q + 1;
      throw InvalidArgument(msg.str());
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
}

ActionOrder ActionOrder::from_one_based(std::span<const Index> perm) {
  std::vector<Index> zero(perm.begin(), perm.end());
  for (auto& p : zero) --p;
  return ActionOrder(std::move(zero));
}

ActionOrder ActionOrder::identity(Index modes) {
  std::vector<Index> perm(static_cast<std::size_t>(modes));
  std::iota(perm.begin(), perm.end(), Index{0});
  return ActionOrder(std::move(perm));
}

std::vector<ActionOrder> ActionOrder::all(Index modes) {
  std::vector<Index> perm(static_cast<std::size_t>(modes));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<ActionOrder> out;
  do {
    out.emplace_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

bool ActionOrder::is_identity() const {
  for (std::size_t m = 0; m < perm_.size(); ++m) {
    if (perm_[m] != static_cast<Index>(m)) return false;
  }
  return true;
}

ActionOrder ActionOrder::inverse() const {
  std::vector<Index> inv(perm_.size());
  for (std::size_t m = 0; m < perm_.size(); ++m) inv[static_cast<std::size_t>(perm_[m])] = static_cast<Index>(m);
  return ActionOrder(std::move(inv));
}

std::string ActionOrder::label() const {
  std::string out;
  for (std::size_t m = 0; m < perm_.size(); ++m) {
    if (m) out += '-';
    out += std::to_string(perm_[m] + 1);
  }
  return out;
}

Vector vec(const DenseTensor& x) { return x.data(); }

Matrix seq_matricize(const DenseTensor& x, Index s) {
  if (s < 1 || s > x.order()) {
    throw InvalidArgument("sequential matricization mode " + std::to_string(s) + " outside 1.." +
                          std::to_string(x.order()));
  }
  Index rows = 1;
  for (Index j = 0; j < s; ++j) rows *= x.shape()[static_cast<std::size_t>(j)];
  return Eigen::Map<const Matrix>(x.data().data(), rows, x.size() / rows);
}

Matrix mode_matricize(const DenseTensor& x, Index mode) {
  if (mode < 0 || mode >= x.order()) {
    throw InvalidArgument("mode " + std::to_string(mode + 1) + " outside 1.." + std::to_string(x.order()));
  }
  const auto& dims = x.shape();
  const Index pn = dims[static_cast<std::size_t>(mode)];
  Index inner = 1;
  for (Index j = 0; j < mode; ++j) inner *= dims[static_cast<std::size_t>(j)];
  const Index outer = x.size() / (inner * pn);
  // vec(X) viewed as inner x pn x outer; column index is (inner, outer) inner-fastest.
  Matrix out(pn, inner * outer);
  const double* src = x.data().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < pn; ++i) {
      for (Index a = 0; a < inner; ++a) {
        out(i, a + inner * o) = src[a + inner * (i + pn * o)];
      }
    }
  }
  return out;
}

Matrix kron(const Matrix& a, const Matrix& b) { return Eigen::kroneckerProduct(a, b).eval(); }

Shape permuted_shape(std::span<const Index> dims, const ActionOrder& order) {
  if (static_cast<Index>(dims.size()) != order.size()) {
    throw InvalidArgument("action order of length " + std::to_string(order.size()) + " applied to a " +
                          std::to_string(dims.size()) + "-mode shape");
  }
  Shape out(dims.size());
  for (Index m = 0; m < order.size(); ++m) out[static_cast<std::size_t>(m)] = dims[static_cast<std::size_t>(order[m])];
  return out;
}

std::vector<Index> permutation_gather(std::span<const Index> dims, const ActionOrder& order) {
  const Shape out_dims = permuted_shape(dims, order);
  const Index total = shape_size(dims);
  const std::size_t d = dims.size();

  std::vector<Index> in_stride(d);
  Index stride = 1;
  for (std::size_t j = 0; j < d; ++j) {
    in_stride[j] = stride;
    stride *= dims[j];
  }
  // Output mode m walks input mode order[m].
  std::vector<Index> step(d);
  for (std::size_t m = 0; m < d; ++m) step[m] = in_stride[static_cast<std::size_t>(order[static_cast<Index>(m)])];

  std::vector<Index> map(static_cast<std::size_t>(total));
  std::vector<Index> counter(d, 0);
  Index src = 0;
  for (Index i = 0; i < total; ++i) {
    map[static_cast<std::size_t>(i)] = src;
    for (std::size_t m = 0; m < d; ++m) {
      if (++counter[m] < out_dims[m]) {
        src += step[m];
        break;
      }
      src -= step[m] * (out_dims[m] - 1);
      counter[m] = 0;
    }
  }
  return map;
}

DenseTensor permute_modes(const DenseTensor& x, const ActionOrder& order) {
  Shape out_dims = permuted_shape(x.shape(), order);
  if (order.is_identity()) return x;
  const auto map = permutation_gather(x.shape(), order);
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = x.data()[map[static_cast<std::size_t>(i)]];
  return DenseTensor(std::move(out_dims), std::move(out));
}

Matrix permutation_matrix(const ActionOrder& order, std::span<const Index> dims) {
  const Index total = shape_size(dims);
  if (total > kMaxPermutationMatrixSize) {
    throw InvalidArgument("permutation matrix of size " + std::to_string(total) + " exceeds the cap of " +
                          std::to_string(kMaxPermutationMatrixSize) + "; use permute_modes instead");
  }
  const auto map = permutation_gather(dims, order);
  Matrix t = Matrix::Zero(total, total);
  for (Index i = 0; i < total; ++i) t(i, map[static_cast<std::size_t>(i)]) = 1.0;
  return t;
}

} // namespace htar
