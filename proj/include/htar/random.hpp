#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace htar {

using Rng = std::mt19937_64;

/// Matrix of i.i.d. N(0, 1) draws, filled column by column.
inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

/// Seed for replication `index` of a study seeded with `base`.
inline std::uint64_t derived_seed(std::uint64_t base, std::uint64_t index) { return base + index; }

} // namespace htar
