#pragma once

#include <cstdint>
#include <random>

#include <Eigen/QR>

#include "immunize/spectral.hpp"

namespace immunize {

using Rng = std::mt19937_64;

inline Matrix random_normal(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  // Column-major fill order is fixed so a seed always maps to the same matrix.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with the R-diagonal sign fix).
inline Matrix random_orthogonal(Index n, Rng& rng) {
  const Matrix g = random_normal(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline double random_uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace immunize
