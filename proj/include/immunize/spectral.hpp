#pragma once

// Dense linear-algebra substrate: compact SVD, condition numbers, covariance
// and probe-Hessian construction, and the ridge-regularized solve used to
// precondition regularizer gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "immunize/error.hpp"

namespace immunize {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Compact SVD: M ~= U * diag(sigma) * V^T with only the retained triples.
struct SpectralDecomposition {
  Matrix U;      // p_r x k
  Vector sigma;  // length k, descending, all > 0
  Matrix V;      // p_c x k
  Index rank = 0;

  double sigma_max() const { return sigma(0); }
  double sigma_min() const { return sigma(rank - 1); }
};

struct Spectrum {
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  double kappa = 0.0;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_nonempty(const Matrix& m, const char* what) {
  if (m.rows() == 0 || m.cols() == 0) throw error(errc::empty_matrix, what);
}

/// Default relative rank threshold max(p_r, p_c) * eps.
inline double default_rank_tolerance(const Matrix& m) {
  return static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon();
}

inline bool is_symmetric(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-13 * scale;
}

namespace detail {

inline SpectralDecomposition truncate(const Matrix& U, const Vector& sigma, const Matrix& V,
                                      const std::vector<Index>& order, double rel_tol) {
  SpectralDecomposition out;
  const double smax = order.empty() ? 0.0 : sigma(order.front());
  Index k = 0;
  if (smax > 0.0) {
    for (Index idx : order) {
      if (sigma(idx) > rel_tol * smax) ++k;
      else break;
    }
  }
  out.rank = k;
  out.U.resize(U.rows(), k);
  out.V.resize(V.rows(), k);
  out.sigma.resize(k);
  for (Index j = 0; j < k; ++j) {
    out.U.col(j) = U.col(order[j]);
    out.V.col(j) = V.col(order[j]);
    out.sigma(j) = sigma(order[j]);
  }
  return out;
}

inline std::vector<Index> descending_order(const Vector& values) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) > values(b); });
  return order;
}

// Symmetric inputs: eigendecomposition, singulars = |lambda|. For PSD
// matrices this yields U == V exactly.
inline SpectralDecomposition svd_symmetric(const Matrix& m, double rel_tol) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw error(errc::numerical_failure, "symmetric eigensolver did not converge");
  const Vector lambda = eig.eigenvalues();
  const Vector absval = lambda.cwiseAbs();
  Matrix V = eig.eigenvectors();
  // Fix the sign so the largest-magnitude entry of each vector is positive.
  for (Index j = 0; j < V.cols(); ++j) {
    Index arg = 0;
    V.col(j).cwiseAbs().maxCoeff(&arg);
    if (V(arg, j) < 0.0) V.col(j) = -V.col(j);
  }
  Matrix U = V;
  for (Index j = 0; j < V.cols(); ++j)
    if (lambda(j) < 0.0) U.col(j) = -V.col(j);
  return truncate(U, absval, V, descending_order(absval), rel_tol);
}

inline SpectralDecomposition svd_general(const Matrix& m, double rel_tol) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw error(errc::numerical_failure, "SVD did not converge");
  const Vector s = svd.singularValues();
  return truncate(svd.matrixU(), s, svd.matrixV(), descending_order(s), rel_tol);
}

}  // namespace detail

/// Compact SVD keeping triples with sigma_i > rel_tol * sigma_max.
/// A zero matrix yields rank 0. Symmetric inputs go through the symmetric
/// eigensolver so that PSD matrices get U == V.
inline SpectralDecomposition svd_compact(const Matrix& m, std::optional<double> rel_tol = std::nullopt) {
  require_nonempty(m, "svd_compact on an empty matrix");
  if (!all_finite(m)) throw error(errc::numerical_failure, "svd_compact on a non-finite matrix");
  const double tol = rel_tol.value_or(default_rank_tolerance(m));
  if (tol < 0.0) throw error(errc::invalid_spec, "rank tolerance must be >= 0");
  return is_symmetric(m) ? detail::svd_symmetric(m, tol) : detail::svd_general(m, tol);
}

inline Spectrum spectrum_of(const SpectralDecomposition& d) {
  if (d.rank == 0) throw error(errc::zero_matrix, "all singular values below tolerance");
  return {d.sigma_max(), d.sigma_min(), d.sigma_max() / d.sigma_min()};
}

/// kappa = sigma_max / sigma_min over the nonzero singular values.
inline Spectrum condition_number(const Matrix& m) { return spectrum_of(svd_compact(m)); }

/// X^T X, exactly symmetric.
inline Matrix covariance(const Matrix& x) {
  require_nonempty(x, "covariance of an empty data matrix");
  Matrix k = Matrix::Zero(x.cols(), x.cols());
  k.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  return k.selfadjointView<Eigen::Lower>();
}

/// Linear-probing Hessian theta^T K theta, exactly symmetric.
inline Matrix hessian(const Matrix& theta, const Matrix& k) {
  require_nonempty(theta, "hessian with empty theta");
  if (theta.rows() != theta.cols() || k.rows() != k.cols() || k.rows() != theta.rows())
    throw error(errc::dimension_mismatch, "hessian expects square theta and K of the same size");
  const Matrix h = theta.transpose() * k * theta;
  return 0.5 * (h + h.transpose());
}

/// Singular values of theta^T K theta predicted from the alignment between
/// theta's left singular vectors and K's eigenvectors:
///   sigma_i = sum_j (s_i (u_i . q_j) sqrt(gamma_j))^2,
/// where gamma_j are the singular values of K. Exact when the left singular
/// vectors of theta coincide with eigenvectors of K; a diagnostic otherwise.
inline Vector predicted_singular_values(const Matrix& theta, const Matrix& k) {
  require_nonempty(theta, "predicted_singular_values with empty theta");
  if (theta.rows() != theta.cols() || k.rows() != k.cols() || k.rows() != theta.rows())
    throw error(errc::dimension_mismatch, "predicted_singular_values expects matching square matrices");
  Eigen::BDCSVD<Matrix> svd(theta, Eigen::ComputeFullU);
  if (svd.info() != Eigen::Success) throw error(errc::numerical_failure, "SVD of theta did not converge");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (k + k.transpose()));
  if (eig.info() != Eigen::Success) throw error(errc::numerical_failure, "eigensolver on K did not converge");
  const Vector gamma = eig.eigenvalues().cwiseAbs();
  const Matrix align = svd.matrixU().transpose() * eig.eigenvectors();  // (i, j) -> u_i . q_j
  const Vector s = svd.singularValues();
  Vector out(theta.rows());
  for (Index i = 0; i < theta.rows(); ++i) {
    double acc = 0.0;
    for (Index j = 0; j < theta.rows(); ++j) {
      const double term = s(i) * align(i, j) * std::sqrt(gamma(j));
      acc += term * term;
    }
    out(i) = acc;
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

inline constexpr double default_ridge = 1e-6;

/// Solves (K + ridge I) Z = G with a Cholesky factorization.
inline Matrix precond_apply(const Matrix& k, const Matrix& g, double ridge = default_ridge) {
  require_nonempty(k, "precond_apply with empty K");
  if (k.rows() != k.cols() || g.rows() != k.rows())
    throw error(errc::dimension_mismatch, "precond_apply expects square K with rows(G) == rows(K)");
  if (ridge < 0.0) throw error(errc::invalid_spec, "ridge must be >= 0");
  Matrix reg = 0.5 * (k + k.transpose());
  reg.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(reg);
  if (llt.info() != Eigen::Success || !(llt.rcond() > std::numeric_limits<double>::epsilon()))
    throw error(errc::singular_system, "regularized covariance is numerically singular");
  return llt.solve(g);
}

}  // namespace immunize
