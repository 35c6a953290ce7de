#pragma once

// Reference implementations used only by the tests. Nothing here calls into
// the library's SVD or eigensolver paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Svd {
  Matrix U;
  Vector sigma;  // descending, full length min(m, n)
  Matrix V;
};

/// One-sided Jacobi (Hestenes) SVD. Rotates column pairs of A until they are
/// mutually orthogonal; column norms are then the singular values.
inline Svd jacobi_svd(const Matrix& a_in) {
  const bool wide = a_in.cols() > a_in.rows();
  Matrix a = wide ? Matrix(a_in.transpose()) : a_in;
  const Index n = a.cols();
  Matrix v = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Index i = 0; i < a.rows(); ++i) {
          const double x = a(i, p), y = a(i, q);
          a(i, p) = c * x - s * y;
          a(i, q) = s * x + c * y;
        }
        for (Index i = 0; i < n; ++i) {
          const double x = v(i, p), y = v(i, q);
          v(i, p) = c * x - s * y;
          v(i, q) = s * x + c * y;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Vector norms(n);
  for (Index j = 0; j < n; ++j) norms(j) = a.col(j).norm();
  std::sort(order.begin(), order.end(), [&](Index x, Index y) { return norms(x) > norms(y); });
  Svd out;
  out.U.resize(a.rows(), n);
  out.V.resize(n, n);
  out.sigma.resize(n);
  for (Index j = 0; j < n; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.sigma(j) = norms(src);
    out.U.col(j) = norms(src) > 0 ? Vector(a.col(src) / norms(src)) : Vector::Zero(a.rows());
    out.V.col(j) = v.col(src);
  }
  if (wide) std::swap(out.U, out.V);
  return out;
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
inline Vector jacobi_eigenvalues(const Matrix& s) {
  Matrix a = 0.5 * (s + s.transpose());
  const Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  Vector ev = a.diagonal();
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// kappa over singular values above max(m,n) * eps * sigma_max.
inline double kappa(const Matrix& m) {
  const Vector s = jacobi_svd(m).sigma;
  const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * 2.220446049250313e-16 * s(0);
  Index k = 0;
  while (k < s.size() && s(k) > tol) ++k;
  return s(0) / s(k - 1);
}

/// Central finite-difference gradient of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix xp = x;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      const double orig = xp(i, j);
      xp(i, j) = orig + h;
      const double fp = f(xp);
      xp(i, j) = orig - h;
      const double fm = f(xp);
      xp(i, j) = orig;
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace oracle
