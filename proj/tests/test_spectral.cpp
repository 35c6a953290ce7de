#include <gtest/gtest.h>

#include "generators.hpp"
#include "immunize/spectral.hpp"
#include "oracles.hpp"

using namespace immunize;

namespace {

Matrix diag(std::initializer_list<double> v) {
  Vector d(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

}  // namespace

TEST(SvdCompact, IdentityIsItsOwnDecomposition) {
  const auto d = svd_compact(Matrix::Identity(3, 3));
  EXPECT_EQ(d.rank, 3);
  EXPECT_TRUE(d.sigma.isApprox(Vector::Ones(3)));
  EXPECT_TRUE(d.U.isApprox(Matrix::Identity(3, 3)));
  EXPECT_TRUE(d.V.isApprox(Matrix::Identity(3, 3)));
}

TEST(SvdCompact, DropsZeroSingularValue) {
  const auto d = svd_compact(diag({3, 1, 0}));
  EXPECT_EQ(d.rank, 2);
  EXPECT_DOUBLE_EQ(d.sigma(0), 3.0);
  EXPECT_DOUBLE_EQ(d.sigma(1), 1.0);
}

TEST(SvdCompact, RandomRectangularReconstructs) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Matrix m = random_normal(6, 4, rng);
    const auto d = svd_compact(m);
    ASSERT_EQ(d.rank, 4);
    const Matrix rec = d.U * d.sigma.asDiagonal() * d.V.transpose();
    EXPECT_LT((rec - m).norm() / m.norm(), 1e-8);
    EXPECT_LT((d.U.transpose() * d.U - Matrix::Identity(4, 4)).norm(), 1e-10);
    EXPECT_LT((d.V.transpose() * d.V - Matrix::Identity(4, 4)).norm(), 1e-10);
    for (Index i = 1; i < d.rank; ++i) EXPECT_GE(d.sigma(i - 1), d.sigma(i));
  }
}

TEST(SvdCompact, WideMatrixReconstructs) {
  Rng rng(12);
  const Matrix m = random_normal(3, 7, rng);
  const auto d = svd_compact(m);
  EXPECT_EQ(d.rank, 3);
  EXPECT_LT((d.U * d.sigma.asDiagonal() * d.V.transpose() - m).norm() / m.norm(), 1e-8);
}

TEST(SvdCompact, SymmetricPsdHasEqualFactors) {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    const Matrix k = gen::random_pd(6, rng);
    const auto d = svd_compact(k);
    EXPECT_EQ(d.U, d.V);
    EXPECT_LT((d.U * d.sigma.asDiagonal() * d.V.transpose() - k).norm() / k.norm(), 1e-8);
  }
}

TEST(SvdCompact, SymmetricIndefiniteUsesAbsoluteEigenvalues) {
  const Matrix m = diag({-3, 2});
  const auto d = svd_compact(m);
  EXPECT_DOUBLE_EQ(d.sigma(0), 3.0);
  EXPECT_DOUBLE_EQ(d.sigma(1), 2.0);
  EXPECT_LT((d.U * d.sigma.asDiagonal() * d.V.transpose() - m).norm(), 1e-12);
}

TEST(SvdCompact, RankDeficientProjectionReconstructs) {
  Rng rng(14);
  Vector s(5);
  s << 4, 2, 1, 0, 0;
  const Matrix m = gen::with_singulars(s, 5, 5, rng);
  const auto d = svd_compact(m);
  EXPECT_EQ(d.rank, 3);
  EXPECT_LT((d.U * d.sigma.asDiagonal() * d.V.transpose() - m).norm(), 1e-8 * m.norm());
}

TEST(SvdCompact, ErrorsOnEmptyAndNonFinite) {
  try {
    svd_compact(Matrix(0, 3));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_matrix);
  }
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = std::nan("");
  EXPECT_THROW(svd_compact(bad), error);
}

TEST(SvdCompact, ZeroMatrixHasRankZero) { EXPECT_EQ(svd_compact(Matrix::Zero(3, 3)).rank, 0); }

TEST(ConditionNumber, Examples) {
  EXPECT_DOUBLE_EQ(condition_number(Matrix::Identity(4, 4)).kappa, 1.0);
  EXPECT_NEAR(condition_number(diag({3, 1, 0.5})).kappa, 6.0, 1e-14);
  try {
    condition_number(Matrix::Zero(2, 2));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::zero_matrix);
  }
}

TEST(ConditionNumber, MatchesJacobiOracle) {
  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = random_normal(5, 5, rng);
    const auto o = oracle::jacobi_svd(m);
    const double expected = o.sigma(0) / o.sigma(4);
    EXPECT_NEAR(condition_number(m).kappa / expected, 1.0, 1e-10);
  }
}

TEST(ConditionNumber, ScaleInvariant) {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = random_normal(6, 6, rng);
    const double c = random_uniform(rng, -10, 10);
    if (std::abs(c) < 1e-3) continue;
    EXPECT_NEAR(condition_number(c * m).kappa / condition_number(m).kappa, 1.0, 1e-10);
  }
}

TEST(Covariance, Examples) {
  Matrix x(2, 2);
  x << 1, 0, 0, 2;
  EXPECT_EQ(covariance(x), diag({1, 4}));
  Matrix row(1, 2);
  row << 3, -2;
  Matrix expected(2, 2);
  expected << 9, -6, -6, 4;
  EXPECT_EQ(covariance(row), expected);
  EXPECT_THROW(covariance(Matrix(0, 2)), error);
}

TEST(Covariance, SymmetricPsdOnRandomData) {
  Rng rng(31);
  const Matrix x = random_normal(50, 8, rng);
  const Matrix k = covariance(x);
  EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(oracle::jacobi_eigenvalues(k).minCoeff(), -1e-10);
  EXPECT_LT((k - x.transpose() * x).norm(), 1e-10 * k.norm());
}

TEST(Hessian, Examples) {
  const Matrix k = diag({3, 5});
  EXPECT_EQ(hessian(Matrix::Identity(2, 2), k), k);
  EXPECT_EQ(hessian(diag({2, 1}), Matrix::Identity(2, 2)), diag({4, 1}));
  EXPECT_THROW(hessian(Matrix::Identity(2, 2), Matrix::Identity(3, 3)), error);
}

TEST(Hessian, MatchesProbeLossCurvature) {
  // L(w) = ||X theta w - y||^2 has Hessian 2 theta^T K theta.
  Rng rng(41);
  const Index n = 4;
  const Matrix x = random_normal(20, n, rng);
  const Matrix theta = random_normal(n, n, rng);
  const Vector y = random_normal(20, 1, rng);
  const Matrix h = hessian(theta, covariance(x));
  auto loss = [&](const Vector& w) { return (x * theta * w - y).squaredNorm(); };
  const Vector w0 = random_normal(n, 1, rng);
  const double step = 1e-3;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      Vector ei = Vector::Zero(n), ej = Vector::Zero(n);
      ei(i) = step;
      ej(j) = step;
      const double fd = (loss(w0 + ei + ej) - loss(w0 + ei - ej) - loss(w0 - ei + ej) + loss(w0 - ei - ej)) /
                        (4.0 * step * step);
      EXPECT_NEAR(fd, 2.0 * h(i, j), 1e-6 * (1.0 + std::abs(h(i, j))));
    }
  }
}

TEST(PredictedSingularValues, Examples) {
  const Vector a = predicted_singular_values(Matrix::Identity(2, 2), diag({4, 1}));
  EXPECT_NEAR(a(0), 4.0, 1e-12);
  EXPECT_NEAR(a(1), 1.0, 1e-12);
  const Vector b = predicted_singular_values(diag({2, 1}), diag({4, 1}));
  EXPECT_NEAR(b(0), 16.0, 1e-12);
  EXPECT_NEAR(b(1), 1.0, 1e-12);
  const auto d = svd_compact(hessian(diag({2, 1}), diag({4, 1})));
  EXPECT_NEAR(d.sigma(0), 16.0, 1e-12);
  EXPECT_THROW(predicted_singular_values(Matrix::Identity(2, 2), Matrix::Identity(3, 3)), error);
}

TEST(PredictedSingularValues, ExactWhenThetaAlignsWithK) {
  Rng rng(51);
  for (int t = 0; t < 100; ++t) {
    const Index n = 6;
    const Matrix q = random_orthogonal(n, rng);
    const Vector gamma = gen::gapped_spectrum(n, rng);
    const Matrix k = q * gamma.asDiagonal() * q.transpose();
    const Matrix theta = q * gen::gapped_spectrum(n, rng).asDiagonal() * random_orthogonal(n, rng).transpose();
    const Vector predicted = predicted_singular_values(theta, k);
    const Vector actual = oracle::jacobi_svd(hessian(theta, k)).sigma;
    EXPECT_LT((predicted - actual).cwiseAbs().maxCoeff(), 1e-10 * actual(0));
  }
}

TEST(PredictedSingularValues, CovarianceFactorReadingsAgree) {
  // Reading A: gamma_j = eigenvalue of K, weight sqrt(gamma_j).
  // Reading B: K = Q Gamma^2 Q^T, weight gamma_j = sqrt(eigenvalue).
  // Both give the same numbers; mixing them (sqrt of sqrt) does not.
  Rng rng(52);
  const Index n = 4;
  const Matrix q = random_orthogonal(n, rng);
  const Vector lam = gen::gapped_spectrum(n, rng, 0.5, 1.0);
  const Matrix k = q * lam.asDiagonal() * q.transpose();
  const Matrix theta = q * gen::gapped_spectrum(n, rng).asDiagonal();
  const Vector actual = oracle::jacobi_svd(hessian(theta, k)).sigma;
  const auto o = oracle::jacobi_svd(theta);
  auto evaluate = [&](auto weight) {
    Vector out(n);
    for (Index i = 0; i < n; ++i) {
      double acc = 0;
      for (Index j = 0; j < n; ++j) {
        const double term = o.sigma(i) * o.U.col(i).dot(q.col(j)) * weight(lam(j));
        acc += term * term;
      }
      out(i) = acc;
    }
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
  };
  const Vector reading_b = evaluate([](double l) { return std::sqrt(l); });
  const Vector mixed = evaluate([](double l) { return std::sqrt(std::sqrt(l)); });
  const Vector predicted = predicted_singular_values(theta, k);
  EXPECT_LT((predicted - actual).cwiseAbs().maxCoeff(), 1e-10 * actual(0));
  EXPECT_LT((reading_b - actual).cwiseAbs().maxCoeff(), 1e-10 * actual(0));
  EXPECT_GT((mixed - actual).cwiseAbs().maxCoeff(), 1e-3 * actual(0));
}

TEST(PrecondApply, Examples) {
  Rng rng(61);
  const Matrix g = random_normal(3, 2, rng);
  EXPECT_TRUE(precond_apply(Matrix::Identity(3, 3), g, 0.0).isApprox(g));
  EXPECT_TRUE(precond_apply(diag({4, 1}), diag({8, 3}), 0.0).isApprox(diag({2, 3})));
}

TEST(PrecondApply, ResidualSmall) {
  Rng rng(62);
  for (int t = 0; t < 20; ++t) {
    const Matrix k = gen::random_pd(8, rng);
    const Matrix g = random_normal(8, 8, rng);
    const Matrix z = precond_apply(k, g, 1e-6);
    Matrix reg = k;
    reg.diagonal().array() += 1e-6;
    EXPECT_LT((reg * z - g).norm() / g.norm(), 1e-8);
  }
}

TEST(PrecondApply, SingularWithoutRidgeThrows) {
  try {
    precond_apply(diag({1, 0}), Matrix::Identity(2, 2), 0.0);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::singular_system);
  }
}
