#include <gtest/gtest.h>

#include "immunize/adam.hpp"

using namespace immunize;

TEST(Adam, FirstStepIsBiasCorrected) {
  AdamState s;
  const Matrix u = adam_step(s, Matrix::Constant(1, 1, 1.0), 0.1);
  EXPECT_NEAR(u(0, 0), -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, ZeroGradientZeroUpdate) {
  AdamState s(2, 3);
  EXPECT_EQ(adam_step(s, Matrix::Zero(2, 3), 0.5), Matrix::Zero(2, 3));
}

TEST(Adam, ConstantGradientUpdateTendsToEta) {
  AdamState s;
  Matrix u;
  for (int t = 0; t < 5000; ++t) u = adam_step(s, Matrix::Constant(1, 1, -3.0), 0.01);
  EXPECT_NEAR(u(0, 0), 0.01, 1e-9);
}

TEST(Adam, HandComputedSecondStep) {
  AdamState s;
  adam_step(s, Matrix::Constant(1, 1, 2.0), 1.0);
  const Matrix u = adam_step(s, Matrix::Constant(1, 1, -1.0), 1.0);
  const double m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0;
  const double v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
  const double expected = -(m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(u(0, 0), expected, 1e-14);
}

TEST(Adam, ShapeMismatchThrows) {
  AdamState s(2, 2);
  EXPECT_THROW(adam_step(s, Matrix::Zero(3, 2), 0.1), error);
}
