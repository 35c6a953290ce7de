#pragma once

#include <cmath>

#include "immunize/error.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;
  Matrix v;
  long step = 0;

  AdamState() = default;
  AdamState(Index rows, Index cols) : m(Matrix::Zero(rows, cols)), v(Matrix::Zero(rows, cols)) {}
};

/// Advances the moments with grad and returns the bias-corrected update
/// -eta * m_hat / (sqrt(v_hat) + eps), to be added to the parameters.
inline Matrix adam_step(AdamState& s, const Matrix& grad, double eta, const AdamParams& p = {}) {
  if (s.m.size() == 0) s = AdamState(grad.rows(), grad.cols());
  if (s.m.rows() != grad.rows() || s.m.cols() != grad.cols())
    throw error(errc::dimension_mismatch, "Adam state shape differs from gradient");
  ++s.step;
  s.m = p.beta1 * s.m + (1.0 - p.beta1) * grad;
  s.v = p.beta2 * s.v + (1.0 - p.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(s.step));
  return -eta * ((s.m / c1).array() / ((s.v / c2).array().sqrt() + p.eps)).matrix();
}

}  // namespace immunize
