#pragma once

// Condition-number regularizers.
//
//   R_well(S) = 1/2 sigma_max^2 - 1/(2p) ||S||_F^2          (drives kappa down)
//   R_ill(S)  = 1 / (1/(2k) ||S||_F^2 - 1/2 sigma_min^2)     (drives kappa up)
//
// p is the smaller dimension of S and k its numerical rank. Both are evaluated
// in the spectral form (sums over singular values), which makes nonnegativity
// hold exactly in floating point. Gradients exist only when the relevant
// extreme singular value is simple; otherwise non_unique_extreme is raised.

#include <cmath>
#include <string_view>

#include "immunize/error.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

inline constexpr double gap_tolerance_rel = 1e-9;
inline constexpr double denom_tolerance_rel = 1e-12;

struct RegEval {
  double value = 0.0;
  Matrix grad;  // empty when only the value was requested
  Spectrum spectrum;
  double denom = 0.0;  // R_ill only: 1/(2k)||S||_F^2 - 1/2 sigma_min^2
};

enum class StepSource { well_on_s, ill_on_s, well_on_theta, ill_on_theta, fallback };

constexpr std::string_view to_string(StepSource s) noexcept {
  switch (s) {
    case StepSource::well_on_s: return "WellOnS";
    case StepSource::ill_on_s: return "IllOnS";
    case StepSource::well_on_theta: return "WellOnTheta";
    case StepSource::ill_on_theta: return "IllOnTheta";
    case StepSource::fallback: return "Fallback";
  }
  return "Unknown";
}

struct StepBound {
  double max_step = 0.0;
  StepSource source = StepSource::fallback;
};

namespace detail {

inline Index min_dim(const Matrix& s) { return std::min(s.rows(), s.cols()); }

inline void require_unique_max(const SpectralDecomposition& d) {
  const double second = d.rank >= 2 ? d.sigma(1) : 0.0;
  if (d.rank >= 2 && d.sigma(0) - second <= gap_tolerance_rel * d.sigma(0))
    throw error(errc::non_unique_extreme, "largest singular value is not simple");
}

inline void require_unique_min(const SpectralDecomposition& d) {
  if (d.rank < 2) return;
  if (d.sigma(d.rank - 2) - d.sigma(d.rank - 1) <= gap_tolerance_rel * d.sigma(0))
    throw error(errc::non_unique_extreme, "smallest nonzero singular value is not simple");
}

// 1/(2p) * sum_{i<=p} (sigma_1^2 - sigma_i^2), with dropped singulars counted as 0.
inline double well_value(const SpectralDecomposition& d, Index p) {
  const double s1 = d.sigma(0) * d.sigma(0);
  double acc = static_cast<double>(p - d.rank) * s1;
  for (Index i = 0; i < d.rank; ++i) acc += s1 - d.sigma(i) * d.sigma(i);
  return acc / (2.0 * static_cast<double>(p));
}

// 1/(2k) * sum_{i<=k} (sigma_i^2 - sigma_k^2)
inline double ill_denom(const SpectralDecomposition& d) {
  const double sk = d.sigma_min() * d.sigma_min();
  double acc = 0.0;
  for (Index i = 0; i < d.rank; ++i) acc += d.sigma(i) * d.sigma(i) - sk;
  return acc / (2.0 * static_cast<double>(d.rank));
}

inline double checked_ill_denom(const SpectralDecomposition& d) {
  const double denom = ill_denom(d);
  if (d.rank < 2 || denom <= denom_tolerance_rel * d.sigma_max() * d.sigma_max())
    throw error(errc::degenerate_spectrum, "R_ill undefined: all nonzero singular values are equal");
  return denom;
}

inline SpectralDecomposition nonzero_decomposition(const Matrix& s) {
  auto d = svd_compact(s);
  if (d.rank == 0) throw error(errc::zero_matrix, "regularizer of a zero matrix");
  return d;
}

}  // namespace detail

// --- evaluation against a precomputed decomposition ------------------------

inline RegEval r_well_eval(const Matrix& s, const SpectralDecomposition& d, bool with_grad) {
  const Index p = detail::min_dim(s);
  RegEval out;
  out.spectrum = spectrum_of(d);
  out.value = detail::well_value(d, p);
  if (with_grad) {
    detail::require_unique_max(d);
    out.grad = d.sigma(0) * d.U.col(0) * d.V.col(0).transpose() - s / static_cast<double>(p);
  }
  return out;
}

inline RegEval r_ill_eval(const Matrix& s, const SpectralDecomposition& d, bool with_grad) {
  RegEval out;
  out.spectrum = spectrum_of(d);
  out.denom = detail::checked_ill_denom(d);
  out.value = 1.0 / out.denom;
  if (with_grad) {
    detail::require_unique_min(d);
    const Index k = d.rank;
    out.grad = (d.sigma(k - 1) * d.U.col(k - 1) * d.V.col(k - 1).transpose() - s / static_cast<double>(k)) /
               (out.denom * out.denom);
  }
  return out;
}

// --- S-space -----------------------------------------------------------------

inline double r_well_value(const Matrix& s) {
  return r_well_eval(s, detail::nonzero_decomposition(s), false).value;
}

inline Matrix r_well_grad(const Matrix& s) {
  return r_well_eval(s, detail::nonzero_decomposition(s), true).grad;
}

inline RegEval r_ill_value(const Matrix& s) {
  return r_ill_eval(s, detail::nonzero_decomposition(s), false);
}

inline Matrix r_ill_grad(const Matrix& s) {
  return r_ill_eval(s, detail::nonzero_decomposition(s), true).grad;
}

// --- theta-space, H(theta) = theta^T K theta ---------------------------------

/// Chain rule through H = theta^T K theta for a symmetric H-gradient G:
/// d/dtheta <G, H(theta)> = 2 K theta G.
inline Matrix chain_through_hessian(const Matrix& theta, const Matrix& k, const Matrix& grad_h) {
  return 2.0 * (k * theta) * grad_h;
}

/// 2 K theta (sigma_1 v_1 v_1^T - H / D_in), using an existing decomposition of H.
inline Matrix r_well_grad_theta(const Matrix& theta, const Matrix& k, const Matrix& h,
                                const SpectralDecomposition& dh) {
  if (dh.rank == 0) throw error(errc::zero_matrix, "R_well of a zero Hessian");
  detail::require_unique_max(dh);
  const double d_in = static_cast<double>(theta.rows());
  const Matrix gh = dh.sigma(0) * dh.V.col(0) * dh.V.col(0).transpose() - h / d_in;
  return chain_through_hessian(theta, k, gh);
}

/// 2 K theta (sigma_k v_k v_k^T - H / k) / denom^2, using an existing decomposition of H.
inline Matrix r_ill_grad_theta(const Matrix& theta, const Matrix& k, const Matrix& h,
                               const SpectralDecomposition& dh) {
  if (dh.rank == 0) throw error(errc::zero_matrix, "R_ill of a zero Hessian");
  const double denom = detail::checked_ill_denom(dh);
  detail::require_unique_min(dh);
  const Index r = dh.rank;
  const Matrix gh = (dh.sigma(r - 1) * dh.V.col(r - 1) * dh.V.col(r - 1).transpose() - h / static_cast<double>(r)) /
                    (denom * denom);
  return chain_through_hessian(theta, k, gh);
}

inline Matrix r_well_grad_theta(const Matrix& theta, const Matrix& k) {
  const Matrix h = hessian(theta, k);
  return r_well_grad_theta(theta, k, h, svd_compact(h));
}

inline Matrix r_ill_grad_theta(const Matrix& theta, const Matrix& k) {
  const Matrix h = hessian(theta, k);
  return r_ill_grad_theta(theta, k, h, svd_compact(h));
}

// --- safe step sizes ---------------------------------------------------------

/// eta < (kappa - 1) / ((1 - 1/p) kappa + 1/p) keeps S - eta grad R_well(S) strictly better conditioned.
inline StepBound safe_step_well_on_s(const Matrix& s) {
  const auto d = detail::nonzero_decomposition(s);
  detail::require_unique_max(d);
  const double kappa = spectrum_of(d).kappa;
  if (!(kappa > 1.0)) throw error(errc::degenerate_spectrum, "kappa == 1, no admissible step");
  const double p = static_cast<double>(detail::min_dim(s));
  return {(kappa - 1.0) / ((1.0 - 1.0 / p) * kappa + 1.0 / p), StepSource::well_on_s};
}

/// eta < k/(k-1) * denom^2 keeps S - eta grad R_ill(S) strictly worse conditioned.
inline StepBound safe_step_ill_on_s(const Matrix& s) {
  const auto d = detail::nonzero_decomposition(s);
  if (d.rank < 2) throw error(errc::rank_one, "R_ill step bound needs rank >= 2");
  detail::require_unique_min(d);
  const double denom = detail::checked_ill_denom(d);
  const double k = static_cast<double>(d.rank);
  return {k / (k - 1.0) * denom * denom, StepSource::ill_on_s};
}

/// Bound for theta' = theta - eta K_P^{-1} grad_theta R_well(H_P):
///   eta < min{ 1/((1 - 1/D) s1), (sqrt(s1 s2) - s2) / ((2/D) s2^2) }.
inline StepBound safe_step_well_on_theta(const Matrix& h_p, Index d_in) {
  const auto d = detail::nonzero_decomposition(h_p);
  detail::require_unique_max(d);
  const double dd = static_cast<double>(d_in);
  const double s1 = d.sigma(0);
  const double s2 = d.rank >= 2 ? d.sigma(1) : 0.0;
  double bound = 1.0 / ((1.0 - 1.0 / dd) * s1);
  if (s2 > 0.0) bound = std::min(bound, (std::sqrt(s1 * s2) - s2) / ((2.0 / dd) * s2 * s2));
  return {bound, StepSource::well_on_theta};
}

/// A step that provably lowers kappa under the same update. With exact
/// preconditioning the update maps sigma_1 -> sigma_1 (1 - 2 eta (1-1/D) sigma_1)^2
/// and sigma_i -> sigma_i (1 + 2 eta sigma_i / D)^2; requiring the new sigma_1
/// to stay above the new sigma_2 gives
///   eta < (sqrt(s1) - sqrt(s2)) / (2 ((1 - 1/D) s1^{3/2} + s2^{3/2} / D)).
/// The min-form bound above can let sigma_1 collapse below sigma_min.
inline StepBound safe_step_well_on_theta_strict(const Matrix& h_p, Index d_in) {
  const auto d = detail::nonzero_decomposition(h_p);
  detail::require_unique_max(d);
  const double dd = static_cast<double>(d_in);
  const double s1 = d.sigma(0);
  const double s2 = d.rank >= 2 ? d.sigma(1) : 0.0;
  const double num = std::sqrt(s1) - std::sqrt(s2);
  const double den = 2.0 * ((1.0 - 1.0 / dd) * s1 * std::sqrt(s1) + s2 * std::sqrt(s2) / dd);
  return {num / den, StepSource::well_on_theta};
}

/// Bound for theta' = theta - eta K_H^{-1} grad_theta R_ill(H_H):
///   eta < denom^2 / (1 - 2 sigma_min / k).
/// When the prefactor is not positive the bound is vacuous and the S-space
/// bound for H_H is returned with source == fallback.
inline StepBound safe_step_ill_on_theta(const Matrix& h_h) {
  const auto d = detail::nonzero_decomposition(h_h);
  if (d.rank < 2) throw error(errc::rank_one, "R_ill step bound needs rank >= 2");
  detail::require_unique_min(d);
  const double denom = detail::checked_ill_denom(d);
  const double factor = 1.0 - 2.0 * d.sigma_min() / static_cast<double>(d.rank);
  if (factor > 0.0) return {denom * denom / factor, StepSource::ill_on_theta};
  return {safe_step_ill_on_s(h_h).max_step, StepSource::fallback};
}

}  // namespace immunize
