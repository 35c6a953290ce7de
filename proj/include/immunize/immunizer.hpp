#pragma once

// Condition-number immunization of a linear feature extractor theta, plus the
// three comparison methods (R_ill only, direct kappa difference, and the
// bi-level IMMA objective).

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "immunize/adam.hpp"
#include "immunize/dataset.hpp"
#include "immunize/error.hpp"
#include "immunize/io.hpp"
#include "immunize/probe.hpp"
#include "immunize/random.hpp"
#include "immunize/regularizers.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

enum class Method { ours, rill_only, opt_kappa, imma };
enum class Optimizer { gradient_descent, adam };
enum class ThetaInit { identity, normal, perturbed_identity };
enum class InnerVar { theta, w };

constexpr std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::ours: return "Ours";
    case Method::rill_only: return "RillOnly";
    case Method::opt_kappa: return "OptKappa";
    case Method::imma: return "Imma";
  }
  return "Unknown";
}

struct ImmunizationConfig {
  double eta = 0.001;
  double lambda_P = 1.0;
  double lambda_H = 1.0;
  int epochs = 30;
  LossKind loss = LossKind::squared_error;
  double ridge = default_ridge;
  Method method = Method::ours;
  Optimizer optimizer = Optimizer::gradient_descent;
  AdamParams adam;
  std::uint64_t seed = 0;
  bool auto_balance = false;
  double balance_base = 1.0;
  ThetaInit theta_init = ThetaInit::identity;
  double theta_init_scale = 1.0;
  // IMMA
  int inner_steps = 1;
  std::optional<double> inner_lr;  // defaults to eta
  InnerVar inner_var = InnerVar::theta;
  // R_ill only: cap each step at half the theta-space safe step (gradient descent only)
  bool clip_to_safe_step = false;

  void validate() const {
    if (!(eta > 0) || !std::isfinite(eta)) throw error(errc::invalid_config, "eta must be > 0");
    if (!(lambda_P >= 0) || !(lambda_H >= 0)) throw error(errc::invalid_config, "lambdas must be >= 0");
    if (epochs < 1) throw error(errc::invalid_config, "epochs must be >= 1");
    if (!(ridge >= 0)) throw error(errc::invalid_config, "ridge must be >= 0");
    if (inner_steps < 0) throw error(errc::invalid_config, "inner_steps must be >= 0");
    if (inner_lr && !(*inner_lr > 0)) throw error(errc::invalid_config, "inner_lr must be > 0");
    if (!(theta_init_scale >= 0)) throw error(errc::invalid_config, "theta_init_scale must be >= 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double kappa_P = std::numeric_limits<double>::quiet_NaN();
  double kappa_H = std::numeric_limits<double>::quiet_NaN();
  double rir = std::numeric_limits<double>::quiet_NaN();
  double supervised_loss = std::numeric_limits<double>::quiet_NaN();
  double r_well = std::numeric_limits<double>::quiet_NaN();
  double r_ill = std::numeric_limits<double>::quiet_NaN();
  double grad_norm_supervised = 0.0;
  double grad_norm_well = 0.0;  // lambda_P * ||K_P^{-1} grad R_well||
  double grad_norm_ill = 0.0;   // lambda_H * ||K_H^{-1} grad R_ill||
};

struct TrainReport {
  Method method = Method::ours;
  std::vector<EpochRecord> epochs;  // measured at theta_t, before the update of epoch t
  Matrix theta_I;
  Matrix omega;
  double final_kappa_P = std::numeric_limits<double>::quiet_NaN();
  double final_kappa_H = std::numeric_limits<double>::quiet_NaN();
  double lambda_P = 0.0;
  double lambda_H = 0.0;
  std::vector<std::string> warnings;
};

struct ImmunizationResult {
  Matrix theta_I;
  TrainReport report;
};

/// Thrown when a parameter turns non-finite; carries the report up to that point.
class training_aborted : public error {
 public:
  training_aborted(const std::string& what, TrainReport partial)
      : error(errc::non_finite_update, what), report_(std::move(partial)) {}
  const TrainReport& report() const noexcept { return report_; }

 private:
  TrainReport report_;
};

// --- supervised loss on features X theta with head omega -----------------------

namespace detail {

/// Mean-reduced loss at logits z: value, dL/dz and the diagonal of d2L/dz2.
struct LossDerivs {
  double value = 0.0;
  Matrix r;
  Matrix c;
};

inline LossDerivs loss_derivs(const Matrix& z, const Matrix& y, LossKind loss) {
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  LossDerivs out;
  if (loss == LossKind::squared_error) {
    const Matrix diff = z - y;
    out.value = inv_n * diff.squaredNorm();
    out.r = (2.0 * inv_n) * diff;
    out.c = Matrix::Constant(z.rows(), z.cols(), 2.0 * inv_n);
    return out;
  }
  require_binary_labels(y);
  out.r.resize(z.rows(), 1);
  out.c.resize(z.rows(), 1);
  for (Index i = 0; i < z.rows(); ++i) {
    const bool clamped = std::abs(z(i, 0)) > bce_logit_clamp;
    const double zi = std::clamp(z(i, 0), -bce_logit_clamp, bce_logit_clamp);
    const double s = sigmoid(zi);
    out.value += std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi))) - y(i, 0) * zi;
    out.r(i, 0) = inv_n * (s - y(i, 0));
    out.c(i, 0) = clamped ? 0.0 : inv_n * s * (1.0 - s);
  }
  out.value *= inv_n;
  return out;
}

}  // namespace detail

struct SupervisedEval {
  double loss = 0.0;
  Matrix g_omega;  // D_in x D_out
  Matrix g_theta;  // D_in x D_in
};

/// L(D, omega, theta) = mean loss of (X theta) omega against Y, with gradients.
inline SupervisedEval supervised_loss(const Matrix& x, const Matrix& y, const Matrix& theta, const Matrix& omega,
                                      LossKind loss) {
  if (theta.rows() != x.cols() || theta.cols() != omega.rows() || omega.cols() != y.cols() || x.rows() != y.rows())
    throw error(errc::dimension_mismatch, "supervised loss: incompatible shapes");
  const Matrix f = x * theta;
  const auto d = detail::loss_derivs(f * omega, y, loss);
  return {d.value, f.transpose() * d.r, x.transpose() * d.r * omega.transpose()};
}

// --- initialization ---------------------------------------------------------

inline Matrix initial_theta(const ImmunizationConfig& cfg, Index d) {
  Rng rng(cfg.seed);
  const double sd = cfg.theta_init_scale / std::sqrt(static_cast<double>(d));
  switch (cfg.theta_init) {
    case ThetaInit::identity: return Matrix::Identity(d, d);
    case ThetaInit::normal: return random_normal(d, d, rng, sd);
    case ThetaInit::perturbed_identity: return Matrix::Identity(d, d) + random_normal(d, d, rng, sd);
  }
  return Matrix::Identity(d, d);
}

inline Matrix initial_omega(Index d, Index d_out) { return Matrix::Zero(d, d_out); }

// --- lambda balancing -------------------------------------------------------

/// Nearest value of {1,2,3,5} x 10^m in log distance.
inline double snap_to_grid(double x) {
  if (!(x > 0) || !std::isfinite(x)) throw error(errc::invalid_spec, "snap_to_grid needs a positive finite value");
  const double lx = std::log10(x);
  const double m = std::floor(lx);
  double best = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (double e : {m - 1, m, m + 1})
    for (double mult : {1.0, 2.0, 3.0, 5.0}) {
      const double cand = mult * std::pow(10.0, e);
      const double dist = std::abs(std::log10(cand) - lx);
      if (dist < best_dist) {
        best_dist = dist;
        best = cand;
      }
    }
  return best;
}

struct LambdaPair {
  double lambda_P = 0.0;
  double lambda_H = 0.0;
  double raw_P = 0.0;
  double raw_H = 0.0;
};

/// Scales lambda_P, lambda_H so each preconditioned regularizer gradient has
/// norm base * ||grad_theta L|| at theta0, then snaps both to the grid. When
/// the supervised gradient vanishes (e.g. a zero head) the reference norm is 1.
inline LambdaPair auto_balance_lambdas(const Dataset& d_p, const Matrix& x_h, const Matrix& theta0, double base,
                                       const Matrix& omega0, LossKind loss, double ridge = default_ridge) {
  const Matrix k_p = covariance(d_p.X);
  const Matrix k_h = covariance(x_h);
  const double sup = supervised_loss(d_p.X, d_p.Y, theta0, omega0, loss).g_theta.norm();
  const double ref = sup > 0 ? sup : 1.0;
  const double gw = precond_apply(k_p, r_well_grad_theta(theta0, k_p), ridge).norm();
  const double gi = precond_apply(k_h, r_ill_grad_theta(theta0, k_h), ridge).norm();
  if (!(gw > 0) || !(gi > 0)) throw error(errc::degenerate_spectrum, "regularizer gradient vanishes at theta0");
  LambdaPair out;
  out.raw_P = base * ref / gw;
  out.raw_H = base * ref / gi;
  out.lambda_P = snap_to_grid(out.raw_P);
  out.lambda_H = snap_to_grid(out.raw_H);
  return out;
}

// --- shared training plumbing -----------------------------------------------

namespace detail {

class Stepper {
 public:
  Stepper(const ImmunizationConfig& cfg) : opt_(cfg.optimizer), adam_(cfg.adam) {}

  /// Increment to add to the parameters for a descent step along grad.
  Matrix operator()(const Matrix& grad, double eta) {
    if (opt_ == Optimizer::adam) return adam_step(state_, grad, eta, adam_);
    return -(eta * grad);
  }

 private:
  Optimizer opt_;
  AdamParams adam_;
  AdamState state_;
};

inline bool is_spectral_skip(errc c) {
  return c == errc::non_unique_extreme || c == errc::degenerate_spectrum || c == errc::zero_matrix ||
         c == errc::rank_one || c == errc::singular_system;
}

inline double safe_kappa(const SpectralDecomposition& d) {
  return d.rank > 0 ? d.sigma_max() / d.sigma_min() : std::numeric_limits<double>::quiet_NaN();
}

struct Telemetry {
  std::optional<Matrix> k_p;
  std::optional<Matrix> k_h;
  double ref_p = std::numeric_limits<double>::quiet_NaN();
  double ref_h = std::numeric_limits<double>::quiet_NaN();

  Telemetry(std::optional<Matrix> kp, std::optional<Matrix> kh) : k_p(std::move(kp)), k_h(std::move(kh)) {
    if (k_p) ref_p = safe_kappa(svd_compact(*k_p));
    if (k_h) ref_h = safe_kappa(svd_compact(*k_h));
  }

  static double kappa_or_nan(const Matrix& theta, const Matrix& k) {
    const Matrix h = hessian(theta, k);
    return h.allFinite() ? safe_kappa(svd_compact(h)) : std::numeric_limits<double>::quiet_NaN();
  }

  void fill(EpochRecord& rec, const Matrix& theta) const {
    if (k_p) rec.kappa_P = kappa_or_nan(theta, *k_p);
    if (k_h) rec.kappa_H = kappa_or_nan(theta, *k_h);
    rec.rir = (rec.kappa_H / ref_h) / (rec.kappa_P / ref_p);
  }

  void finish(TrainReport& rep, const Matrix& theta) const {
    EpochRecord last;
    fill(last, theta);
    rep.final_kappa_P = last.kappa_P;
    rep.final_kappa_H = last.kappa_H;
  }
};

inline void require_finite(const Matrix& m, const char* what, int epoch, TrainReport& rep) {
  if (!m.allFinite()) {
    const std::string msg = std::string(what) + " became non-finite in epoch " + std::to_string(epoch);
    throw training_aborted(msg, rep);
  }
}

/// Spectral failures drop the term for this epoch; overflow aborts the run; anything else propagates.
inline void skip_or_abort(TrainReport& rep, int epoch, const std::string& term, const error& e) {
  if (e.code() == errc::numerical_failure)
    throw training_aborted(term + " failed in epoch " + std::to_string(epoch) + ": " + e.what(), rep);
  if (!is_spectral_skip(e.code())) throw e;
  rep.warnings.push_back("epoch " + std::to_string(epoch) + ": " + term + " skipped (" + e.what() + ")");
}

inline void check_inputs(const Dataset* d_p, const Matrix& x_h, const Matrix& theta0) {
  require_nonempty(x_h, "empty harmful data");
  if (theta0.rows() != theta0.cols() || theta0.rows() != x_h.cols())
    throw error(errc::dimension_mismatch, "theta0 must be D_in x D_in");
  if (d_p) {
    d_p->validate();
    if (d_p->dim() != x_h.cols()) throw error(errc::dimension_mismatch, "D_P and X_H feature counts differ");
  }
  if (!theta0.allFinite()) throw error(errc::numerical_failure, "theta0 is not finite");
}

}  // namespace detail

// --- Ours -------------------------------------------------------------------

/// Full-batch condition-number immunization. Per epoch, with gradients at
/// (omega_t, theta_t):
///   omega <- omega - eta grad_omega L
///   theta <- theta - eta [grad_theta L + lambda_P K_P^{-1} grad R_well(H_P) + lambda_H K_H^{-1} grad R_ill(H_H)]
/// (Adam replaces the plain steps when selected.) A regularizer whose spectral
/// preconditions fail in an epoch is dropped for that epoch with a warning.
inline ImmunizationResult immunize(const ImmunizationConfig& cfg_in, const Dataset& d_p, const Matrix& x_h,
                                   const Matrix& theta0, const Matrix& omega0) {
  ImmunizationConfig cfg = cfg_in;
  cfg.validate();
  detail::check_inputs(&d_p, x_h, theta0);
  if (omega0.rows() != theta0.cols() || omega0.cols() != d_p.Y.cols())
    throw error(errc::dimension_mismatch, "omega0 must be D_in x D_out");

  const Matrix k_p = covariance(d_p.X);
  const Matrix k_h = covariance(x_h);
  TrainReport rep;
  rep.method = Method::ours;
  if (cfg.auto_balance) {
    const auto lam = auto_balance_lambdas(d_p, x_h, theta0, cfg.balance_base, omega0, cfg.loss, cfg.ridge);
    cfg.lambda_P = lam.lambda_P;
    cfg.lambda_H = lam.lambda_H;
  }
  rep.lambda_P = cfg.lambda_P;
  rep.lambda_H = cfg.lambda_H;

  const detail::Telemetry tel(k_p, k_h);
  detail::Stepper step_theta(cfg), step_omega(cfg);
  Matrix theta = theta0;
  Matrix omega = omega0;

  for (int t = 0; t < cfg.epochs; ++t) {
    EpochRecord rec;
    rec.epoch = t;
    const auto sup = supervised_loss(d_p.X, d_p.Y, theta, omega, cfg.loss);
    rec.supervised_loss = sup.loss;
    rec.grad_norm_supervised = sup.g_theta.norm();

    const Matrix h_p = hessian(theta, k_p);
    const Matrix h_h = hessian(theta, k_h);
    detail::require_finite(h_p, "H_P", t, rep);
    detail::require_finite(h_h, "H_H", t, rep);
    const auto d_hp = svd_compact(h_p);
    const auto d_hh = svd_compact(h_h);
    rec.kappa_P = detail::safe_kappa(d_hp);
    rec.kappa_H = detail::safe_kappa(d_hh);
    rec.rir = (rec.kappa_H / tel.ref_h) / (rec.kappa_P / tel.ref_p);
    try {
      rec.r_well = r_well_eval(h_p, d_hp, false).value;
    } catch (const error&) {
    }
    try {
      rec.r_ill = r_ill_eval(h_h, d_hh, false).value;
    } catch (const error&) {
    }

    Matrix g = sup.g_theta;
    if (cfg.lambda_P > 0) {
      try {
        const Matrix pg = precond_apply(k_p, r_well_grad_theta(theta, k_p, h_p, d_hp), cfg.ridge);
        g += cfg.lambda_P * pg;
        rec.grad_norm_well = cfg.lambda_P * pg.norm();
      } catch (const error& e) {
        detail::skip_or_abort(rep, t, "R_well", e);
      }
    }
    if (cfg.lambda_H > 0) {
      try {
        const Matrix pg = precond_apply(k_h, r_ill_grad_theta(theta, k_h, h_h, d_hh), cfg.ridge);
        g += cfg.lambda_H * pg;
        rec.grad_norm_ill = cfg.lambda_H * pg.norm();
      } catch (const error& e) {
        detail::skip_or_abort(rep, t, "R_ill", e);
      }
    }
    rep.epochs.push_back(rec);

    omega += step_omega(sup.g_omega, cfg.eta);
    theta += step_theta(g, cfg.eta);
    rep.theta_I = theta;
    rep.omega = omega;
    detail::require_finite(omega, "omega", t, rep);
    detail::require_finite(theta, "theta", t, rep);
  }
  rep.theta_I = theta;
  rep.omega = omega;
  tel.finish(rep, theta);
  return {theta, std::move(rep)};
}

// --- baseline: R_ill only ----------------------------------------------------

/// Descends lambda_H R_ill(H_H(theta)) alone, with the raw theta-space
/// gradient and no preconditioning. k_p is optional and used only for telemetry.
inline ImmunizationResult baseline_rill_only(const ImmunizationConfig& cfg, const Matrix& x_h, const Matrix& theta0,
                                             const std::optional<Matrix>& k_p = std::nullopt) {
  cfg.validate();
  detail::check_inputs(nullptr, x_h, theta0);
  const Matrix k_h = covariance(x_h);
  TrainReport rep;
  rep.method = Method::rill_only;
  rep.lambda_H = cfg.lambda_H;
  const detail::Telemetry tel(k_p, k_h);
  detail::Stepper step(cfg);
  Matrix theta = theta0;

  for (int t = 0; t < cfg.epochs; ++t) {
    EpochRecord rec;
    rec.epoch = t;
    tel.fill(rec, theta);
    const Matrix h_h = hessian(theta, k_h);
    detail::require_finite(h_h, "H_H", t, rep);
    const auto d_hh = svd_compact(h_h);
    try {
      rec.r_ill = r_ill_eval(h_h, d_hh, false).value;
      const Matrix g = cfg.lambda_H * r_ill_grad_theta(theta, k_h, h_h, d_hh);
      rec.grad_norm_ill = g.norm();
      double eta = cfg.eta;
      if (cfg.clip_to_safe_step && cfg.optimizer == Optimizer::gradient_descent) {
        const double cap = 0.5 * safe_step_ill_on_theta(h_h).max_step;
        eta = std::min(eta, cap / std::max(cfg.lambda_H, std::numeric_limits<double>::min()));
      }
      theta += step(g, eta);
    } catch (const error& e) {
      detail::skip_or_abort(rep, t, "R_ill", e);
    }
    rep.epochs.push_back(rec);
    rep.theta_I = theta;
    detail::require_finite(theta, "theta", t, rep);
  }
  rep.theta_I = theta;
  tel.finish(rep, theta);
  return {theta, std::move(rep)};
}

// --- baseline: direct condition-number difference ----------------------------

/// grad_H kappa(H) = u_1 v_1^T / sigma_min - (sigma_max / sigma_min^2) u_k v_k^T,
/// valid when both extremes are simple.
inline Matrix kappa_grad_h(const SpectralDecomposition& d) {
  if (d.rank < 2) throw error(errc::rank_one, "kappa gradient needs rank >= 2");
  detail::require_unique_max(d);
  detail::require_unique_min(d);
  const Index k = d.rank;
  const double s1 = d.sigma(0), sk = d.sigma(k - 1);
  return d.U.col(0) * d.V.col(0).transpose() / sk - (s1 / (sk * sk)) * d.U.col(k - 1) * d.V.col(k - 1).transpose();
}

/// grad_theta kappa(theta^T K theta) = 2 K theta grad_H kappa.
inline Matrix kappa_grad_theta(const Matrix& theta, const Matrix& k) {
  const Matrix h = hessian(theta, k);
  return chain_through_hessian(theta, k, kappa_grad_h(svd_compact(h)));
}

/// Descends kappa(H_P(theta)) - kappa(H_H(theta)) with no supervised term on
/// theta. The head omega still follows the supervised loss so the pre-training
/// task can be scored.
inline ImmunizationResult baseline_opt_kappa(const ImmunizationConfig& cfg, const Dataset& d_p, const Matrix& x_h,
                                             const Matrix& theta0,
                                             const std::optional<Matrix>& omega0_in = std::nullopt) {
  cfg.validate();
  detail::check_inputs(&d_p, x_h, theta0);
  const Matrix omega0 = omega0_in.value_or(initial_omega(theta0.rows(), d_p.Y.cols()));
  const Matrix k_p = covariance(d_p.X);
  const Matrix k_h = covariance(x_h);
  TrainReport rep;
  rep.method = Method::opt_kappa;
  const detail::Telemetry tel(k_p, k_h);
  detail::Stepper step_theta(cfg), step_omega(cfg);
  Matrix theta = theta0;
  Matrix omega = omega0;

  for (int t = 0; t < cfg.epochs; ++t) {
    EpochRecord rec;
    rec.epoch = t;
    tel.fill(rec, theta);
    const auto sup = supervised_loss(d_p.X, d_p.Y, theta, omega, cfg.loss);
    rec.supervised_loss = sup.loss;
    Matrix g = Matrix::Zero(theta.rows(), theta.cols());
    try {
      g = kappa_grad_theta(theta, k_p) - kappa_grad_theta(theta, k_h);
      rec.grad_norm_well = g.norm();
    } catch (const error& e) {
      detail::skip_or_abort(rep, t, "kappa difference", e);
    }
    rep.epochs.push_back(rec);
    omega += step_omega(sup.g_omega, cfg.eta);
    theta += step_theta(g, cfg.eta);
    rep.theta_I = theta;
    rep.omega = omega;
    detail::require_finite(theta, "theta", t, rep);
    detail::require_finite(omega, "omega", t, rep);
  }
  rep.theta_I = theta;
  rep.omega = omega;
  tel.finish(rep, theta);
  return {theta, std::move(rep)};
}

// --- baseline: bi-level (IMMA) ---------------------------------------------------

struct BilevelEval {
  double objective = 0.0;  // L(D_H, w, theta*) - L(D_P, omega, theta*)
  Matrix grad_theta;       // d objective / d theta through the unrolled inner loop
};

/// Unrolled inner loop and its exact reverse-mode gradient.
///   inner_var == theta: theta_{j+1} = theta_j - alpha grad_theta L_H(w, theta_j),
///                       objective at theta* = theta_T.
///   inner_var == w:     w_{j+1} = w_j - alpha grad_w L_H(w_j, theta),
///                       objective L_H(w_T, theta) - L_P(omega, theta).
inline BilevelEval imma_objective(const Dataset& d_p, const Dataset& d_h, const Matrix& theta, const Matrix& w,
                                  const Matrix& omega, LossKind loss, int inner_steps, double alpha,
                                  InnerVar inner_var) {
  const Matrix& xh = d_h.X;
  if (inner_var == InnerVar::theta) {
    std::vector<Matrix> thetas{theta};
    for (int j = 0; j < inner_steps; ++j)
      thetas.push_back(thetas.back() - alpha * supervised_loss(xh, d_h.Y, thetas.back(), w, loss).g_theta);
    const Matrix& ts = thetas.back();
    const auto lh = supervised_loss(xh, d_h.Y, ts, w, loss);
    const auto lp = supervised_loss(d_p.X, d_p.Y, ts, omega, loss);
    Matrix a = lh.g_theta - lp.g_theta;
    for (int j = inner_steps - 1; j >= 0; --j) {
      const auto d = detail::loss_derivs(xh * thetas[static_cast<std::size_t>(j)] * w, d_h.Y, loss);
      const Matrix hvp = xh.transpose() * d.c.cwiseProduct(xh * a * w) * w.transpose();
      a -= alpha * hvp;
    }
    return {lh.loss - lp.loss, a};
  }
  const Matrix f = xh * theta;
  std::vector<Matrix> ws{w};
  for (int j = 0; j < inner_steps; ++j)
    ws.push_back(ws.back() - alpha * supervised_loss(xh, d_h.Y, theta, ws.back(), loss).g_omega);
  const auto lh = supervised_loss(xh, d_h.Y, theta, ws.back(), loss);
  const auto lp = supervised_loss(d_p.X, d_p.Y, theta, omega, loss);
  Matrix g = lh.g_theta - lp.g_theta;
  Matrix a = lh.g_omega;
  for (int j = inner_steps - 1; j >= 0; --j) {
    const Matrix& wj = ws[static_cast<std::size_t>(j)];
    const auto d = detail::loss_derivs(f * wj, d_h.Y, loss);
    const Matrix ca = d.c.cwiseProduct(f * a);
    g -= alpha * (xh.transpose() * d.r * a.transpose() + xh.transpose() * ca * wj.transpose());
    a -= alpha * (f.transpose() * ca);
  }
  return {lh.loss - lp.loss, g};
}

/// Ascends the bi-level objective in theta. Each epoch the harmful head w and
/// the pre-training head omega take one descent step on their own losses.
inline ImmunizationResult baseline_imma(const ImmunizationConfig& cfg, const Dataset& d_p, const Dataset& d_h,
                                        const Matrix& theta0, const Matrix& w0, const Matrix& omega0) {
  cfg.validate();
  detail::check_inputs(&d_p, d_h.X, theta0);
  d_h.validate();
  if (w0.rows() != theta0.cols() || w0.cols() != d_h.Y.cols()) throw error(errc::dimension_mismatch, "w0 shape");
  if (omega0.rows() != theta0.cols() || omega0.cols() != d_p.Y.cols())
    throw error(errc::dimension_mismatch, "omega0 shape");
  const double alpha = cfg.inner_lr.value_or(cfg.eta);
  TrainReport rep;
  rep.method = Method::imma;
  const detail::Telemetry tel(covariance(d_p.X), covariance(d_h.X));
  detail::Stepper step_theta(cfg), step_omega(cfg), step_w(cfg);
  Matrix theta = theta0, w = w0, omega = omega0;

  for (int t = 0; t < cfg.epochs; ++t) {
    EpochRecord rec;
    rec.epoch = t;
    tel.fill(rec, theta);
    const auto sp = supervised_loss(d_p.X, d_p.Y, theta, omega, cfg.loss);
    const auto sh = supervised_loss(d_h.X, d_h.Y, theta, w, cfg.loss);
    rec.supervised_loss = sp.loss;
    const auto bl = imma_objective(d_p, d_h, theta, w, omega, cfg.loss, cfg.inner_steps, alpha, cfg.inner_var);
    rec.grad_norm_ill = bl.grad_theta.norm();
    rep.epochs.push_back(rec);
    omega += step_omega(sp.g_omega, cfg.eta);
    w += step_w(sh.g_omega, cfg.eta);
    theta += step_theta(-bl.grad_theta, cfg.eta);  // ascent
    rep.theta_I = theta;
    rep.omega = omega;
    detail::require_finite(theta, "theta", t, rep);
  }
  rep.theta_I = theta;
  rep.omega = omega;
  tel.finish(rep, theta);
  return {theta, std::move(rep)};
}

/// Runs cfg.method with default heads (zeros) on the given tasks.
inline ImmunizationResult run_method(const ImmunizationConfig& cfg, const Dataset& d_p, const Dataset& d_h,
                                     const Matrix& theta0) {
  const Matrix omega0 = initial_omega(theta0.rows(), d_p.Y.cols());
  switch (cfg.method) {
    case Method::ours: return immunize(cfg, d_p, d_h.X, theta0, omega0);
    case Method::rill_only: return baseline_rill_only(cfg, d_h.X, theta0, covariance(d_p.X));
    case Method::opt_kappa: return baseline_opt_kappa(cfg, d_p, d_h.X, theta0, omega0);
    case Method::imma:
      return baseline_imma(cfg, d_p, d_h, theta0, initial_omega(theta0.rows(), d_h.Y.cols()), omega0);
  }
  throw error(errc::invalid_config, "unknown method");
}

// --- telemetry output -------------------------------------------------------------

inline void write_telemetry_csv(std::ostream& os, const TrainReport& rep) {
  CsvWriter csv(os);
  csv.header({"epoch", "kappa_P", "kappa_H", "rir", "supervised_loss", "r_well", "r_ill", "grad_norm_supervised",
              "grad_norm_well", "grad_norm_ill"});
  for (const auto& r : rep.epochs)
    csv.row({std::to_string(r.epoch), format_double(r.kappa_P), format_double(r.kappa_H), format_double(r.rir),
             format_double(r.supervised_loss), format_double(r.r_well), format_double(r.r_ill),
             format_double(r.grad_norm_supervised), format_double(r.grad_norm_well), format_double(r.grad_norm_ill)});
}

}  // namespace immunize
