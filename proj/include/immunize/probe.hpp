#pragma once

// Linear probing on frozen features X theta.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "immunize/error.hpp"
#include "immunize/io.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

enum class LossKind { squared_error, binary_cross_entropy };
enum class Reduction { sum, mean };

struct ProbeProblem {
  Matrix X;      // N x D_in
  Matrix Y;      // N x D_out
  Matrix theta;  // D_in x D_in
  LossKind loss = LossKind::squared_error;
};

struct ProbeTrajectory {
  std::vector<Matrix> weights_per_step;
  std::vector<double> norm_ratios;
  std::vector<double> losses;
  std::vector<double> step_sizes;  // step_sizes[0] = 0 (initial point)

  std::size_t steps() const { return norm_ratios.size(); }
};

inline constexpr double bce_logit_clamp = 30.0;

inline void validate(const ProbeProblem& p) {
  require_nonempty(p.X, "probe with empty X");
  if (p.X.rows() != p.Y.rows()) throw error(errc::dimension_mismatch, "X and Y row counts differ");
  if (p.theta.rows() != p.theta.cols() || p.theta.rows() != p.X.cols())
    throw error(errc::dimension_mismatch, "theta must be square with side D_in");
  if (p.Y.cols() == 0) throw error(errc::dimension_mismatch, "Y has no columns");
}

inline void require_binary_labels(const Matrix& y) {
  if (y.cols() != 1) throw error(errc::dimension_mismatch, "binary cross-entropy expects a single output column");
  for (Index i = 0; i < y.rows(); ++i)
    if (y(i, 0) != 0.0 && y(i, 0) != 1.0) throw error(errc::invalid_labels, "labels must be 0 or 1");
}

/// X theta.
inline Matrix probe_features(const ProbeProblem& p) {
  validate(p);
  return p.X * p.theta;
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Loss and gradient of the linear probe w on features F.
///   squared error: sum ||F w - Y||^2, gradient 2 F^T (F w - Y)
///   cross-entropy: sum softplus(z) - y z with z = clamp(F w), gradient F^T (sigmoid(z) - y)
/// Mean reduction divides both by N.
inline std::pair<double, Matrix> loss_and_grad_on_features(const Matrix& f, const Matrix& y, const Matrix& w,
                                                           LossKind loss, Reduction red = Reduction::sum) {
  if (f.cols() != w.rows() || w.cols() != y.cols() || f.rows() != y.rows())
    throw error(errc::dimension_mismatch, "probe weights do not match features/targets");
  const double scale = red == Reduction::mean ? 1.0 / static_cast<double>(f.rows()) : 1.0;
  if (loss == LossKind::squared_error) {
    const Matrix r = f * w - y;
    return {scale * r.squaredNorm(), (2.0 * scale) * (f.transpose() * r)};
  }
  require_binary_labels(y);
  const Vector z = (f * w).col(0);
  double value = 0.0;
  Vector resid(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double zi = std::clamp(z(i), -bce_logit_clamp, bce_logit_clamp);
    // softplus(z) = max(z,0) + log1p(exp(-|z|))
    value += std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi))) - y(i, 0) * zi;
    resid(i) = sigmoid(zi) - y(i, 0);
  }
  return {scale * value, scale * (f.transpose() * resid)};
}

inline std::pair<double, Matrix> probe_loss_and_grad(const ProbeProblem& p, const Matrix& w,
                                                     Reduction red = Reduction::sum) {
  return loss_and_grad_on_features(probe_features(p), p.Y, w, p.loss, red);
}

/// Minimum-norm least-squares solution pinv(X theta) Y.
inline Matrix closed_form_optimum(const ProbeProblem& p) {
  if (p.loss != LossKind::squared_error)
    throw error(errc::invalid_spec, "closed-form optimum exists only for squared error");
  const Matrix f = probe_features(p);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(f);
  return cod.solve(p.Y);
}

namespace detail {

inline double sq_dist(const Matrix& a, const Matrix& b) { return (a - b).squaredNorm(); }

}  // namespace detail

/// Steepest descent on the squared-error probe with the exact line-search
/// step eta* = <g,g> / (2 <F g, F g>). Stops early once the gradient is at
/// roundoff level relative to the gradient at w = 0.
inline ProbeTrajectory gd_exact_line_search(const ProbeProblem& p, const Matrix& w0, int iters) {
  if (iters < 1) throw error(errc::invalid_spec, "iters must be >= 1");
  if (p.loss != LossKind::squared_error) throw error(errc::invalid_spec, "exact line search needs squared error");
  const Matrix f = probe_features(p);
  if (w0.rows() != f.cols() || w0.cols() != p.Y.cols()) throw error(errc::dimension_mismatch, "w0 shape");
  const Matrix w_star = closed_form_optimum(p);
  const double e0 = detail::sq_dist(w0, w_star);

  ProbeTrajectory tr;
  Matrix w = w0;
  auto record = [&](double step) {
    tr.weights_per_step.push_back(w);
    tr.losses.push_back((f * w - p.Y).squaredNorm());
    tr.norm_ratios.push_back(e0 > 0 ? detail::sq_dist(w, w_star) / e0 : 0.0);
    tr.step_sizes.push_back(step);
  };
  record(0.0);
  tr.norm_ratios[0] = 1.0;

  const double g_scale = std::max(1.0, 2.0 * (f.transpose() * p.Y).norm());
  for (int t = 0; t < iters; ++t) {
    const Matrix g = 2.0 * (f.transpose() * (f * w - p.Y));
    const double gg = g.squaredNorm();
    if (std::sqrt(gg) < 1e-12 * g_scale) break;  // stalled: already optimal
    const double curv = (f * g).squaredNorm();
    if (!(curv > 0.0)) break;
    const double eta = gg / (2.0 * curv);
    w -= eta * g;
    record(eta);
  }
  return tr;
}

/// Fixed-step gradient descent, used for cross-entropy probes where no
/// exact line search exists. Norm ratios are measured against the final iterate.
inline ProbeTrajectory gd_fixed_step(const ProbeProblem& p, const Matrix& w0, int iters, double eta,
                                     Reduction red = Reduction::mean) {
  if (iters < 1 || !(eta > 0)) throw error(errc::invalid_spec, "iters >= 1 and eta > 0 required");
  const Matrix f = probe_features(p);
  ProbeTrajectory tr;
  Matrix w = w0;
  for (int t = 0; t <= iters; ++t) {
    const auto [loss, g] = loss_and_grad_on_features(f, p.Y, w, p.loss, red);
    tr.weights_per_step.push_back(w);
    tr.losses.push_back(loss);
    tr.step_sizes.push_back(t == 0 ? 0.0 : eta);
    if (t < iters) w -= eta * g;
  }
  const Matrix& last = tr.weights_per_step.back();
  const double e0 = detail::sq_dist(w0, last);
  for (const auto& wt : tr.weights_per_step) tr.norm_ratios.push_back(e0 > 0 ? detail::sq_dist(wt, last) / e0 : 0.0);
  return tr;
}

/// Norm ratio at step t, holding the last value if the run stopped early.
inline double norm_ratio_at(const ProbeTrajectory& tr, std::size_t t) {
  if (tr.norm_ratios.empty()) throw error(errc::empty_input, "empty trajectory");
  return tr.norm_ratios[std::min(t, tr.norm_ratios.size() - 1)];
}

/// Rows (step, loss, norm_ratio, step_size), prefixed by a curve label when one is given.
inline void write_trajectory_csv(std::ostream& os, const ProbeTrajectory& tr, const std::string& label = "",
                                 bool with_header = true) {
  CsvWriter csv(os);
  if (with_header && label.empty()) csv.header({"step", "loss", "norm_ratio", "step_size"});
  if (with_header && !label.empty()) csv.header({"curve", "step", "loss", "norm_ratio", "step_size"});
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    std::vector<std::string> row;
    if (!label.empty()) row.push_back(label);
    row.push_back(std::to_string(t));
    row.push_back(format_double(tr.losses[t]));
    row.push_back(format_double(tr.norm_ratios[t]));
    row.push_back(format_double(tr.step_sizes[t]));
    csv.row(row);
  }
}

}  // namespace immunize
