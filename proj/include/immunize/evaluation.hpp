#pragma once

// Relative immunization ratio, the three immunization criteria, and
// aggregation of runs into summary tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "immunize/dataset.hpp"
#include "immunize/error.hpp"
#include "immunize/immunizer.hpp"
#include "immunize/io.hpp"
#include "immunize/probe.hpp"
#include "immunize/random.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

struct RirBreakdown {
  double term_i = 1.0;   // kappa(H_H(theta_I)) / kappa(H_H(ref))
  double term_ii = 1.0;  // kappa(H_P(theta_I)) / kappa(H_P(ref))
  double rir = 1.0;      // term_i / term_ii
  std::optional<Matrix> reference;  // empty means identity
};

namespace detail {

inline double kappa_of_hessian(const Matrix& theta, const Matrix& k) {
  const auto d = svd_compact(hessian(theta, k));
  if (d.rank == 0) throw error(errc::zero_matrix, "Hessian is zero");
  return d.sigma_max() / d.sigma_min();
}

inline double reference_kappa(const Matrix& ref, const Matrix& k) {
  const Matrix h = hessian(ref, k);
  if (!h.allFinite()) throw error(errc::degenerate_reference, "reference Hessian is not finite");
  const auto d = svd_compact(h);
  if (d.rank == 0) throw error(errc::degenerate_reference, "reference Hessian is zero");
  if (d.rank < svd_compact(k).rank) throw error(errc::degenerate_reference, "reference collapses data directions");
  return d.sigma_max() / d.sigma_min();
}

inline RirBreakdown make_breakdown(double ki, double kp, double ri, double rp, std::optional<Matrix> ref) {
  RirBreakdown b;
  b.term_i = ki / ri;
  b.term_ii = kp / rp;
  b.rir = b.term_i / b.term_ii;
  b.reference = std::move(ref);
  return b;
}

}  // namespace detail

/// term (i) / term (ii) against reference (identity when omitted).
inline RirBreakdown rir(const Matrix& theta_I, const Matrix& k_p, const Matrix& k_h,
                        const std::optional<Matrix>& reference = std::nullopt) {
  const Index d = k_p.rows();
  if (k_p.cols() != d || k_h.rows() != d || k_h.cols() != d || theta_I.rows() != d)
    throw error(errc::dimension_mismatch, "rir: incompatible shapes");
  const Matrix ref = reference.value_or(Matrix::Identity(d, d));
  if (ref.rows() != d || ref.cols() != theta_I.cols()) throw error(errc::dimension_mismatch, "rir: reference shape");
  return detail::make_breakdown(detail::kappa_of_hessian(theta_I, k_h), detail::kappa_of_hessian(theta_I, k_p),
                                detail::reference_kappa(ref, k_h), detail::reference_kappa(ref, k_p), reference);
}

struct SamplingSpec {
  int groups = 20;
  Index group_size = 100;
  std::uint64_t seed = 0;
};

/// Each of the four condition numbers is averaged over `groups` random
/// subsets (without replacement) of each split; the ratios use the averages.
inline RirBreakdown rir_sampled(const Matrix& theta_I, const Matrix& x_p, const Matrix& x_h,
                                const std::optional<Matrix>& reference = std::nullopt, const SamplingSpec& spec = {}) {
  if (spec.groups < 1 || spec.group_size < 1) throw error(errc::invalid_spec, "sampling needs groups, size >= 1");
  const Index d = x_p.cols();
  const Matrix ref = reference.value_or(Matrix::Identity(d, d));
  Rng rng(spec.seed);
  auto subset = [&](const Matrix& x) {
    std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    const Index m = std::min(spec.group_size, x.rows());
    // Partial Fisher-Yates with the library's own uniform draw keeps this portable.
    for (Index i = 0; i < m; ++i) {
      const auto j = i + static_cast<Index>(random_uniform(rng, 0.0, 1.0) * static_cast<double>(x.rows() - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(std::min(j, x.rows() - 1))]);
    }
    Matrix out(m, x.cols());
    for (Index i = 0; i < m; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
    return out;
  };
  double ki = 0, kp = 0, ri = 0, rp = 0;
  for (int g = 0; g < spec.groups; ++g) {
    const Matrix kh = covariance(subset(x_h));
    const Matrix kpp = covariance(subset(x_p));
    ki += detail::kappa_of_hessian(theta_I, kh);
    kp += detail::kappa_of_hessian(theta_I, kpp);
    ri += detail::reference_kappa(ref, kh);
    rp += detail::reference_kappa(ref, kpp);
  }
  return detail::make_breakdown(ki, kp, ri, rp, reference);
}

// --- criteria -----------------------------------------------------------------

struct VerdictThresholds {
  double a = 2.0;       // term (i) must reach this
  double tol_b = 0.05;  // term (ii) <= 1 + tol_b
  double tol_c = 1e-6;  // relative gap of the optimal pre-training loss
  int bce_iters = 500;  // head fitting for the informational cross-entropy gap
  double bce_eta = 0.5;
};

struct ImmunizationVerdict {
  bool criterion_a = false;
  bool criterion_b = false;
  bool criterion_c = false;
  bool criterion_c_informational = false;  // true when the loss has no closed-form optimum
  double loss_immunized = 0.0;
  double loss_reference = 0.0;
  RirBreakdown rir;
};

namespace detail {

inline double optimal_mean_loss(const Dataset& d, const Matrix& theta, LossKind loss, const VerdictThresholds& th) {
  ProbeProblem p{d.X, d.Y, theta, loss};
  if (loss == LossKind::squared_error) {
    const Matrix w = closed_form_optimum(p);
    return probe_loss_and_grad(p, w, Reduction::mean).first;
  }
  const auto tr = gd_fixed_step(p, Matrix::Zero(theta.cols(), d.Y.cols()), th.bce_iters, th.bce_eta, Reduction::mean);
  return tr.losses.back();
}

}  // namespace detail

/// (a) harmful condition number rose by at least `a`; (b) pre-training one did
/// not rise beyond 1 + tol_b; (c) the best pre-training loss reachable on top
/// of theta_I matches the one on top of the identity. (a) and (b) are measured
/// against `reference` when one is given.
inline ImmunizationVerdict verdict(const Matrix& theta_I, const Dataset& d_p, const Dataset& d_h, LossKind loss,
                                   const VerdictThresholds& th = {},
                                   const std::optional<Matrix>& reference = std::nullopt) {
  d_p.validate();
  d_h.validate();
  ImmunizationVerdict v;
  v.rir = rir(theta_I, covariance(d_p.X), covariance(d_h.X), reference);
  v.criterion_a = v.rir.term_i >= th.a;
  v.criterion_b = v.rir.term_ii <= 1.0 + th.tol_b;
  const Index d = d_p.dim();
  v.loss_immunized = detail::optimal_mean_loss(d_p, theta_I, loss, th);
  v.loss_reference = detail::optimal_mean_loss(d_p, Matrix::Identity(d, d), loss, th);
  v.criterion_c = std::abs(v.loss_immunized - v.loss_reference) <= th.tol_c * (1.0 + std::abs(v.loss_reference));
  v.criterion_c_informational = loss != LossKind::squared_error;
  return v;
}

// --- reports ------------------------------------------------------------------

struct RunRecord {
  Method method = Method::ours;
  std::uint64_t seed = 0;
  std::string task;  // free-form key, e.g. "3-5"
  RirBreakdown rir;
  std::optional<ImmunizationVerdict> verdict;
  TrainReport report;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw error(errc::empty_input, "no values");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

struct MethodSummary {
  Method method = Method::ours;
  std::size_t runs = 0;
  MeanStd term_i, term_ii, rir;  // rir is averaged per run, not recomputed from the averaged terms
};

struct ExperimentReport {
  std::vector<MethodSummary> methods;  // in order of first appearance
  std::vector<RunRecord> runs;
};

inline ExperimentReport experiment_report(std::vector<RunRecord> runs) {
  if (runs.empty()) throw error(errc::empty_input, "experiment report needs at least one run");
  ExperimentReport rep;
  std::vector<Method> order;
  for (const auto& r : runs)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  for (Method m : order) {
    std::vector<double> a, b, c;
    for (const auto& r : runs)
      if (r.method == m) {
        a.push_back(r.rir.term_i);
        b.push_back(r.rir.term_ii);
        c.push_back(r.rir.rir);
      }
    rep.methods.push_back({m, a.size(), mean_std(a), mean_std(b), mean_std(c)});
  }
  rep.runs = std::move(runs);
  return rep;
}

/// One row per run.
inline void write_runs_csv(std::ostream& os, const ExperimentReport& rep) {
  CsvWriter csv(os);
  csv.header({"method", "task", "seed", "term_i", "term_ii", "rir", "criterion_a", "criterion_b", "criterion_c"});
  auto flag = [](const std::optional<ImmunizationVerdict>& v, bool ImmunizationVerdict::*f) {
    return v ? std::string((*v).*f ? "true" : "false") : std::string();
  };
  for (const auto& r : rep.runs)
    csv.row({std::string(to_string(r.method)), r.task, std::to_string(r.seed), format_double(r.rir.term_i),
             format_double(r.rir.term_ii), format_double(r.rir.rir), flag(r.verdict, &ImmunizationVerdict::criterion_a),
             flag(r.verdict, &ImmunizationVerdict::criterion_b), flag(r.verdict, &ImmunizationVerdict::criterion_c)});
}

/// One row per method with mean and sample std of each column.
inline void write_summary_csv(std::ostream& os, const ExperimentReport& rep) {
  CsvWriter csv(os);
  csv.header({"method", "runs", "term_i_mean", "term_i_std", "term_ii_mean", "term_ii_std", "rir_mean", "rir_std"});
  for (const auto& m : rep.methods)
    csv.row({std::string(to_string(m.method)), std::to_string(m.runs), format_double(m.term_i.mean),
             format_double(m.term_i.std), format_double(m.term_ii.mean), format_double(m.term_ii.std),
             format_double(m.rir.mean), format_double(m.rir.std)});
}

inline void write_summary_table(std::ostream& os, const ExperimentReport& rep) {
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %5s  %-22s %-22s %-22s\n", "method", "runs", "(i) harmful ^",
                "(ii) pretrain v", "RIR ^");
  os << line;
  auto cell = [](const MeanStd& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g +- %.3g", s.mean, s.std);
    return std::string(buf);
  };
  for (const auto& m : rep.methods) {
    std::snprintf(line, sizeof line, "%-10s %5zu  %-22s %-22s %-22s\n", std::string(to_string(m.method)).c_str(),
                  m.runs, cell(m.term_i).c_str(), cell(m.term_ii).c_str(), cell(m.rir).c_str());
    os << line;
  }
}

struct PairCell {
  int digit_a = 0;
  int digit_b = 0;
  double log_rir = 0.0;  // natural log of the seed-averaged RIR
  std::size_t runs = 0;
};

/// Averages RIR over seeds for each (a, b) pair; rows in ascending pair order.
inline std::vector<PairCell> pair_grid(const std::vector<std::pair<std::pair<int, int>, double>>& pair_rirs) {
  if (pair_rirs.empty()) throw error(errc::empty_input, "no pair results");
  std::map<std::pair<int, int>, std::vector<double>> by_pair;
  for (const auto& [k, v] : pair_rirs) by_pair[k].push_back(v);
  std::vector<PairCell> out;
  for (const auto& [k, v] : by_pair)
    out.push_back({k.first, k.second, std::log(mean_std(v).mean), v.size()});
  return out;
}

inline void write_pair_grid_csv(std::ostream& os, const std::vector<PairCell>& grid) {
  CsvWriter csv(os);
  csv.header({"row_digit", "col_digit", "log_rir", "runs"});
  for (const auto& c : grid)
    csv.row({std::to_string(c.digit_a), std::to_string(c.digit_b), format_double(c.log_rir), std::to_string(c.runs)});
}

}  // namespace immunize
