#pragma once

// Property suite behind `immunize verify`: finite-difference gradient checks,
// nonnegativity and upper-bound inequalities, monotonicity under half the
// safe step, and the commuting-case singular value prediction.
//
// Gradients are taken through Hooks so a broken implementation can be
// injected and the suite shown to catch it.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "immunize/io.hpp"
#include "immunize/random.hpp"
#include "immunize/regularizers.hpp"
#include "immunize/spectral.hpp"

namespace immunize::verify {

enum class Level { fast, full };

inline std::size_t trials_for(Level level) { return level == Level::fast ? 100 : 1000; }

struct Hooks {
  std::function<Matrix(const Matrix&)> r_well_grad = [](const Matrix& s) { return immunize::r_well_grad(s); };
  std::function<Matrix(const Matrix&)> r_ill_grad = [](const Matrix& s) { return immunize::r_ill_grad(s); };
  std::function<Matrix(const Matrix&, const Matrix&)> r_well_grad_theta = [](const Matrix& t, const Matrix& k) {
    return immunize::r_well_grad_theta(t, k);
  };
  std::function<Matrix(const Matrix&, const Matrix&)> r_ill_grad_theta = [](const Matrix& t, const Matrix& k) {
    return immunize::r_ill_grad_theta(t, k);
  };
};

struct Clause {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest error metric seen; meaning depends on the clause
  double seconds = 0.0;
  bool passed() const { return trials > 0 && failures == 0; }
};

struct Report {
  Level level = Level::fast;
  std::uint64_t seed = 0;
  std::vector<Clause> clauses;
  bool all_passed() const {
    for (const auto& c : clauses)
      if (!c.passed()) return false;
    return !clauses.empty();
  }
};

inline constexpr Index dim = 8;
inline constexpr double fd_step = 1e-5;
inline constexpr double grad_tol = 1e-6;
inline constexpr double inequality_slack = 1e-9;
inline constexpr double prediction_tol = 1e-10;

namespace detail {

inline Vector gapped_spectrum(Index n, Rng& rng, double min_gap = 0.1) {
  Vector s(n);
  s(n - 1) = random_uniform(rng, 0.2, 1.0);
  for (Index i = n - 2; i >= 0; --i) s(i) = s(i + 1) + random_uniform(rng, min_gap, min_gap + 0.5);
  return s;
}

inline Matrix with_singulars(const Vector& s, Rng& rng) {
  const Index n = s.size();
  return random_orthogonal(n, rng) * s.asDiagonal() * random_orthogonal(n, rng).transpose();
}

inline Matrix random_pd(Index n, Rng& rng) {
  const Matrix a = random_normal(3 * n, n, rng);
  return a.transpose() * a / static_cast<double>(3 * n);
}

inline Matrix random_theta(Index n, Rng& rng) {
  return random_normal(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
}

/// theta with theta^T K theta = V diag(s) V^T for a gapped s.
inline Matrix gapped_theta(const Matrix& k, Rng& rng) {
  const Index n = k.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
  const Matrix k_inv_half =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  const Vector s = gapped_spectrum(n, rng);
  return k_inv_half * random_orthogonal(n, rng) * s.cwiseSqrt().asDiagonal() * random_orthogonal(n, rng).transpose();
}

inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) {
      const double keep = probe(i, j);
      probe(i, j) = keep + fd_step;
      const double up = f(probe);
      probe(i, j) = keep - fd_step;
      const double down = f(probe);
      probe(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * fd_step);
    }
  return g;
}

inline double relative_error(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

inline double kappa(const Matrix& m) { return condition_number(m).kappa; }

/// Runs `trials` draws of `one`, which returns an error metric and whether the draw failed.
template <class F>
Clause run_clause(std::string name, std::size_t trials, std::uint64_t seed, F&& one) {
  Clause c;
  c.name = std::move(name);
  Rng rng(seed);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t t = 0; t < trials; ++t) {
    bool failed = false;
    double metric = 0.0;
    try {
      std::tie(metric, failed) = one(rng);
    } catch (const error&) {
      failed = true;
      metric = std::numeric_limits<double>::infinity();
    }
    ++c.trials;
    if (failed) ++c.failures;
    if (!(metric <= c.worst)) c.worst = metric;
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return c;
}

}  // namespace detail

inline Report run(Level level, std::uint64_t seed, const Hooks& hooks = {}) {
  using detail::kappa;
  Report rep;
  rep.level = level;
  rep.seed = seed;
  const std::size_t n = trials_for(level);
  std::uint64_t stream = 0;
  // Each clause draws from its own stream so clauses are independent of order.
  auto next_seed = [&] { return seed * 0x9E3779B97F4A7C15ULL + (++stream); };
  auto add = [&](std::string name, auto&& one) {
    rep.clauses.push_back(detail::run_clause(std::move(name), n, next_seed(), one));
  };

  add("gradient R_well(S)", [&](Rng& rng) {
    const Matrix s = detail::with_singulars(detail::gapped_spectrum(dim, rng), rng);
    const double e = detail::relative_error(
        hooks.r_well_grad(s), detail::central_difference([](const Matrix& m) { return r_well_value(m); }, s));
    return std::pair{e, !(e < grad_tol)};
  });
  add("gradient R_ill(S)", [&](Rng& rng) {
    const Matrix s = detail::with_singulars(detail::gapped_spectrum(dim, rng), rng);
    const double e = detail::relative_error(
        hooks.r_ill_grad(s), detail::central_difference([](const Matrix& m) { return r_ill_value(m).value; }, s));
    return std::pair{e, !(e < grad_tol)};
  });
  add("gradient R_well(theta)", [&](Rng& rng) {
    const Matrix k = detail::random_pd(dim, rng);
    const Matrix theta = detail::gapped_theta(k, rng);
    const double e = detail::relative_error(
        hooks.r_well_grad_theta(theta, k),
        detail::central_difference([&](const Matrix& t) { return r_well_value(hessian(t, k)); }, theta));
    return std::pair{e, !(e < grad_tol)};
  });
  add("gradient R_ill(theta)", [&](Rng& rng) {
    const Matrix k = detail::random_pd(dim, rng);
    const Matrix theta = detail::gapped_theta(k, rng);
    const double e = detail::relative_error(
        hooks.r_ill_grad_theta(theta, k),
        detail::central_difference([&](const Matrix& t) { return r_ill_value(hessian(t, k)).value; }, theta));
    return std::pair{e, !(e < grad_tol)};
  });

  add("R_well >= 0", [&](Rng& rng) {
    const double v = r_well_value(random_normal(dim, dim, rng));
    return std::pair{std::max(0.0, -v), !(v >= 0.0)};
  });
  add("R_ill >= 0", [&](Rng& rng) {
    const double v = r_ill_value(random_normal(dim, dim, rng)).value;
    return std::pair{std::max(0.0, -v), !(v >= 0.0)};
  });
  add("kappa <= exp(p R_well / sigma_min^2)", [&](Rng& rng) {
    const Matrix s = random_normal(dim, dim, rng);
    const auto sp = condition_number(s);
    const double bound = std::exp(static_cast<double>(dim) * r_well_value(s) / (sp.sigma_min * sp.sigma_min));
    const double excess = sp.kappa / bound - 1.0;
    return std::pair{excess, excess > inequality_slack};
  });
  add("1/log kappa <= sigma_max^2 R_ill", [&](Rng& rng) {
    const Matrix s = random_normal(dim, dim, rng);
    const auto e = r_ill_value(s);
    const double bound = e.spectrum.sigma_max * e.spectrum.sigma_max * e.value;
    const double excess = (1.0 / std::log(e.spectrum.kappa)) / bound - 1.0;
    return std::pair{excess, excess > inequality_slack};
  });

  // Monotonicity metrics are the relative kappa change in the wrong direction.
  add("R_well step on S lowers kappa", [&](Rng& rng) {
    const Matrix s = random_normal(dim, dim, rng);
    const double before = kappa(s);
    const double after = kappa(s - 0.5 * safe_step_well_on_s(s).max_step * hooks.r_well_grad(s));
    return std::pair{after / before - 1.0, !(after < before)};
  });
  add("R_ill step on S raises kappa", [&](Rng& rng) {
    const Matrix s = random_normal(dim, dim, rng);
    const double before = kappa(s);
    const double after = kappa(s - 0.5 * safe_step_ill_on_s(s).max_step * hooks.r_ill_grad(s));
    return std::pair{1.0 - after / before, !(after > before)};
  });
  add("R_ill step on S keeps singular vectors", [&](Rng& rng) {
    const Matrix s = detail::with_singulars(detail::gapped_spectrum(dim, rng), rng);
    const auto d = svd_compact(s);
    const Matrix next = s - 0.5 * safe_step_ill_on_s(s).max_step * hooks.r_ill_grad(s);
    const Matrix core = d.U.transpose() * next * d.V;
    const double off = (core - Matrix(core.diagonal().asDiagonal())).norm() / core.norm();
    return std::pair{off, !(off < 1e-10)};
  });
  add("R_well step on theta lowers kappa (stated bound)", [&](Rng& rng) {
    const Matrix k = detail::random_pd(dim, rng);
    const Matrix theta = detail::random_theta(dim, rng);
    const Matrix h = hessian(theta, k);
    const double eta = 0.5 * safe_step_well_on_theta(h, dim).max_step;
    const double after = kappa(hessian(theta - eta * precond_apply(k, hooks.r_well_grad_theta(theta, k), 0.0), k));
    return std::pair{after / kappa(h) - 1.0, !(after < kappa(h))};
  });
  add("R_well step on theta lowers kappa (strict bound)", [&](Rng& rng) {
    const Matrix k = detail::random_pd(dim, rng);
    const Matrix theta = detail::random_theta(dim, rng);
    const Matrix h = hessian(theta, k);
    const double eta = 0.5 * safe_step_well_on_theta_strict(h, dim).max_step;
    const double after = kappa(hessian(theta - eta * precond_apply(k, hooks.r_well_grad_theta(theta, k), 0.0), k));
    return std::pair{after / kappa(h) - 1.0, !(after < kappa(h))};
  });
  add("R_ill step on theta raises kappa", [&](Rng& rng) {
    // The bound only applies when 1 - 2 sigma_min / k > 0; redraw otherwise.
    for (;;) {
      const Matrix k = detail::random_pd(dim, rng);
      const Matrix theta = detail::random_theta(dim, rng);
      const Matrix h = hessian(theta, k);
      const auto bound = safe_step_ill_on_theta(h);
      if (bound.source != StepSource::ill_on_theta) continue;
      const double after =
          kappa(hessian(theta - 0.5 * bound.max_step * precond_apply(k, hooks.r_ill_grad_theta(theta, k), 0.0), k));
      return std::pair{1.0 - after / kappa(h), !(after > kappa(h))};
    }
  });

  add("predicted singular values, commuting case", [&](Rng& rng) {
    const Matrix q = random_orthogonal(dim, rng);
    const Matrix k = q * detail::gapped_spectrum(dim, rng).asDiagonal() * q.transpose();
    const Matrix theta = q * detail::gapped_spectrum(dim, rng).asDiagonal() * random_orthogonal(dim, rng).transpose();
    const Vector actual = svd_compact(hessian(theta, k)).sigma;
    const double e = (predicted_singular_values(theta, k) - actual).cwiseAbs().maxCoeff() / actual(0);
    return std::pair{e, !(e < prediction_tol)};
  });
  return rep;
}

inline void write_report(std::ostream& os, const Report& rep) {
  for (const auto& c : rep.clauses) {
    os << (c.passed() ? "PASS" : "FAIL") << "  " << c.name << "  failures=" << c.failures << "/" << c.trials
       << "  worst=" << format_double(c.worst) << "\n";
  }
  os << (rep.all_passed() ? "all clauses passed" : "some clauses failed") << "\n";
}

}  // namespace immunize::verify
