#pragma once

// Self-checks shared by the acceptance binary and `asentinel verify`. Each
// check builds its own instances from a fixed seed and reports pass/fail with
// a one-line detail.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "asentinel/detector.hpp"
#include "asentinel/irrigation.hpp"
#include "asentinel/model.hpp"
#include "asentinel/objectives.hpp"
#include "asentinel/optimizer.hpp"
#include "asentinel/parallel.hpp"

namespace asentinel::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0: no limit
};

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  int closed_loop_seeds = 50;
  int workers = worker_count();
};

namespace detail {

using Rng = std::mt19937_64;

inline Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) x(i, j) = g(rng);
  return x;
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Random stable-ish system with full-rank noise.
inline LinearGaussianSystem random_system(Rng& rng, int n, int p, int m) {
  LinearGaussianSystem s;
  s.A = gaussian(rng, n, n);
  const double radius = s.A.eigenvalues().cwiseAbs().maxCoeff();
  s.A *= uniform(rng, 0.3, 1.05) / std::max(radius, 1e-9);
  s.B = gaussian(rng, n, p);
  s.C = gaussian(rng, m, n);
  const Matrix w = gaussian(rng, n, n);
  s.Hw = 0.1 * w * w.transpose() + 0.01 * Matrix::Identity(n, n);
  const Matrix v = gaussian(rng, m, m);
  s.Hv = 0.1 * v * v.transpose() + 0.05 * Matrix::Identity(m, m);
  s.x0_mean = gaussian(rng, n, 1);
  const Matrix x0 = gaussian(rng, n, n);
  s.x0_cov = 0.2 * x0 * x0.transpose();
  return s;
}

inline Vector random_priors(Rng& rng, int count) {
  Vector p(count);
  for (int i = 0; i < count; ++i) p(i) = uniform(rng, 0.2, 1.0);
  return p / p.sum();
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline std::pair<Vector, Vector> gauss_legendre(int order) {
  Matrix j = Matrix::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double beta = k / std::sqrt(4.0 * k * k - 1.0);
    j(k, k - 1) = beta;
    j(k - 1, k) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  const Vector nodes = es.eigenvalues();
  const Vector weights = 2.0 * es.eigenvectors().row(0).transpose().array().square();
  return {nodes, weights};
}

/// Composite Gauss-Legendre rule on [lo, hi] with unit-width panels.
inline std::pair<Vector, Vector> composite_rule(double lo, double hi, int order) {
  const auto [x, w] = gauss_legendre(order);
  const int panels = std::max(1, static_cast<int>(std::ceil(hi - lo)));
  const double width = (hi - lo) / panels;
  Vector nodes(panels * order), weights(panels * order);
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width;
    for (int i = 0; i < order; ++i) {
      nodes(p * order + i) = mid + 0.5 * width * x(i);
      weights(p * order + i) = 0.5 * width * w(i);
    }
  }
  return {nodes, weights};
}

inline double log_gaussian(const Vector& y, const Vector& mean, const Eigen::LLT<Matrix>& llt, double logdet) {
  const Vector z = llt.matrixL().solve(y - mean);
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(y.size()) * std::log(2.0 * M_PI));
}

/// Smallest c with P(Poisson(lambda) > c) <= alpha.
inline int poisson_upper(double lambda, double alpha) {
  double term = std::exp(-lambda);
  double cdf = term;
  int c = 0;
  while (1.0 - cdf > alpha && c < 100000) {
    ++c;
    term *= lambda / c;
    cdf += term;
  }
  return c;
}

template <class F>
CheckResult timed(int id, std::string name, double budget, F&& body) {
  CheckResult r;
  r.id = id;
  r.name = std::move(name);
  r.budget_seconds = budget;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget > 0.0 && r.seconds > budget) {
    r.passed = false;
    r.detail += " (over the " + std::to_string(static_cast<int>(budget)) + " s budget)";
  }
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1. Sampled moments against the propagated mean and covariance

/// Every entry of the stacked state and output mean and covariance is
/// z-scored against the analytic moments. With about 10^4 entries a few
/// exceed 3 standard errors by chance, so the check allows the 99.99%
/// Poisson quantile of the expected count and no entry beyond 6.
inline CheckResult check_moment_propagation(const VerifyOptions& opt) {
  return detail::timed(1, "moment propagation vs 1e5 rollouts", 60.0, [&](CheckResult& r) {
    detail::Rng rng(opt.seed + 1);
    const int draws = 100000;
    const int batch = 2000;
    long entries = 0;
    long beyond3 = 0;
    double worst = 0.0;
    for (int sys_index = 0; sys_index < 10; ++sys_index) {
      const int n = detail::uniform_int(rng, 1, 4);
      const int p = detail::uniform_int(rng, 1, 2);
      const int m = detail::uniform_int(rng, 1, 2);
      const int horizon = detail::uniform_int(rng, 1, 10);
      const LinearGaussianSystem sys = detail::random_system(rng, n, p, m);
      const ModeSet modes = enumerate_modes(sys.B, uniform_priors(p));
      const int mode = detail::uniform_int(rng, 0, modes.size() - 1);
      const ControlSequence u(detail::gaussian(rng, p * horizon, 1).col(0), horizon, p);
      const TrajectoryMoments tm = propagate_moments(sys, modes, mode, u);

      const Eigen::Index dx = static_cast<Eigen::Index>(n) * (horizon + 1);
      const Eigen::Index dy = static_cast<Eigen::Index>(m) * (horizon + 1);
      const Eigen::Index dim = dx + dy;
      Vector mean_true(dim);
      mean_true << tm.x_mean, tm.y_mean;
      Matrix cov_true = Matrix::Zero(dim, dim);
      cov_true.topLeftCorner(dx, dx) = tm.x_cov;
      cov_true.bottomRightCorner(dy, dy) = tm.y_cov;
      // Cross block cov(x, y) = H_x Cbarᵀ.
      for (int l = 0; l <= horizon; ++l) {
        cov_true.block(0, dx + l * m, dx, m) = tm.x_cov.middleCols(l * n, n) * sys.C.transpose();
      }
      cov_true.bottomLeftCorner(dy, dx) = cov_true.topRightCorner(dx, dy).transpose();

      const RolloutSampler sampler(sys, modes.input_matrix(mode));
      Vector sum = Vector::Zero(dim);
      Matrix cross = Matrix::Zero(dim, dim);
      Matrix block(dim, batch);
      Rollout ro;
      for (int done = 0; done < draws; done += batch) {
        for (int b = 0; b < batch; ++b) {
          sampler.sample_into(u, rng, ro);
          block.col(b).head(dx) = Eigen::Map<const Vector>(ro.states.data(), dx);
          block.col(b).tail(dy) = Eigen::Map<const Vector>(ro.outputs.data(), dy);
        }
        // Centre on the analytic mean to keep the accumulation well conditioned.
        block.colwise() -= mean_true;
        sum += block.rowwise().sum();
        cross.noalias() += block * block.transpose();
      }
      const Vector mean_dev = sum / draws;
      const Matrix cov_emp = (cross - draws * mean_dev * mean_dev.transpose()) / (draws - 1);
      for (Eigen::Index i = 0; i < dim; ++i) {
        const double se = std::sqrt(cov_true(i, i) / draws);
        const double z = se > 0.0 ? std::abs(mean_dev(i)) / se : (std::abs(mean_dev(i)) > 1e-12 ? 1e9 : 0.0);
        ++entries;
        beyond3 += z > 3.0;
        worst = std::max(worst, z);
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double var = (cov_true(i, i) * cov_true(j, j) + cov_true(i, j) * cov_true(i, j)) / (draws - 1);
          const double dev = std::abs(cov_emp(i, j) - cov_true(i, j));
          const double zc = var > 0.0 ? dev / std::sqrt(var) : (dev > 1e-12 ? 1e9 : 0.0);
          ++entries;
          beyond3 += zc > 3.0;
          worst = std::max(worst, zc);
        }
      }
    }
    const double expected = 0.0027 * static_cast<double>(entries);
    const int allowed = detail::poisson_upper(expected, 1e-4);
    r.passed = beyond3 <= allowed && worst <= 6.0;
    r.detail = std::to_string(entries) + " entries, " + std::to_string(beyond3) + " beyond 3 SE (allowed " +
               std::to_string(allowed) + ", expected " + detail::fmt(expected) + "), max z " + detail::fmt(worst);
  });
}

// ---------------------------------------------------------------------------
// 2. Closed-form control objective against mixed-mode Monte Carlo

inline CheckResult check_control_objective(const VerifyOptions& opt) {
  return detail::timed(2, "control objective vs 2e5 mixed-mode rollouts", 120.0, [&](CheckResult& r) {
    detail::Rng rng(opt.seed + 2);
    const int draws = 200000;
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
      const int n = detail::uniform_int(rng, 1, 4);
      const int p = detail::uniform_int(rng, 1, 2);
      const int m = detail::uniform_int(rng, 1, 2);
      const int horizon = detail::uniform_int(rng, 2, 6);
      const LinearGaussianSystem sys = detail::random_system(rng, n, p, m);
      const ModeSet modes = enumerate_modes(sys.B, detail::random_priors(rng, 1 << p));
      const Matrix qh = detail::gaussian(rng, m, m);
      const Matrix rh = detail::gaussian(rng, p, p);
      const ControlWeights w{qh * qh.transpose() + 0.1 * Matrix::Identity(m, m),
                             rh * rh.transpose() + 0.1 * Matrix::Identity(p, p)};
      const Vector reference = detail::gaussian(rng, m * (horizon + 1), 1).col(0);
      const Vector uv = detail::gaussian(rng, p * horizon, 1).col(0);
      const ControlSequence u(uv, horizon, p);
      const double closed = build_control_objective(sys, modes, reference, w, horizon).value(uv);

      double effort = 0.0;
      for (int k = 0; k < horizon; ++k) effort += u.at(k).dot(w.R * u.at(k));
      std::vector<RolloutSampler> samplers;
      for (int i = 0; i < modes.size(); ++i) samplers.emplace_back(sys, modes.input_matrix(i));
      std::discrete_distribution<int> pick(modes.priors.data(), modes.priors.data() + modes.priors.size());
      double total = 0.0;
      Rollout ro;
      for (int d = 0; d < draws; ++d) {
        samplers[static_cast<std::size_t>(pick(rng))].sample_into(u, rng, ro);
        double c = effort;
        for (int k = 0; k <= horizon; ++k) {
          const Vector e = ro.outputs.col(k) - reference.segment(k * m, m);
          c += e.dot(w.Q * e);
        }
        total += c;
      }
      const double mc = total / draws;
      worst = std::max(worst, std::abs(closed - mc) / std::abs(mc));
    }
    r.passed = worst <= 0.02;
    r.detail = "max relative difference " + detail::fmt(worst) + " over 5 instances";
  });
}

// ---------------------------------------------------------------------------
// 3. Detection bound against quadrature

inline CheckResult check_detection_bound_quadrature(const VerifyOptions& opt) {
  return detail::timed(3, "detection bound vs quadrature (scalar, 2 modes)", 30.0, [&](CheckResult& r) {
    detail::Rng rng(opt.seed + 3);
    double worst_bc = 0.0;
    double worst_excess = -std::numeric_limits<double>::infinity();
    for (int inst = 0; inst < 10; ++inst) {
      const int horizon = detail::uniform_int(rng, 1, 2);
      LinearGaussianSystem sys;
      sys.A = Matrix::Constant(1, 1, detail::uniform(rng, -1.0, 1.0));
      sys.B = Matrix::Constant(1, 1, detail::uniform(rng, 0.3, 1.5));
      sys.C = Matrix::Constant(1, 1, detail::uniform(rng, 0.5, 1.5));
      sys.Hw = Matrix::Constant(1, 1, detail::uniform(rng, 0.05, 0.5));
      sys.Hv = Matrix::Constant(1, 1, detail::uniform(rng, 0.05, 0.5));
      sys.x0_mean = Vector::Constant(1, detail::uniform(rng, -1.0, 1.0));
      sys.x0_cov = Matrix::Constant(1, 1, detail::uniform(rng, 0.0, 0.3));
      const ModeSet modes = enumerate_modes(sys.B, detail::random_priors(rng, 2));
      const Vector uv = detail::gaussian(rng, horizon, 1).col(0);
      const double bound = build_detection_bound(sys, modes, horizon).value(uv);

      const ControlSequence u(uv, horizon, 1);
      const TrajectoryMoments m0 = propagate_moments(sys, modes, 0, u);
      const TrajectoryMoments m1 = propagate_moments(sys, modes, 1, u);
      const Eigen::LLT<Matrix> l0(m0.y_cov), l1(m1.y_cov);
      double ld0 = 0.0, ld1 = 0.0;
      for (int i = 0; i <= horizon; ++i) {
        ld0 += 2.0 * std::log(l0.matrixL()(i, i));
        ld1 += 2.0 * std::log(l1.matrixL()(i, i));
      }
      // Integrate in coordinates whitened by the average covariance.
      const int d = horizon + 1;
      const Matrix avg = 0.5 * (m0.y_cov + m1.y_cov);
      const Matrix lavg = Eigen::LLT<Matrix>(avg).matrixL();
      const Vector centre = 0.5 * (m0.y_mean + m1.y_mean);
      const Vector half = lavg.triangularView<Eigen::Lower>().solve(0.5 * (m1.y_mean - m0.y_mean));
      const double jac = lavg.diagonal().prod();
      std::vector<Vector> nodes(static_cast<std::size_t>(d)), weights(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) {
        const double reach = std::abs(half(i)) + 10.0;
        std::tie(nodes[static_cast<std::size_t>(i)], weights[static_cast<std::size_t>(i)]) =
            detail::composite_rule(-reach, reach, 6);
      }
      const double p0 = modes.priors(0), p1 = modes.priors(1);
      double bc = 0.0, miss = 0.0;
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(d), 0);
      Vector z(d);
      while (true) {
        double wprod = jac;
        for (int i = 0; i < d; ++i) {
          z(i) = nodes[static_cast<std::size_t>(i)](idx[static_cast<std::size_t>(i)]);
          wprod *= weights[static_cast<std::size_t>(i)](idx[static_cast<std::size_t>(i)]);
        }
        const Vector y = centre + lavg * z;
        const double a = detail::log_gaussian(y, m0.y_mean, l0, ld0);
        const double b = detail::log_gaussian(y, m1.y_mean, l1, ld1);
        bc += wprod * std::exp(0.5 * (a + b));
        miss += wprod * std::min(p0 * std::exp(a), p1 * std::exp(b));
        int i = 0;
        while (i < d && ++idx[static_cast<std::size_t>(i)] == nodes[static_cast<std::size_t>(i)].size()) {
          idx[static_cast<std::size_t>(i)] = 0;
          ++i;
        }
        if (i == d) break;
      }
      worst_bc = std::max(worst_bc, std::abs(std::sqrt(p0 * p1) * bc - bound));
      worst_excess = std::max(worst_excess, miss - bound);
    }
    r.passed = worst_bc <= 1e-6 && worst_excess <= 1e-6;
    r.detail = "max |quadrature - bound| " + detail::fmt(worst_bc) + ", max (misidentification - bound) " +
               detail::fmt(worst_excess);
  });
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients against central differences

inline CheckResult check_gradients(const VerifyOptions& opt) {
  return detail::timed(4, "gradients vs central differences", 0.0, [&](CheckResult& r) {
    detail::Rng rng(opt.seed + 4);
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
      const int n = detail::uniform_int(rng, 1, 3);
      const int p = detail::uniform_int(rng, 1, 2);
      const int m = detail::uniform_int(rng, 1, 2);
      const int horizon = detail::uniform_int(rng, 1, 4);
      const LinearGaussianSystem sys = detail::random_system(rng, n, p, m);
      const ModeSet modes = enumerate_modes(sys.B, detail::random_priors(rng, 1 << p));
      const ControlObjectiveForm jc = build_control_objective(
          sys, modes, detail::gaussian(rng, m * (horizon + 1), 1).col(0),
          ControlWeights{Matrix::Identity(m, m), Matrix::Identity(p, p)}, horizon);
      const DetectionBoundForm jd = build_detection_bound(sys, modes, horizon);
      const Vector u = detail::gaussian(rng, p * horizon, 1).col(0);
      auto check = [&](const auto& f, const Vector& g) {
        const double tol = 1e-6 * (1.0 + g.norm());
        for (Eigen::Index i = 0; i < u.size(); ++i) {
          const double h = 1e-5 * (1.0 + std::abs(u(i)));
          Vector up = u, um = u;
          up(i) += h;
          um(i) -= h;
          const double fd = (f(up) - f(um)) / (2.0 * h);
          worst = std::max(worst, std::abs(fd - g(i)) / tol);
        }
      };
      check([&](const Vector& v) { return jc.value(v); }, jc.gradient(u));
      check([&](const Vector& v) { return jd.value(v); }, jd.gradient(u));
    }
    r.passed = worst <= 1.0;
    r.detail = "worst error / tolerance " + detail::fmt(worst) + " over 20 points";
  });
}

// ---------------------------------------------------------------------------
// 5. Pure-control QP against lattice search

/// Lattice pattern search over a box: 5 points per axis around the centre,
/// recentred on improvement and halved otherwise.
inline std::pair<Vector, double> lattice_search(const std::function<double(const Vector&)>& f, const Vector& lo,
                                                const Vector& hi, double stop = 1e-9) {
  const Eigen::Index dim = lo.size();
  Vector centre = 0.5 * (lo + hi);
  Vector step = 0.25 * (hi - lo);
  double best = f(centre);
  long points = 1;
  for (Eigen::Index i = 0; i < dim; ++i) points *= 5;
  while (step.maxCoeff() > stop) {
    Vector arg = centre;
    double val = best;
    Vector x(dim);
    for (long code = 0; code < points; ++code) {
      long c = code;
      for (Eigen::Index i = 0; i < dim; ++i) {
        x(i) = std::clamp(centre(i) + static_cast<double>(c % 5 - 2) * step(i), lo(i), hi(i));
        c /= 5;
      }
      const double v = f(x);
      if (v < val) {
        val = v;
        arg = x;
      }
    }
    if (val < best) {
      best = val;
      centre = arg;
    } else {
      step *= 0.5;
    }
  }
  return {centre, best};
}

inline CheckResult check_pure_control_qp(const VerifyOptions& opt) {
  return detail::timed(5, "pure-control QP vs lattice search (pN <= 6)", 0.0, [&](CheckResult& r) {
    detail::Rng rng(opt.seed + 5);
    double worst_gap = 0.0;
    double worst_kkt = 0.0;
    int instances = 0;
    for (int dim = 1; dim <= 6; ++dim) {
      for (int rep = 0; rep < 2; ++rep, ++instances) {
        const int p = (dim % 2 == 0 && rep == 1) ? 2 : 1;
        const int horizon = dim / p;
        const int n = detail::uniform_int(rng, 1, 3);
        const LinearGaussianSystem sys = detail::random_system(rng, n, p, 1);
        const ModeSet modes = enumerate_modes(sys.B, detail::random_priors(rng, 1 << p));
        ProblemSpec spec;
        spec.control = build_control_objective(sys, modes, detail::gaussian(rng, horizon + 1, 1).col(0) * 3.0,
                                               ControlWeights{Matrix::Identity(1, 1), 0.1 * Matrix::Identity(p, p)},
                                               horizon);
        // Box on every input, tight enough that some bounds are active.
        const Vector upper = Vector::Constant(p, detail::uniform(rng, 0.2, 1.5));
        const Vector lower = -Vector::Constant(p, detail::uniform(rng, 0.2, 1.5));
        Matrix gu(2 * p, p);
        gu << Matrix::Identity(p, p), -Matrix::Identity(p, p);
        Vector g(2 * p);
        g << upper, -lower;
        spec.constraints = expand_constraints(sys, modes, Matrix::Zero(2 * p, n), gu, g, horizon);
        const Solution sol = solve_pure_control(spec);
        if (sol.status != SolveStatus::Optimal) {
          r.passed = false;
          r.detail = "QP status " + std::string(to_string(sol.status));
          return;
        }
        const Vector lo = lower.replicate(horizon, 1);
        const Vector hi = upper.replicate(horizon, 1);
        const auto [arg, best] =
            lattice_search([&](const Vector& v) { return spec.control.value(v); }, lo, hi);
        worst_gap = std::max(worst_gap, std::abs(best - sol.objective_value));
        worst_kkt = std::max(worst_kkt, sol.kkt_residual);
      }
    }
    r.passed = worst_gap <= 1e-4 && worst_kkt <= 1e-8;
    r.detail = std::to_string(instances) + " instances, max |lattice - QP| " + detail::fmt(worst_gap) +
               ", max KKT residual " + detail::fmt(worst_kkt);
  });
}

// ---------------------------------------------------------------------------
// 6. MMAE identification rate

inline CheckResult check_mmae_identification(const VerifyOptions& opt) {
  return detail::timed(6, "MMAE identifies the true mode within 20 steps", 0.0, [&](CheckResult& r) {
    LinearGaussianSystem sys;
    sys.A = Matrix::Constant(1, 1, 0.9);
    sys.B = Matrix::Constant(1, 1, 1.0);
    sys.C = Matrix::Identity(1, 1);
    sys.Hw = Matrix::Constant(1, 1, 0.01);
    sys.Hv = Matrix::Constant(1, 1, 0.01);
    sys.x0_mean = Vector::Zero(1);
    sys.x0_cov = Matrix::Constant(1, 1, 0.01);
    const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
    const Vector u = Vector::Ones(1);
    const int runs = 1000;
    int hits = 0;
    for (int run = 0; run < runs; ++run) {
      const int truth = run % 2;
      detail::Rng rng(opt.seed + 6 + static_cast<std::uint64_t>(run) * 7919);
      const RolloutSampler sampler(sys, modes.input_matrix(truth));
      const Rollout ro = sampler.sample(ControlSequence(Vector::Ones(19), 19, 1), rng);
      Mmae mmae(sys, modes);
      for (int k = 0; k < 20; ++k) {
        mmae.observe(u, ro.outputs.col(k));
        if (mmae.posterior().probs(truth) > 0.99) {
          ++hits;
          break;
        }
      }
    }
    const double rate = static_cast<double>(hits) / runs;
    r.passed = rate >= 0.95;
    r.detail = "identified in " + detail::fmt(100.0 * rate) + "% of " + std::to_string(runs) + " runs";
  });
}

// ---------------------------------------------------------------------------
// 7-8. Closed-loop study on the channel scenario

struct ClosedLoopStudy {
  std::vector<irrigation::ExperimentLog> pure, detection, control;
  double seconds = 0.0;
};

inline ClosedLoopStudy run_closed_loop_study(const irrigation::ChannelScenario& scenario, int seeds, int workers,
                                             const irrigation::ClosedLoopOptions& options = {}) {
  ClosedLoopStudy study;
  const auto t0 = std::chrono::steady_clock::now();
  using Triple = std::vector<irrigation::ExperimentLog>;
  const std::vector<Triple> all = parallel_map<Triple>(
      static_cast<std::size_t>(seeds),
      [&](std::size_t i) {
        const std::uint64_t seed = i + 1;
        Triple t;
        for (ProblemKind kind :
             {ProblemKind::PureControl, ProblemKind::DetectionConstrained, ProblemKind::ControlConstrained}) {
          t.push_back(irrigation::run_closed_loop(scenario, kind, seed, options));
        }
        return t;
      },
      workers);
  for (const auto& t : all) {
    study.pure.push_back(t[0]);
    study.detection.push_back(t[1]);
    study.control.push_back(t[2]);
  }
  study.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return study;
}

inline CheckResult check_directional_tradeoff(const ClosedLoopStudy& study) {
  CheckResult r;
  r.id = 7;
  r.name = "normalized costs over " + std::to_string(study.pure.size()) + " seeds";
  r.budget_seconds = 600.0;
  r.seconds = study.seconds;
  const auto dc = irrigation::normalize_against(study.detection, study.pure);
  const auto cc = irrigation::normalize_against(study.control, study.pure);
  const bool costs_up = dc.mean_control_cost >= 1.0 && cc.mean_control_cost >= 1.0;
  const bool bounds_down = dc.mean_detection_bound <= 1.0 && cc.mean_detection_bound <= 1.0;
  const bool cc_lowest = cc.mean_detection_bound < dc.mean_detection_bound && cc.mean_detection_bound < 1.0;
  r.passed = costs_up && bounds_down && cc_lowest && r.seconds <= r.budget_seconds;
  r.detail = "J_c DC " + detail::fmt(dc.mean_control_cost) + " CC " + detail::fmt(cc.mean_control_cost) +
             "; J_d DC " + detail::fmt(dc.mean_detection_bound) + " CC " + detail::fmt(cc.mean_detection_bound) +
             "; failed windows DC " + std::to_string(dc.failed_windows) + " CC " + std::to_string(cc.failed_windows);
  if (r.seconds > r.budget_seconds) r.detail += " (over the 600 s budget)";
  return r;
}

/// Steps of windows with a Farkas certificate are skipped: there no input
/// meets the cap, so the run is not accepted there. They are counted.
inline CheckResult check_closed_loop_constraints(const ClosedLoopStudy& study, double level_cap) {
  return detail::timed(8, "closed-loop level cap and non-negative heads", 0.0, [&](CheckResult& r) {
    double worst_level = -std::numeric_limits<double>::infinity();
    double worst_head = std::numeric_limits<double>::infinity();
    long steps = 0;
    long skipped_steps = 0;
    int skipped_windows = 0;
    for (const auto* runs : {&study.pure, &study.detection, &study.control}) {
      for (const auto& log : *runs) {
        for (const auto& w : log.windows) skipped_windows += w.linear_infeasible ? 1 : 0;
        for (const auto& st : log.steps) {
          // Heads are checked everywhere.
          worst_head = std::min(worst_head, st.applied.minCoeff());
          const auto& w = log.windows.at(static_cast<std::size_t>(st.k / log.windows.front().steps));
          if (w.linear_infeasible) {
            ++skipped_steps;
            continue;
          }
          worst_level = std::max(worst_level, st.expected_levels.maxCoeff());
          ++steps;
        }
      }
    }
    r.passed = steps > 0 && worst_level <= level_cap + 1e-6 && worst_head >= 0.0;
    r.detail = std::to_string(steps) + " steps, max expected level " + detail::fmt(worst_level) +
               " m, min head " + detail::fmt(worst_head) + " m; " + std::to_string(skipped_windows) +
               " windows (" + std::to_string(skipped_steps) + " steps) without an admissible input skipped";
  });
}

// ---------------------------------------------------------------------------
// 9. Trade-off monotonicity

/// Solves the detection-constrained problem for each cap in order. Each solve
/// also starts from the previous solution, and a backward pass re-solves a cap
/// from the next tighter solution, which is feasible for it.
inline std::vector<Solution> sweep_detection_caps(ProblemSpec spec, const std::vector<double>& caps,
                                                  SolverOptions options = {}) {
  spec.kind = ProblemKind::DetectionConstrained;
  std::vector<Solution> out;
  for (double cap : caps) {
    spec.jd_max = cap;
    SolverOptions o = options;
    if (!out.empty() && out.back().accepted()) o.extra_starts.push_back(out.back().u_star);
    out.push_back(solve_with_side_constraint(spec, o));
  }
  for (std::size_t i = caps.size() - 1; i-- > 0;) {
    if (!out[i + 1].accepted()) continue;
    if (out[i].accepted() && out[i].objective_value <= out[i + 1].objective_value) continue;
    if (caps[i] < caps[i + 1]) continue;
    spec.jd_max = caps[i];
    SolverOptions o = options;
    o.extra_starts.push_back(out[i + 1].u_star);
    Solution again = solve_with_side_constraint(spec, o);
    if (again.accepted() && (!out[i].accepted() || again.objective_value < out[i].objective_value)) {
      out[i] = std::move(again);
    }
  }
  return out;
}

inline CheckResult check_tradeoff_monotonicity(const irrigation::ChannelScenario& scenario) {
  return detail::timed(9, "tighter detection cap never lowers J_c", 0.0, [&](CheckResult& r) {
    const LinearGaussianSystem sys = irrigation::build_system(scenario);
    const ModeSet modes = irrigation::build_modes(scenario, sys);
    const ProblemSpec spec =
        irrigation::window_problem(sys, modes, scenario, ProblemKind::DetectionConstrained);
    const std::vector<double> caps{3.0, 2.0, 1.0, 0.5, 0.25};
    const std::vector<Solution> sols = sweep_detection_caps(spec, caps);
    std::ostringstream os;
    os << "J_c:";
    bool ok = true;
    for (std::size_t i = 0; i < sols.size(); ++i) {
      os << ' ' << detail::fmt(sols[i].objective_value) << (sols[i].accepted() ? "" : "(failed)");
      ok = ok && sols[i].accepted();
      if (i > 0) ok = ok && sols[i].objective_value >= sols[i - 1].objective_value - 1e-8;
    }
    r.passed = ok;
    r.detail = os.str() + " for caps 3, 2, 1, 0.5, 0.25";
  });
}

// ---------------------------------------------------------------------------

/// Runs all checks in order; `on_result` sees each result as soon as it exists.
inline std::vector<CheckResult> run_all(const VerifyOptions& opt,
                                        const std::function<void(const CheckResult&)>& on_result = {}) {
  std::vector<CheckResult> out;
  auto push = [&](CheckResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  push(check_moment_propagation(opt));
  push(check_control_objective(opt));
  push(check_detection_bound_quadrature(opt));
  push(check_gradients(opt));
  push(check_pure_control_qp(opt));
  push(check_mmae_identification(opt));
  const irrigation::ChannelScenario scenario = irrigation::haughton_defaults();
  const ClosedLoopStudy study = run_closed_loop_study(scenario, opt.closed_loop_seeds, opt.workers);
  push(check_directional_tradeoff(study));
  push(check_closed_loop_constraints(study, scenario.level_cap));
  push(check_tradeoff_monotonicity(scenario));
  return out;
}

}  // namespace asentinel::verify
