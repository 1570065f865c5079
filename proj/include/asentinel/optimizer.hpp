#pragma once

// Input design for one detection window.
//
//   PureControl           min J_c          s.t. M u <= b
//   DetectionConstrained  min J_c          s.t. M u <= b, Ĵ_d(u) <= Jd_max
//   ControlConstrained    min Ĵ_d          s.t. M u <= b, J_c(u) <= Jc_max
//
// The first problem is a strictly convex QP. The other two are non-convex; they
// are solved by an augmented Lagrangian on the scalar side constraint. Each
// inner subproblem keeps M u <= b exactly by taking Newton-type steps computed
// from a QP over the polytope, with an Armijo line search on the augmented
// Lagrangian. Several starts are run and the best feasible local solution wins.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"
#include "asentinel/objectives.hpp"
#include "asentinel/qp.hpp"

namespace asentinel {

enum class ProblemKind { PureControl, DetectionConstrained, ControlConstrained };

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::PureControl: return "pure-control";
    case ProblemKind::DetectionConstrained: return "detection-constrained";
    case ProblemKind::ControlConstrained: return "control-constrained";
  }
  return "?";
}

inline ProblemKind problem_kind_from_string(const std::string& s) {
  if (s == "pure-control") return ProblemKind::PureControl;
  if (s == "detection-constrained") return ProblemKind::DetectionConstrained;
  if (s == "control-constrained") return ProblemKind::ControlConstrained;
  throw InvalidArgument("unknown formulation \"" + s + "\"");
}

struct ProblemSpec {
  ProblemKind kind = ProblemKind::PureControl;
  ControlObjectiveForm control;
  DetectionBoundForm detection;
  ExpandedConstraints constraints;
  double jd_max = 1.0;
  double jc_max = 2000.0;

  void validate() const {
    const Eigen::Index dim = control.Phi.rows();
    linalg::require(control.psi.size() == dim, "control form is inconsistent");
    linalg::require(static_cast<Eigen::Index>(detection.horizon) * detection.inputs == dim || detection.pairs.empty(),
                    "detection and control forms were built for different horizons");
    linalg::require(constraints.M.rows() == 0 || constraints.M.cols() == dim, "constraints have the wrong width");
    if (kind == ProblemKind::DetectionConstrained) linalg::require(jd_max > 0.0, "Jd_max must be positive");
    if (kind == ProblemKind::ControlConstrained) linalg::require(jc_max > 0.0, "Jc_max must be positive");
  }
};

enum class SolveStatus { Optimal, Feasible, Infeasible, MaxIterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Feasible: return "Feasible";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::MaxIterations: return "MaxIterations";
  }
  return "?";
}

struct TraceRow {
  int restart = 0;
  int iteration = 0;
  double objective = 0.0;
  double side_value = 0.0;
  double violation = 0.0;
  double multiplier = 0.0;
  double penalty = 0.0;
  int inner_iterations = 0;
};

struct Solution {
  Vector u_star;
  double objective_value = 0.0;
  double control_cost = 0.0;    // J_c(u*)
  double detection_bound = 0.0; // Ĵ_d(u*)
  double constraint_violation = 0.0;
  /// Jbar - J(u*) for the side constraint; +inf for PureControl.
  double side_constraint_slack = std::numeric_limits<double>::infinity();
  double stationarity = 0.0;
  double kkt_residual = 0.0;
  SolveStatus status = SolveStatus::Infeasible;
  int restarts_used = 0;
  /// Farkas ray (y >= 0, Mᵀy = 0, bᵀy < 0) when the linear constraints are infeasible.
  std::optional<Vector> farkas;
  /// Smallest side-constraint value any start reached (diagnostic for Infeasible).
  double min_side_value = std::numeric_limits<double>::quiet_NaN();
  std::vector<TraceRow> trace;

  bool accepted() const { return status == SolveStatus::Optimal || status == SolveStatus::Feasible; }
};

struct SolverOptions {
  double stationarity_tol = 1e-6;
  double constraint_tol = 1e-6;
  int max_outer_iterations = 500;
  int max_inner_iterations = 60;
  /// Inner iterations allowed per start over all outer iterations.
  int max_total_inner_iterations = 1000;
  int restarts = 16;
  std::uint64_t seed = 0;
  bool record_trace = false;
  /// Additional starting points tried before the randomized ones.
  std::vector<Vector> extra_starts;
};

// ---------------------------------------------------------------------------

namespace detail {

/// Linear constraints with all-zero rows and exact duplicates removed.
struct ReducedConstraints {
  Matrix M;
  Vector b;
  std::optional<Vector> farkas;  // a zero row with negative bound
};

/// `dim` fixes the width when the set is empty.
inline ReducedConstraints reduce_constraints(const ExpandedConstraints& c, Eigen::Index dim) {
  const Eigen::Index m = c.M.rows();
  const Eigen::Index n = m == 0 ? dim : c.M.cols();
  ReducedConstraints out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (c.M.row(i).cwiseAbs().maxCoeff() == 0.0) {
      if (c.b(i) < 0.0 && !out.farkas) {
        out.farkas = Vector::Zero(m);
        (*out.farkas)(i) = 1.0;
      }
      continue;
    }
    keep.push_back(i);
  }
  auto less = [&](Eigen::Index x, Eigen::Index y) {
    for (Eigen::Index k = 0; k < n; ++k) {
      if (c.M(x, k) != c.M(y, k)) return c.M(x, k) < c.M(y, k);
    }
    return c.b(x) < c.b(y);
  };
  std::sort(keep.begin(), keep.end(), less);
  std::vector<Eigen::Index> unique_rows;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (k > 0 && !less(keep[k - 1], keep[k]) && !less(keep[k], keep[k - 1])) continue;
    unique_rows.push_back(keep[k]);
  }
  std::sort(unique_rows.begin(), unique_rows.end());
  out.M.resize(static_cast<Eigen::Index>(unique_rows.size()), n);
  out.b.resize(static_cast<Eigen::Index>(unique_rows.size()));
  for (std::size_t k = 0; k < unique_rows.size(); ++k) {
    out.M.row(static_cast<Eigen::Index>(k)) = c.M.row(unique_rows[k]);
    out.b(static_cast<Eigen::Index>(k)) = c.b(unique_rows[k]);
  }
  return out;
}

/// Symmetric matrix with eigenvalues lifted to at least `floor_rel` * max(1, |λ|max).
inline Matrix positive_definite_part(const Matrix& h, double floor_rel = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::symmetrize(h));
  Vector ev = es.eigenvalues();
  const double floor = floor_rel * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
  return linalg::symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

inline bool lexicographically_less(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return a(i) < b(i);
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline Solution finalize_solution(const ProblemSpec& spec, Vector u, SolveStatus status) {
  Solution s;
  s.u_star = std::move(u);
  s.status = status;
  s.control_cost = spec.control.value(s.u_star);
  s.detection_bound = spec.detection.pairs.empty() ? 0.0 : spec.detection.value(s.u_star);
  s.constraint_violation = spec.constraints.violation(s.u_star);
  switch (spec.kind) {
    case ProblemKind::PureControl:
      s.objective_value = s.control_cost;
      break;
    case ProblemKind::DetectionConstrained:
      s.objective_value = s.control_cost;
      s.side_constraint_slack = std::isinf(spec.jd_max) ? spec.jd_max : spec.jd_max - s.detection_bound;
      break;
    case ProblemKind::ControlConstrained:
      s.objective_value = s.detection_bound;
      s.side_constraint_slack = std::isinf(spec.jc_max) ? spec.jc_max : spec.jc_max - s.control_cost;
      break;
  }
  return s;
}

/// Convex QP min uᵀΦu + ψᵀu + c0 s.t. M u <= b.
inline Solution solve_pure_control(const ProblemSpec& spec) {
  spec.validate();
  const detail::ReducedConstraints rc = detail::reduce_constraints(spec.constraints, spec.control.Phi.rows());
  const Eigen::Index dim = spec.control.Phi.rows();
  if (rc.farkas) {
    Solution s = finalize_solution(spec, Vector::Zero(dim), SolveStatus::Infeasible);
    s.farkas = rc.farkas;
    return s;
  }
  const Matrix g = spec.control.hessian();
  const QpResult qp = solve_qp(g, spec.control.psi, rc.M, rc.b);
  if (qp.status == QpStatus::Infeasible) {
    Solution s = finalize_solution(spec, qp.x, SolveStatus::Infeasible);
    // Map the certificate back onto the unreduced rows.
    Vector y = Vector::Zero(spec.constraints.rows());
    for (Eigen::Index k = 0; k < rc.M.rows(); ++k) {
      if ((*qp.farkas)(k) == 0.0) continue;
      for (Eigen::Index i = 0; i < spec.constraints.rows(); ++i) {
        if (spec.constraints.M.row(i) == rc.M.row(k) && spec.constraints.b(i) == rc.b(k)) {
          y(i) += (*qp.farkas)(k);
          break;
        }
      }
    }
    s.farkas = y;
    return s;
  }
  Solution s = finalize_solution(spec, qp.x,
                                 qp.status == QpStatus::Optimal ? SolveStatus::Optimal : SolveStatus::MaxIterations);
  s.kkt_residual = qp_kkt_residual(g, spec.control.psi, rc.M, rc.b, qp.x, qp.multipliers);
  s.stationarity = (g * qp.x + spec.control.psi + rc.M.transpose() * qp.multipliers).cwiseAbs().maxCoeff();
  s.restarts_used = 1;
  return s;
}

namespace detail {

/// Objective / side-constraint pair of a non-convex formulation, both scaled.
class SideConstrainedProblem {
 public:
  SideConstrainedProblem(const ProblemSpec& spec, double objective_scale)
      : spec_(spec),
        control_is_objective_(spec.kind == ProblemKind::DetectionConstrained),
        cap_(control_is_objective_ ? spec.jd_max : spec.jc_max),
        objective_scale_(objective_scale),
        side_scale_(std::isfinite(cap_) ? std::max(1.0, std::abs(cap_)) : 1.0) {}

  bool side_active() const { return std::isfinite(cap_); }
  bool control_is_objective() const { return control_is_objective_; }
  const ProblemSpec& spec() const { return spec_; }
  double cap() const { return cap_; }
  double side_scale() const { return side_scale_; }

  double objective_raw(const Vector& u) const {
    return control_is_objective_ ? spec_.control.value(u) : spec_.detection.value(u);
  }
  double side_raw(const Vector& u) const {
    return control_is_objective_ ? spec_.detection.value(u) : spec_.control.value(u);
  }
  /// Internal objective: J_c / scale, or log of the detection bound. The bound
  /// is exponentially flat far from zero; its log has the same minimizers.
  double objective(const Vector& u) const {
    return control_is_objective_ ? spec_.control.value(u) / objective_scale_ : spec_.detection.log_value(u);
  }
  /// The detection bound underflowed to zero, its global minimum.
  bool objective_saturated(const Vector& u) const {
    return !control_is_objective_ && spec_.detection.value(u) == 0.0;
  }

  /// Gradient and Hessian of objective().
  std::pair<Vector, Matrix> objective_derivatives(const Vector& u) const {
    if (control_is_objective_) {
      return {spec_.control.gradient(u) / objective_scale_, spec_.control.hessian() / objective_scale_};
    }
    return spec_.detection.log_derivatives(u);
  }
  /// (side(u) - cap) / scale; <= 0 when feasible.
  double side(const Vector& u) const { return side_active() ? (side_raw(u) - cap_) / side_scale_ : -1.0; }
  Vector side_gradient_raw(const Vector& u) const {
    return control_is_objective_ ? spec_.detection.gradient(u) : spec_.control.gradient(u);
  }
  Vector side_gradient(const Vector& u) const { return side_gradient_raw(u) / side_scale_; }
  Matrix side_hessian(const Vector& u) const {
    return (control_is_objective_ ? spec_.detection.hessian(u) : spec_.control.hessian()) / side_scale_;
  }

  /// Scaled objective and side value along u + t d, cheap to evaluate per t.
  class Line {
   public:
    Line(const SideConstrainedProblem& p, const Vector& u, const Vector& d)
        : p_(&p), control_(p.spec_.control.along(u, d)), detection_(p.spec_.detection.along(u, d)) {}
    double objective(double t) const {
      return p_->control_is_objective_ ? jc(t) / p_->objective_scale_ : detection_.log_value(t);
    }
    double side(double t) const {
      if (!p_->side_active()) return -1.0;
      return ((p_->control_is_objective_ ? jd(t) : jc(t)) - p_->cap_) / p_->side_scale_;
    }

   private:
    double jc(double t) const { return control_[0] + t * (control_[1] + t * control_[2]); }
    double jd(double t) const { return detection_.value(t); }
    const SideConstrainedProblem* p_;
    std::array<double, 3> control_;
    DetectionBoundForm::Line detection_;
  };

  Line line(const Vector& u, const Vector& d) const { return Line(*this, u, d); }

 private:
  const ProblemSpec& spec_;
  bool control_is_objective_;
  double cap_;
  double objective_scale_;
  double side_scale_;
};

struct LocalResult {
  Vector u;
  bool converged = false;
  bool stalled = false;
  double stationarity = std::numeric_limits<double>::infinity();
};

/// Hessian with every eigenvalue replaced by its magnitude (floored), plus the
/// most negative curvature direction when there is one. A positive definite
/// Hessian is returned as is without an eigendecomposition.
struct SaddleFreeModel {
  Matrix model;
  std::optional<Vector> negative_direction;
};

inline SaddleFreeModel saddle_free_model(const Matrix& hess) {
  SaddleFreeModel out;
  out.model = linalg::symmetrize(hess);
  // Every eigenvalue above the floor: the model is the Hessian itself. The
  // diagonal bounds the spectral radius from below, so this floor never
  // exceeds the one used after the eigendecomposition.
  const Eigen::Index n = out.model.rows();
  const double diag_floor = 1e-8 * std::max(1.0, out.model.diagonal().cwiseAbs().maxCoeff());
  Eigen::LLT<Matrix> llt(out.model - diag_floor * Matrix::Identity(n, n));
  if (llt.info() == Eigen::Success) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.model);
  const Vector& ev = es.eigenvalues();
  const double floor = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  out.model = es.eigenvectors() * ev.cwiseAbs().cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
  if (ev(0) < -floor) out.negative_direction = es.eigenvectors().col(0);
  return out;
}

/// Largest t >= 0 with M (u + t d) <= b, capped at `limit`.
inline double step_to_boundary(const ReducedConstraints& rc, const Vector& u, const Vector& d, double limit) {
  double t = limit;
  if (rc.M.rows() == 0) return t;
  const Vector slack = (rc.b - rc.M * u).cwiseMax(0.0);
  const Vector rate = rc.M * d;
  for (Eigen::Index i = 0; i < rate.size(); ++i) {
    if (rate(i) > 1e-14 * d.cwiseAbs().maxCoeff()) t = std::min(t, slack(i) / rate(i));
  }
  return std::max(t, 0.0);
}

/// Augmented Lagrangian for one start. Linear constraints hold at every iterate.
inline LocalResult augmented_lagrangian(const SideConstrainedProblem& prob, const ReducedConstraints& rc, Vector u,
                                        const SolverOptions& opt, int restart, std::vector<TraceRow>* trace) {
  double lambda = 0.0;
  // From a feasible start a stiff penalty keeps the iterates from sliding back
  // across the side constraint into another basin.
  double rho = prob.side_active() && prob.side(u) <= 0.0 ? 1e4 : 10.0;
  double prev_violation = std::numeric_limits<double>::infinity();
  // Internal feasibility tolerance is tighter than the reported one so the raw
  // checks pass after rescaling.
  const double feas_tol = 1e-3 * opt.constraint_tol / prob.side_scale();
  const double stat_tol = opt.stationarity_tol;
  double inner_tol = std::max(stat_tol, 1e-2);
  int no_progress = 0;
  int frozen = 0;
  double f_last = std::numeric_limits<double>::infinity();

  auto merit_at = [&](double f, double h) {
    if (!prob.side_active()) return f;
    const double shifted = std::max(0.0, lambda + rho * h);
    return f + (shifted * shifted - lambda * lambda) / (2.0 * rho);
  };

  LocalResult out;
  int inner_total = 0;
  for (int outer = 0; outer < opt.max_outer_iterations && inner_total < opt.max_total_inner_iterations; ++outer) {
    double inner_stat = std::numeric_limits<double>::infinity();
    bool stalled = false;
    int inner_used = 0;
    int tiny_steps = 0;
    for (int inner = 0; inner < opt.max_inner_iterations && inner_total < opt.max_total_inner_iterations;
         ++inner, ++inner_used, ++inner_total) {
      if (prob.objective_saturated(u) && prob.side(u) <= 0.0) {
        inner_stat = 0.0;
        stalled = true;
        break;
      }
      auto [grad, hess] = prob.objective_derivatives(u);
      if (prob.side_active()) {
        const double shifted = lambda + rho * prob.side(u);
        if (shifted > 0.0) {
          const Vector gs = prob.side_gradient(u);
          grad += shifted * gs;
          hess += rho * gs * gs.transpose() + shifted * prob.side_hessian(u);
        }
      }
      const SaddleFreeModel sf = saddle_free_model(hess);
      const Matrix& model = sf.model;
      const QpResult step = solve_qp(model, grad, rc.M, (rc.b - rc.M * u).cwiseMax(0.0));
      if (step.status != QpStatus::Optimal) {
        stalled = true;
        break;
      }
      Vector d = step.x;
      inner_stat = (model * d).cwiseAbs().maxCoeff();
      const double m0 = merit_at(prob.objective(u), prob.side(u));

      if (inner_stat <= inner_tol) {
        // First-order stationary. Leave saddles along the most negative
        // curvature direction if the linear constraints allow it.
        if (!sf.negative_direction) break;
        const Vector& v = *sf.negative_direction;
        const double reach = 4.0 * (1.0 + u.cwiseAbs().maxCoeff());
        bool moved = false;
        for (double sign : {1.0, -1.0}) {
          const Vector dir = sign * v;
          double t = step_to_boundary(rc, u, dir, reach);
          if (t <= 0.0) continue;
          const auto line = prob.line(u, dir);
          for (int ls = 0; ls < 40 && !moved; ++ls, t *= 0.5) {
            if (merit_at(line.objective(t), line.side(t)) < m0 - 1e-12 * (1.0 + std::abs(m0))) {
              u += t * dir;
              moved = true;
            }
          }
          if (moved) break;
        }
        if (!moved) break;
        continue;
      }

      const double cap = 10.0 * (1.0 + u.cwiseAbs().maxCoeff());
      const double len = d.cwiseAbs().maxCoeff();
      if (len > cap) d *= cap / len;
      const double slope = grad.dot(d);
      const auto line = prob.line(u, d);
      double t = 1.0;
      double m1 = m0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        m1 = merit_at(line.objective(t), line.side(t));
        if (m1 <= m0 + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        stalled = true;
        break;
      }
      u += t * d;
      // Decreases at rounding level: the subproblem is solved as well as it can be.
      tiny_steps = m0 - m1 <= 1e-14 * (1.0 + std::abs(m0)) ? tiny_steps + 1 : 0;
      if (tiny_steps >= 3) break;
    }

    const double h = prob.side(u);
    const double violation = std::max(0.0, h);
    if (trace) {
      trace->push_back(TraceRow{restart, outer, prob.objective_raw(u), prob.side_active() ? prob.side_raw(u) : 0.0,
                                violation * prob.side_scale(), lambda, rho, inner_used});
    }
    if (!prob.side_active()) {
      out.u = u;
      out.stationarity = inner_stat;
      out.converged = inner_stat <= stat_tol;
      out.stalled = stalled;
      if (out.converged || stalled) return out;
      inner_tol = std::max(stat_tol, 0.1 * inner_tol);
      continue;
    }
    const double new_lambda = std::max(0.0, lambda + rho * h);
    const bool complementary = std::abs(new_lambda * h) <= feas_tol;
    if (violation <= feas_tol && inner_stat <= stat_tol && complementary) {
      out.u = u;
      out.converged = true;
      out.stationarity = inner_stat;
      return out;
    }
    // Feasible and the objective no longer moves: the remaining stationarity
    // gap is below what the merit function can resolve.
    const double f_now = prob.objective(u);
    const bool flat = std::abs(f_now - f_last) <= 1e-9 * (1.0 + std::abs(f_now));
    f_last = f_now;
    frozen = flat && violation <= feas_tol ? frozen + 1 : 0;
    if (frozen >= 4 ||
        (stalled && violation <= feas_tol && std::abs(new_lambda - lambda) <= 1e-8 * (1.0 + lambda))) {
      out.u = u;
      out.stalled = true;
      out.stationarity = inner_stat;
      return out;
    }
    // A start that settles on a local minimum of the side function above the
    // cap cannot become feasible; give up on it.
    no_progress = violation > feas_tol && violation > (1.0 - 1e-3) * prev_violation ? no_progress + 1 : 0;
    if (no_progress >= 5) {
      out.u = u;
      out.stalled = true;
      out.stationarity = inner_stat;
      return out;
    }
    if (violation > feas_tol && violation > 0.25 * prev_violation) rho = std::min(rho * 10.0, 1e8);
    // After a feasible iterate a small violation only updates the multiplier.
    prev_violation = violation > feas_tol ? violation : std::numeric_limits<double>::infinity();
    lambda = new_lambda;
    inner_tol = std::max(stat_tol, 0.1 * inner_tol);
  }
  out.u = u;
  out.stationarity = std::numeric_limits<double>::infinity();
  return out;
}

/// Phase 1 for one start: move into {side <= cap} if the start lies outside.
/// J_c is convex, so for a J_c cap the segment towards the pure-control
/// optimum `anchor` reaches the cap whenever the problem is feasible. For a
/// detection cap, descend on log Ĵ_d over the polytope until the cap holds.
inline Vector enter_side_feasible(const SideConstrainedProblem& prob, const ReducedConstraints& rc, Vector u,
                                  const Vector& anchor) {
  if (!prob.side_active() || prob.side_raw(u) <= prob.cap()) return u;
  const ProblemSpec& spec = prob.spec();
  if (!prob.control_is_objective()) {
    // J_c(u + t (anchor - u)) = c0 + c1 t + c2 t^2, convex in t.
    const Vector d = anchor - u;
    const auto c = spec.control.along(u, d);
    const double excess = c[0] - prob.cap();
    if (c[0] + c[1] + c[2] > prob.cap()) return anchor;
    double t = 1.0;
    if (c[2] > 0.0) {
      const double disc = c[1] * c[1] - 4.0 * c[2] * excess;
      t = (-c[1] - std::sqrt(std::max(0.0, disc))) / (2.0 * c[2]);
    } else if (c[1] < 0.0) {
      t = -excess / c[1];
    }
    return u + std::clamp(t, 0.0, 1.0) * d;
  }
  const double target = std::log(prob.cap()) - 1e-6;
  for (int it = 0; it < 200; ++it) {
    if (spec.detection.log_value(u) <= target) break;
    const auto [grad, hess] = spec.detection.log_derivatives(u);
    Eigen::SelfAdjointEigenSolver<Matrix> es(hess);
    const Vector& ev = es.eigenvalues();
    const double floor = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    const Matrix model = es.eigenvectors() * ev.cwiseAbs().cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
    const QpResult step = solve_qp(model, grad, rc.M, (rc.b - rc.M * u).cwiseMax(0.0));
    if (step.status != QpStatus::Optimal) break;
    Vector d = step.x;
    const double slope = grad.dot(d);
    if (slope > -1e-14) {
      // Stationary: try the most negative curvature direction.
      if (ev(0) >= -floor) break;
      d = es.eigenvectors().col(0);
      if (grad.dot(d) > 0.0) d = -d;
      d *= step_to_boundary(rc, u, d, 4.0 * (1.0 + u.cwiseAbs().maxCoeff()));
      if (d.cwiseAbs().maxCoeff() == 0.0) break;
    } else {
      const double cap = 10.0 * (1.0 + u.cwiseAbs().maxCoeff());
      const double len = d.cwiseAbs().maxCoeff();
      if (len > cap) d *= cap / len;
    }
    const auto line = spec.detection.along(u, d);
    const double f0 = line.log_value(0.0);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      if (line.log_value(t) < f0 + 1e-4 * t * std::min(grad.dot(d), 0.0) - 1e-14) {
        moved = true;
        break;
      }
    }
    if (!moved) break;
    u += t * d;
  }
  return u;
}

/// Minimal-norm correction towards side(u) <= cap keeping M u <= b.
inline Vector restore_side_feasibility(const SideConstrainedProblem& prob, const ReducedConstraints& rc, Vector u) {
  if (!prob.side_active()) return u;
  const Eigen::Index dim = u.size();
  for (int it = 0; it < 8; ++it) {
    const double excess = prob.side_raw(u) - prob.cap();
    if (excess <= 0.0) break;
    const Vector g = prob.side_gradient_raw(u);
    Matrix a(rc.M.rows() + 1, dim);
    Vector b(rc.M.rows() + 1);
    a.topRows(rc.M.rows()) = rc.M;
    b.head(rc.M.rows()) = (rc.b - rc.M * u).cwiseMax(0.0);
    a.row(rc.M.rows()) = g.transpose();
    b(rc.M.rows()) = -excess - 1e-10 * prob.side_scale();
    const QpResult step = solve_qp(Matrix::Identity(dim, dim), Vector::Zero(dim), a, b);
    if (step.status != QpStatus::Optimal) break;
    u += step.x;
  }
  return u;
}

}  // namespace detail

/// Best feasible local solution of the DetectionConstrained / ControlConstrained
/// problem over a deterministic set of starts.
inline Solution solve_with_side_constraint(const ProblemSpec& spec, const SolverOptions& options = {}) {
  spec.validate();
  linalg::require(spec.kind != ProblemKind::PureControl, "use solve_pure_control for the PureControl formulation");

  ProblemSpec pure_spec = spec;
  pure_spec.kind = ProblemKind::PureControl;
  const Solution pure = solve_pure_control(pure_spec);
  if (pure.status == SolveStatus::Infeasible) {
    Solution s = finalize_solution(spec, pure.u_star, SolveStatus::Infeasible);
    s.farkas = pure.farkas;
    return s;
  }
  const detail::ReducedConstraints rc = detail::reduce_constraints(spec.constraints, spec.control.Phi.rows());
  const Eigen::Index dim = pure.u_star.size();

  const double objective_scale =
      spec.kind == ProblemKind::DetectionConstrained ? std::max(1.0, std::abs(pure.control_cost)) : 1.0;
  const detail::SideConstrainedProblem prob(spec, objective_scale);

  // Starts: pure-control optimum, projected zero, caller's extras, then
  // randomized perturbations of the pure-control optimum.
  std::vector<Vector> starts;
  starts.push_back(pure.u_star);
  starts.push_back(project_onto_polytope(Vector::Zero(dim), rc.M, rc.b).x);
  for (const Vector& e : options.extra_starts) {
    linalg::require(e.size() == dim, "extra start has the wrong length");
    starts.push_back(project_onto_polytope(e, rc.M, rc.b).x);
  }
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double spread = 1.0 + pure.u_star.cwiseAbs().maxCoeff();
  while (static_cast<int>(starts.size()) < std::max(options.restarts, 1) + static_cast<int>(options.extra_starts.size())) {
    Vector z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
    starts.push_back(project_onto_polytope(pure.u_star + spread * z, rc.M, rc.b).x);
  }

  std::optional<Solution> best;
  double min_side = std::numeric_limits<double>::infinity();
  std::vector<TraceRow> trace;
  int used = 0;
  auto consider = [&](Solution cand) {
    const bool feasible = cand.constraint_violation <= options.constraint_tol &&
                          cand.side_constraint_slack >= -options.constraint_tol;
    if (!feasible) return;
    if (!best) {
      best = std::move(cand);
      return;
    }
    const double tie = 1e-9 * (1.0 + std::abs(best->objective_value));
    bool better = cand.objective_value < best->objective_value - tie;
    if (!better && std::abs(cand.objective_value - best->objective_value) <= tie) {
      // Optimal beats Feasible, then smaller norm, then lexicographic.
      auto rank = [](SolveStatus st) { return st == SolveStatus::Optimal ? 0 : 1; };
      if (rank(cand.status) != rank(best->status)) {
        if (rank(cand.status) < rank(best->status)) best = std::move(cand);
        return;
      }
      const double na = cand.u_star.norm();
      const double nb = best->u_star.norm();
      better = na < nb || (na == nb && detail::lexicographically_less(cand.u_star, best->u_star));
    }
    if (better) best = std::move(cand);
  };
  for (std::size_t k = 0; k < starts.size(); ++k) {
    ++used;
    // A feasible start is itself a fallback candidate.
    if (prob.side_active()) min_side = std::min(min_side, prob.side_raw(starts[k]));
    consider(finalize_solution(spec, starts[k], SolveStatus::Feasible));
    const Vector entry = detail::enter_side_feasible(prob, rc, starts[k], pure.u_star);
    if (prob.side_active()) min_side = std::min(min_side, prob.side_raw(entry));
    consider(finalize_solution(spec, entry, SolveStatus::Feasible));
    detail::LocalResult local = detail::augmented_lagrangian(prob, rc, entry, options, static_cast<int>(k),
                                                             options.record_trace ? &trace : nullptr);
    Vector u = detail::restore_side_feasibility(prob, rc, local.u);
    const double side = prob.side_raw(u);
    if (prob.side_active()) min_side = std::min(min_side, side);
    // Only feasible candidates are kept, so an uncertified one is Feasible.
    const SolveStatus status = local.converged ? SolveStatus::Optimal : SolveStatus::Feasible;
    Solution cand = finalize_solution(spec, std::move(u), status);
    cand.stationarity = local.stationarity;
    consider(std::move(cand));
  }

  if (!best) {
    Solution s = finalize_solution(spec, pure.u_star, SolveStatus::Infeasible);
    s.min_side_value = min_side;
    s.restarts_used = used;
    s.trace = std::move(trace);
    return s;
  }
  best->restarts_used = used;
  best->min_side_value = min_side;
  best->trace = std::move(trace);
  return *best;
}

/// Dispatches on spec.kind.
inline Solution solve(const ProblemSpec& spec, const SolverOptions& options = {}) {
  return spec.kind == ProblemKind::PureControl ? solve_pure_control(spec) : solve_with_side_constraint(spec, options);
}

}  // namespace asentinel
