#pragma once

// Dense strictly convex QP
//
//   minimize   1/2 xᵀ G x + cᵀ x
//   subject to A x <= b
//
// solved with the Goldfarb-Idnani dual active-set method. The method starts
// from the unconstrained minimizer and adds violated constraints one at a
// time, so it needs no feasible starting point, tolerates linearly dependent
// rows (they are never added twice) and detects infeasibility with a Farkas
// certificate: y >= 0, Aᵀ y = 0, bᵀ y < 0.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"

namespace asentinel {

enum class QpStatus { Optimal, Infeasible, MaxIterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::MaxIterations: return "MaxIterations";
  }
  return "?";
}

struct QpResult {
  QpStatus status = QpStatus::MaxIterations;
  Vector x;
  Vector multipliers;  // one per row of A, zero for inactive rows
  double objective = 0.0;
  std::vector<int> active;
  std::optional<Vector> farkas;  // set when status == Infeasible
  int iterations = 0;
};

struct QpOptions {
  double feasibility_tol = 1e-12;  // relative to 1 + |b_i|
  int max_iterations = 0;          // 0: 10 (n + m) + 100
};

namespace detail {

inline void givens(double a, double b, double& c, double& s, double& h) {
  h = std::hypot(a, b);
  if (h == 0.0) {
    c = 1.0;
    s = 0.0;
  } else {
    c = a / h;
    s = b / h;
  }
}

// J <- J Qᵀ for the rotation acting on coordinates (i, i+1).
inline void rotate_columns(Matrix& j, Eigen::Index i, double c, double s) {
  for (Eigen::Index r = 0; r < j.rows(); ++r) {
    const double a = j(r, i);
    const double b = j(r, i + 1);
    j(r, i) = c * a + s * b;
    j(r, i + 1) = -s * a + c * b;
  }
}

}  // namespace detail

/// Maximum of |G x + c + Aᵀλ|, (A x - b)_+ and |λ_i (A_i x - b_i)|.
inline double qp_kkt_residual(const Matrix& g, const Vector& c, const Matrix& a, const Vector& b, const Vector& x,
                              const Vector& lambda) {
  double res = (g * x + c + a.transpose() * lambda).cwiseAbs().maxCoeff();
  if (a.rows() > 0) {
    const Vector slack = a * x - b;
    res = std::max(res, std::max(0.0, slack.maxCoeff()));
    res = std::max(res, lambda.cwiseProduct(slack).cwiseAbs().maxCoeff());
    res = std::max(res, std::max(0.0, -lambda.minCoeff()));
  }
  return res;
}

inline QpResult solve_qp(const Matrix& g, const Vector& c, const Matrix& a, const Vector& b,
                         const QpOptions& options = {}) {
  const Eigen::Index n = g.rows();
  const Eigen::Index m = a.rows();
  linalg::require(g.cols() == n && c.size() == n, "QP Hessian / gradient dimension mismatch");
  linalg::require(m == 0 || a.cols() == n, "QP constraint matrix has the wrong column count");
  linalg::require(b.size() == m, "QP bound vector has the wrong length");

  Eigen::LLT<Matrix> llt(linalg::symmetrize(g));
  if (llt.info() != Eigen::Success) throw FactorizationError("QP Hessian is not positive definite");

  // J = L^{-T}; J Jᵀ = G^{-1}.
  Matrix j = llt.matrixU().solve(Matrix::Identity(n, n));
  Matrix r = Matrix::Zero(n, n);
  std::vector<int> active;
  std::vector<double> u;  // multipliers of active constraints

  QpResult result;
  Vector x = -llt.solve(c);
  const int max_iter = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(10 * (n + m) + 100);
  std::vector<char> is_active(static_cast<std::size_t>(m), 0);

  int iter = 0;
  auto finish = [&](QpStatus status) {
    result.status = status;
    result.iterations = iter;
    result.x = x;
    result.multipliers = Vector::Zero(m);
    for (std::size_t k = 0; k < active.size(); ++k) result.multipliers(active[k]) = u[k];
    result.active = active;
    result.objective = 0.5 * x.dot(g * x) + c.dot(x);
    return result;
  };

  while (true) {
    // Step 1: most violated constraint.
    int p = -1;
    double worst = 0.0;
    if (m > 0) {
      const Vector slack = b - a * x;  // >= 0 when satisfied
      for (Eigen::Index i = 0; i < m; ++i) {
        if (is_active[static_cast<std::size_t>(i)]) continue;
        const double scaled = slack(i) / (1.0 + std::abs(b(i)));
        if (scaled < -options.feasibility_tol && scaled < worst) {
          worst = scaled;
          p = static_cast<int>(i);
        }
      }
    }
    if (p < 0) return finish(QpStatus::Optimal);

    // In the n_pᵀ x >= b_p convention the normal is -A_p.
    const Vector np = -a.row(p).transpose();
    double u_new = 0.0;

    while (true) {
      if (++iter > max_iter) return finish(QpStatus::MaxIterations);
      const auto q = static_cast<Eigen::Index>(active.size());
      const Vector d = j.transpose() * np;
      const Vector z = j.rightCols(n - q) * d.tail(n - q);
      Vector rr(q);
      if (q > 0) rr = r.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

      // Partial (dual) step length.
      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      const double rscale = q > 0 ? rr.cwiseAbs().maxCoeff() : 0.0;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (rr(k) > 1e-14 * rscale) {
          const double ratio = u[static_cast<std::size_t>(k)] / rr(k);
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      // Full (primal) step length.
      double t2 = std::numeric_limits<double>::infinity();
      const double znp = z.dot(np);
      if (d.tail(n - q).squaredNorm() > 1e-24 * d.squaredNorm() && znp > 0.0) {
        const double s_p = np.dot(x) + b(p);  // n_pᵀ x - (-b_p)
        t2 = -s_p / znp;
      }

      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        // No primal or dual progress: the constraint set is infeasible.
        Vector y = Vector::Zero(m);
        y(p) = 1.0;
        for (Eigen::Index k = 0; k < q; ++k) y(active[static_cast<std::size_t>(k)]) = -rr(k);
        result.farkas = y;
        return finish(QpStatus::Infeasible);
      }

      const double t = std::min(t1, t2);
      if (std::isfinite(t2)) x += t * z;
      for (Eigen::Index k = 0; k < q; ++k) u[static_cast<std::size_t>(k)] -= t * rr(k);
      u_new += t;

      if (t2 <= t1) {
        // Full step: add p to the active set.
        Vector dd = d;
        for (Eigen::Index i = n - 1; i > q; --i) {
          double cs, sn, h;
          detail::givens(dd(i - 1), dd(i), cs, sn, h);
          if (sn == 0.0) continue;
          dd(i - 1) = h;
          dd(i) = 0.0;
          detail::rotate_columns(j, i - 1, cs, sn);
        }
        r.col(q).head(q + 1) = dd.head(q + 1);
        active.push_back(p);
        u.push_back(u_new);
        is_active[static_cast<std::size_t>(p)] = 1;
        break;
      }

      // Partial step: drop a blocking constraint and retry with p.
      is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(drop)])] = 0;
      active.erase(active.begin() + drop);
      u.erase(u.begin() + drop);
      for (Eigen::Index col = drop; col < q - 1; ++col) r.col(col) = r.col(col + 1);
      r.col(q - 1).setZero();
      for (Eigen::Index k = drop; k < q - 1; ++k) {
        double cs, sn, h;
        detail::givens(r(k, k), r(k + 1, k), cs, sn, h);
        if (sn == 0.0) continue;
        for (Eigen::Index col = k; col < q - 1; ++col) {
          const double top = r(k, col);
          const double bot = r(k + 1, col);
          r(k, col) = cs * top + sn * bot;
          r(k + 1, col) = -sn * top + cs * bot;
        }
        r(k + 1, k) = 0.0;
        detail::rotate_columns(j, k, cs, sn);
      }
      r.row(q - 1).setZero();
    }
  }
}

/// Euclidean projection of `point` onto {x : A x <= b}.
inline QpResult project_onto_polytope(const Vector& point, const Matrix& a, const Vector& b) {
  const Eigen::Index n = point.size();
  return solve_qp(Matrix::Identity(n, n), -point, a, b);
}

}  // namespace asentinel
