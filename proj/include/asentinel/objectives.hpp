#pragma once

// Deterministic forms of the window objectives and constraints as functions
// of the stacked open-loop input u = u_{0:N-1}.
//
//   J_c(u) = E[ sum_k |y_k - r_k|_Q^2 + sum_k |u_k|_R^2 ]  = uᵀ Phi u + psiᵀ u + c0
//   Ĵ_d(u) = sum_{i<j} sqrt(P_i P_j) exp(-phi_ij(u))
//   phi_ij = 1/4 Δȳᵀ (H_i + H_j)^{-1} Δȳ + 1/2 ln(det((H_i+H_j)/2) / sqrt(det H_i det H_j))
//
// with Δȳ = ȳ_{0:N|j} - ȳ_{0:N|i} affine in u. Ĵ_d is the Bhattacharyya bound
// on the probability that the first detector misidentifies the mode.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"
#include "asentinel/model.hpp"
#include "asentinel/model_io.hpp"

namespace asentinel {

namespace detail {

/// log(sum exp(a_k)); -inf for an empty list.
inline double log_sum_exp(const std::vector<double>& a) {
  if (a.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double v : a) s += std::exp(v - top);
  return top + std::log(s);
}

/// Block-diagonal stack of `count` copies of `block`.
inline Matrix block_diagonal(const Matrix& block, int count) {
  Matrix out = Matrix::Zero(block.rows() * count, block.cols() * count);
  for (int k = 0; k < count; ++k) out.block(k * block.rows(), k * block.cols(), block.rows(), block.cols()) = block;
  return out;
}

inline void check_horizon(const LinearGaussianSystem& sys, const ModeSet& modes, int horizon) {
  linalg::require(horizon >= 1, "horizon must be >= 1");
  linalg::require(modes.size() >= 1, "mode set is empty");
  for (const auto& b : modes.input_matrices) {
    linalg::require(b.rows() == sys.states() && b.cols() == sys.inputs(), "B_mu dimensions do not match system");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Control objective

struct ControlObjectiveForm {
  Matrix Phi;  // pN x pN, symmetric
  Vector psi;  // pN
  double c0 = 0.0;
  int horizon = 0;
  int inputs = 0;

  /// Constant term and linear term with the cross term of the constant and the
  /// first F2 term as typeset in the source derivation. Kept for diagnostics;
  /// psi_as_printed is only defined when m == n.
  double c0_as_printed = 0.0;
  std::optional<Vector> psi_as_printed;

  double value(const Vector& u) const { return u.dot(Phi * u) + psi.dot(u) + c0; }
  Vector gradient(const Vector& u) const { return 2.0 * (Phi * u) + psi; }
  Matrix hessian() const { return 2.0 * Phi; }

  /// Coefficients of t -> value(u + t d) = a + b t + c t².
  std::array<double, 3> along(const Vector& u, const Vector& d) const {
    const Vector pd = Phi * d;
    return {value(u), 2.0 * u.dot(pd) + psi.dot(d), d.dot(pd)};
  }
};

inline double eval_control_objective(const ControlObjectiveForm& form, const Vector& u) {
  linalg::require(u.size() == form.Phi.rows(), "u has the wrong length");
  return form.value(u);
}

inline Vector control_objective_gradient(const ControlObjectiveForm& form, const Vector& u) {
  linalg::require(u.size() == form.Phi.rows(), "u has the wrong length");
  return form.gradient(u);
}

struct ControlWeights {
  Matrix Q;
  Matrix R;
  /// Evaluation-only forms may use a PSD (e.g. zero) R.
  bool require_positive_definite_r = true;
};

inline ControlObjectiveForm build_control_objective(const LinearGaussianSystem& sys, const ModeSet& modes,
                                                    const Vector& reference, const ControlWeights& weights,
                                                    int horizon) {
  detail::check_horizon(sys, modes, horizon);
  const int n = sys.states();
  const int m = sys.outputs();
  const int p = sys.inputs();
  const Matrix& q = weights.Q;
  const Matrix& r = weights.R;
  linalg::require(q.rows() == m && q.cols() == m, "Q must be m x m");
  linalg::require(r.rows() == p && r.cols() == p, "R must be p x p");
  linalg::require(linalg::is_psd(q), "Q must be symmetric positive semi-definite");
  if (weights.require_positive_definite_r) {
    linalg::require(linalg::is_pd(r), "R must be symmetric positive definite");
  } else {
    linalg::require(linalg::is_psd(r), "R must be symmetric positive semi-definite");
  }
  linalg::require(reference.size() == static_cast<Eigen::Index>(m) * (horizon + 1), "reference must have length m(N+1)");

  const Matrix cbar = detail::block_diagonal(sys.C, horizon + 1);
  const Matrix qbar = detail::block_diagonal(q, horizon + 1);

  ControlObjectiveForm form;
  form.horizon = horizon;
  form.inputs = p;
  form.Phi = Matrix::Zero(p * horizon, p * horizon);
  form.psi = Vector::Zero(p * horizon);
  double printed_cross = 0.0;
  if (m == n) form.psi_as_printed = Vector::Zero(p * horizon);

  for (int i = 0; i < modes.size(); ++i) {
    const double prior = modes.priors(i);
    if (prior == 0.0) continue;
    const StatePrediction pred = state_prediction(sys.A, modes.input_matrix(i), horizon);
    const Vector x_free = pred.free * sys.x0_mean;
    const Vector y_free = cbar * x_free;
    const Matrix y_forced = cbar * pred.forced;
    const Vector offset = y_free - reference;
    const Matrix qy = qbar * y_forced;
    form.Phi += prior * (y_forced.transpose() * qy);
    form.psi += prior * 2.0 * (qy.transpose() * offset);
    form.c0 += prior * offset.dot(qbar * offset);
    printed_cross += prior * reference.dot(qbar * y_free);
    if (form.psi_as_printed) {
      // 2 x̄0ᵀ(A^k)ᵀ Q Γ_k without the output map, then the reference term.
      const Matrix qbar_state = detail::block_diagonal(q, horizon + 1);
      *form.psi_as_printed += prior * 2.0 * (pred.forced.transpose() * (qbar_state * x_free));
      *form.psi_as_printed -= prior * 2.0 * (qy.transpose() * reference);
    }
  }
  form.Phi += detail::block_diagonal(r, horizon);
  form.Phi = linalg::symmetrize(form.Phi);

  // Output covariance does not depend on the mode, so the prior-weighted trace
  // collapses to a single term when the priors sum to one.
  const Matrix y_cov = output_covariance(sys, state_covariance(sys, horizon), horizon);
  double trace = 0.0;
  for (int k = 0; k <= horizon; ++k) trace += (q * y_cov.block(k * m, k * m, m, m)).trace();
  form.c0 += modes.priors.sum() * trace;

  // The typeset constant carries +sum P r_kᵀ Q C A^k x̄0 where the expansion
  // needs -2 sum P r_kᵀ Q C A^k x̄0.
  form.c0_as_printed = form.c0 + 3.0 * printed_cross;
  return form;
}

// ---------------------------------------------------------------------------
// Detection bound

struct DetectionPairTerm {
  int i = 0;
  int j = 0;
  double weight = 0.0;  // sqrt(P_i P_j)
  Matrix D;             // m(N+1) x pN, linear part of Δȳ
  Vector offset;        // m(N+1), constant part of Δȳ
  Matrix W;             // (H_i + H_j)^{-1}
  double logdet = 0.0;  // 1/2 ln(det((H_i+H_j)/2) / sqrt(det H_i det H_j))
  Matrix DtW;           // Dᵀ W
  Matrix DtWD;          // Dᵀ W D

  Vector delta(const Vector& u) const { return offset + D * u; }
  double exponent(const Vector& u) const {
    const Vector d = delta(u);
    return 0.25 * d.dot(W * d) + logdet;
  }
};

struct DetectionBoundForm {
  std::vector<DetectionPairTerm> pairs;
  int horizon = 0;
  int inputs = 0;

  /// sum of the pair weights: the value of the bound when every Δȳ vanishes.
  double weight_sum() const {
    double s = 0.0;
    for (const auto& t : pairs) s += t.weight;
    return s;
  }

  double value(const Vector& u) const {
    double v = 0.0;
    for (const auto& t : pairs) v += t.weight * std::exp(-t.exponent(u));
    return v;
  }

  Vector gradient(const Vector& u) const {
    Vector g = Vector::Zero(u.size());
    for (const auto& t : pairs) {
      const Vector d = t.delta(u);
      const double e = t.weight * std::exp(-(0.25 * d.dot(t.W * d) + t.logdet));
      g -= 0.5 * e * (t.DtW * d);
    }
    return g;
  }

  /// log of the bound, computed as a log-sum-exp so it stays finite when every
  /// term underflows.
  double log_value(const Vector& u) const {
    std::vector<double> a;
    for (const auto& t : pairs) {
      if (t.weight > 0.0) a.push_back(std::log(t.weight) - t.exponent(u));
    }
    return detail::log_sum_exp(a);
  }

  /// Gradient and Hessian of log_value.
  std::pair<Vector, Matrix> log_derivatives(const Vector& u) const {
    const Eigen::Index n = u.size();
    std::vector<double> a;
    std::vector<Vector> g;
    std::vector<const DetectionPairTerm*> used;
    for (const auto& t : pairs) {
      if (t.weight <= 0.0) continue;
      const Vector d = t.delta(u);
      a.push_back(std::log(t.weight) - (0.25 * d.dot(t.W * d) + t.logdet));
      g.push_back(-0.5 * (t.DtW * d));
      used.push_back(&t);
    }
    const double top = detail::log_sum_exp(a);
    Vector grad = Vector::Zero(n);
    Matrix hess = Matrix::Zero(n, n);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = std::exp(a[k] - top);
      grad += w * g[k];
      hess += w * (g[k] * g[k].transpose() - 0.5 * used[k]->DtWD);
    }
    hess -= grad * grad.transpose();
    return {grad, linalg::symmetrize(hess)};
  }

  /// Restriction to the line u + t d: per pair the exponent is quadratic in t.
  struct Line {
    std::vector<double> weight, e0, e1, e2;
    double value(double t) const {
      double v = 0.0;
      for (std::size_t k = 0; k < weight.size(); ++k) v += weight[k] * std::exp(-(e0[k] + t * (e1[k] + t * e2[k])));
      return v;
    }
    double log_value(double t) const {
      std::vector<double> a;
      for (std::size_t k = 0; k < weight.size(); ++k) {
        if (weight[k] > 0.0) a.push_back(std::log(weight[k]) - (e0[k] + t * (e1[k] + t * e2[k])));
      }
      return detail::log_sum_exp(a);
    }
  };

  Line along(const Vector& u, const Vector& d) const {
    Line line;
    for (const auto& t : pairs) {
      const Vector a = t.delta(u);
      const Vector b = t.D * d;
      const Vector wb = t.W * b;
      line.weight.push_back(t.weight);
      line.e0.push_back(0.25 * a.dot(t.W * a) + t.logdet);
      line.e1.push_back(0.5 * a.dot(wb));
      line.e2.push_back(0.25 * b.dot(wb));
    }
    return line;
  }

  /// Exact Hessian: sum w e^{-phi} (g gᵀ - 1/2 DᵀWD) with g = 1/2 DᵀWΔ.
  Matrix hessian(const Vector& u) const {
    Matrix h = Matrix::Zero(u.size(), u.size());
    for (const auto& t : pairs) {
      const Vector d = t.delta(u);
      const double e = t.weight * std::exp(-(0.25 * d.dot(t.W * d) + t.logdet));
      const Vector g = 0.5 * (t.DtW * d);
      h += e * (g * g.transpose() - 0.5 * t.DtWD);
    }
    return linalg::symmetrize(h);
  }
};

inline double eval_detection_bound(const DetectionBoundForm& form, const Vector& u) {
  linalg::require(u.size() == static_cast<Eigen::Index>(form.horizon) * form.inputs, "u has the wrong length");
  return form.value(u);
}

inline Vector detection_bound_gradient(const DetectionBoundForm& form, const Vector& u) {
  linalg::require(u.size() == static_cast<Eigen::Index>(form.horizon) * form.inputs, "u has the wrong length");
  return form.gradient(u);
}

/// Builds the pairwise terms over the first detection window [0, N]. Every
/// mode starts from the system's x0_mean.
inline DetectionBoundForm build_detection_bound(const LinearGaussianSystem& sys, const ModeSet& modes, int horizon) {
  detail::check_horizon(sys, modes, horizon);
  const Matrix cbar = detail::block_diagonal(sys.C, horizon + 1);

  // H_{y|mu} is identical for every mode; kept per mode so the pair terms stay
  // general.
  const Matrix y_cov = output_covariance(sys, state_covariance(sys, horizon), horizon);
  std::vector<Matrix> covs(static_cast<std::size_t>(modes.size()), y_cov);
  std::vector<double> logdets;
  for (const auto& h : covs) {
    try {
      logdets.push_back(linalg::logdet_spd(h));
    } catch (const FactorizationError&) {
      throw FactorizationError("output covariance is not positive definite (Hv must be positive definite)");
    }
  }

  std::vector<Vector> y_free;
  std::vector<Matrix> y_forced;
  for (int i = 0; i < modes.size(); ++i) {
    const StatePrediction pred = state_prediction(sys.A, modes.input_matrix(i), horizon);
    y_free.push_back(cbar * (pred.free * sys.x0_mean));
    y_forced.push_back(cbar * pred.forced);
  }

  DetectionBoundForm form;
  form.horizon = horizon;
  form.inputs = sys.inputs();
  for (int i = 0; i < modes.size(); ++i) {
    for (int j = i + 1; j < modes.size(); ++j) {
      DetectionPairTerm t;
      t.i = i;
      t.j = j;
      t.weight = std::sqrt(modes.priors(i) * modes.priors(j));
      t.D = y_forced[static_cast<std::size_t>(j)] - y_forced[static_cast<std::size_t>(i)];
      t.offset = y_free[static_cast<std::size_t>(j)] - y_free[static_cast<std::size_t>(i)];
      const Matrix sum = covs[static_cast<std::size_t>(i)] + covs[static_cast<std::size_t>(j)];
      try {
        t.W = linalg::inverse_spd(sum);
        t.logdet = 0.5 * (linalg::logdet_spd(0.5 * sum) -
                          0.5 * (logdets[static_cast<std::size_t>(i)] + logdets[static_cast<std::size_t>(j)]));
      } catch (const FactorizationError&) {
        throw FactorizationError("H_i + H_j is singular for pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                 ")");
      }
      t.DtW = t.D.transpose() * t.W;
      t.DtWD = linalg::symmetrize(t.DtW * t.D);
      form.pairs.push_back(std::move(t));
    }
  }
  return form;
}

// ---------------------------------------------------------------------------
// Expectational constraints

struct ConstraintRowTag {
  int mode = 0;
  int k = 0;
  int row = 0;
};

/// M u <= b for every mode and every k in 0..N. At k = N the input term is
/// absent because u_N belongs to the next window.
struct ExpandedConstraints {
  Matrix M;
  Vector b;
  std::vector<ConstraintRowTag> tags;

  Eigen::Index rows() const { return M.rows(); }

  /// max over rows of (M u - b)_+, 0 for an empty set.
  double violation(const Vector& u) const {
    if (M.rows() == 0) return 0.0;
    return std::max(0.0, (M * u - b).maxCoeff());
  }
};

inline ExpandedConstraints expand_constraints(const LinearGaussianSystem& sys, const ModeSet& modes, const Matrix& gx,
                                              const Matrix& gu, const Vector& g, int horizon) {
  detail::check_horizon(sys, modes, horizon);
  const int n = sys.states();
  const int p = sys.inputs();
  const auto nc = g.size();
  linalg::require(gx.rows() == nc && gx.cols() == n, "Gx must be n_c x n");
  linalg::require(gu.rows() == nc && gu.cols() == p, "Gu must be n_c x p");

  ExpandedConstraints out;
  const Eigen::Index total = nc * (horizon + 1) * modes.size();
  out.M = Matrix::Zero(total, static_cast<Eigen::Index>(p) * horizon);
  out.b = Vector::Zero(total);
  out.tags.reserve(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (int i = 0; i < modes.size(); ++i) {
    const StatePrediction pred = state_prediction(sys.A, modes.input_matrix(i), horizon);
    for (int k = 0; k <= horizon; ++k) {
      const Matrix gx_forced = gx * pred.forced.block(static_cast<Eigen::Index>(k) * n, 0, n, pred.forced.cols());
      const Vector gx_free = gx * (pred.free.block(static_cast<Eigen::Index>(k) * n, 0, n, n) * sys.x0_mean);
      for (Eigen::Index r = 0; r < nc; ++r, ++row) {
        out.M.row(row) = gx_forced.row(r);
        if (k < horizon) out.M.block(row, static_cast<Eigen::Index>(k) * p, 1, p) += gu.row(r);
        out.b(row) = g(r) - gx_free(r);
        out.tags.push_back(ConstraintRowTag{i, k, static_cast<int>(r)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

inline Json objective_diagnostics_json(const ControlObjectiveForm& control, const DetectionBoundForm& detection) {
  Json pairs = Json::array();
  for (const auto& t : detection.pairs) {
    pairs.push_back(Json{{"i", t.i},
                         {"j", t.j},
                         {"weight", t.weight},
                         {"logdet", t.logdet},
                         {"D", io::matrix_to_json(t.D)},
                         {"offset", io::vector_to_json(t.offset)}});
  }
  Json printed{{"c0", control.c0_as_printed}};
  printed["psi"] = control.psi_as_printed ? io::vector_to_json(*control.psi_as_printed) : Json(nullptr);
  return Json{{"control",
               {{"Phi", io::matrix_to_json(control.Phi)},
                {"psi", io::vector_to_json(control.psi)},
                {"c0", control.c0},
                {"as_printed", printed}}},
              {"detection", {{"weight_sum", detection.weight_sum()}, {"pairs", pairs}}}};
}

}  // namespace asentinel
