#pragma once

// Mode-indexed linear Gaussian system, exact trajectory moments and sampled
// rollouts.
//
//   x_{k+1} = A x_k + B_mu u_k + w_k,   w_k ~ N(0, Hw)
//   y_k     = C x_k + v_k,              v_k ~ N(0, Hv)
//   x_0 ~ N(x0_mean, x0_cov)
//
// A prevented-actuation attack on actuator j zeroes column j of B. With p
// actuators there are 2^p modes; mode i attacks actuator j iff bit j of i is
// set, so mode 0 is attack-free.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"

namespace asentinel {

using Mask = std::vector<bool>;

struct LinearGaussianSystem {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix Hw;
  Matrix Hv;
  Vector x0_mean;
  Matrix x0_cov;

  int states() const { return static_cast<int>(A.rows()); }
  int inputs() const { return static_cast<int>(B.cols()); }
  int outputs() const { return static_cast<int>(C.rows()); }

  /// Throws InvalidArgument on inconsistent dimensions or non-PSD covariances.
  void validate() const {
    using linalg::require;
    const auto n = A.rows();
    require(n > 0 && A.cols() == n, "A must be square and non-empty");
    require(B.rows() == n, "B must have n rows");
    require(C.cols() == n, "C must have n columns");
    require(Hw.rows() == n && Hw.cols() == n, "Hw must be n x n");
    require(Hv.rows() == C.rows() && Hv.cols() == C.rows(), "Hv must be m x m");
    require(x0_mean.size() == n, "x0_mean must have length n");
    require(x0_cov.rows() == n && x0_cov.cols() == n, "x0_cov must be n x n");
    require(linalg::is_psd(Hw), "Hw must be symmetric positive semi-definite");
    require(linalg::is_psd(Hv), "Hv must be symmetric positive semi-definite");
    require(linalg::is_psd(x0_cov), "x0_cov must be symmetric positive semi-definite");
  }
};

struct ModeSet {
  std::vector<Mask> masks;
  std::vector<Matrix> input_matrices;
  Vector priors;

  int size() const { return static_cast<int>(masks.size()); }
  const Matrix& input_matrix(int mode) const { return input_matrices.at(static_cast<std::size_t>(mode)); }
};

/// Stacked open-loop input sequence u_{0:N-1}.
class ControlSequence {
 public:
  ControlSequence(Vector u, int horizon, int inputs) : u_(std::move(u)), horizon_(horizon), inputs_(inputs) {
    linalg::require(horizon >= 0 && inputs > 0, "control sequence needs horizon >= 0 and inputs > 0");
    linalg::require(u_.size() == static_cast<Eigen::Index>(horizon) * inputs,
                    "control sequence length must equal p * N");
  }

  static ControlSequence zeros(int horizon, int inputs) {
    return ControlSequence(Vector::Zero(static_cast<Eigen::Index>(horizon) * inputs), horizon, inputs);
  }

  const Vector& stacked() const { return u_; }
  int horizon() const { return horizon_; }
  int inputs() const { return inputs_; }
  auto at(int k) const { return u_.segment(static_cast<Eigen::Index>(k) * inputs_, inputs_); }

 private:
  Vector u_;
  int horizon_;
  int inputs_;
};

struct TrajectoryMoments {
  int mode = 0;
  int horizon = 0;
  Vector x_mean;  // n(N+1)
  Matrix x_cov;   // n(N+1) x n(N+1)
  Vector y_mean;  // m(N+1)
  Matrix y_cov;   // m(N+1) x m(N+1)

  auto x_mean_at(int k, int n) const { return x_mean.segment(static_cast<Eigen::Index>(k) * n, n); }
  auto y_mean_at(int k, int m) const { return y_mean.segment(static_cast<Eigen::Index>(k) * m, m); }
  auto x_cov_block(int k, int l, int n) const {
    return x_cov.block(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(l) * n, n, n);
  }
  auto y_cov_block(int k, int l, int m) const {
    return y_cov.block(static_cast<Eigen::Index>(k) * m, static_cast<Eigen::Index>(l) * m, m, m);
  }
};

// ---------------------------------------------------------------------------
// Modes

inline Matrix apply_mode_mask(const Matrix& b, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != b.cols()) {
    throw InvalidArgument("mask length " + std::to_string(mask.size()) + " does not match " +
                          std::to_string(b.cols()) + " input columns");
  }
  Matrix out = b;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) out.col(static_cast<Eigen::Index>(j)).setZero();
  }
  return out;
}

inline constexpr int kMaxActuators = 12;

inline Mask mask_from_index(int index, int p) {
  Mask mask(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) mask[static_cast<std::size_t>(j)] = ((index >> j) & 1) != 0;
  return mask;
}

/// Bit string with character j describing actuator j ("10" = actuator 0 attacked).
inline std::string mask_to_string(const Mask& mask) {
  std::string s;
  for (bool b : mask) s.push_back(b ? '1' : '0');
  return s;
}

inline Mask mask_from_string(const std::string& s) {
  Mask mask;
  for (char c : s) {
    if (c != '0' && c != '1') throw InvalidArgument("mask string must contain only '0'/'1': \"" + s + "\"");
    mask.push_back(c == '1');
  }
  return mask;
}

inline Vector uniform_priors(int p) {
  if (p > kMaxActuators) throw CapacityError("too many actuators to enumerate modes");
  const int count = 1 << p;
  return Vector::Constant(count, 1.0 / count);
}

inline void validate_priors(const Vector& priors) {
  if (priors.size() == 0) throw InvalidArgument("priors must be non-empty");
  if ((priors.array() < 0.0).any()) throw InvalidArgument("priors must be non-negative");
  if (std::abs(priors.sum() - 1.0) > 1e-12) throw InvalidArgument("priors must sum to 1");
}

/// All 2^p attack masks in binary-counting order together with B_mu.
inline ModeSet enumerate_modes(const Matrix& b, const Vector& priors) {
  const int p = static_cast<int>(b.cols());
  if (p > kMaxActuators) {
    throw CapacityError("p = " + std::to_string(p) + " exceeds the limit of " + std::to_string(kMaxActuators) +
                        " actuators");
  }
  const int count = 1 << p;
  if (priors.size() != count) {
    throw InvalidArgument("expected " + std::to_string(count) + " priors, got " + std::to_string(priors.size()));
  }
  validate_priors(priors);
  ModeSet modes;
  modes.priors = priors;
  for (int i = 0; i < count; ++i) {
    modes.masks.push_back(mask_from_index(i, p));
    modes.input_matrices.push_back(apply_mode_mask(b, modes.masks.back()));
  }
  return modes;
}

/// Builds a ModeSet from explicit masks (e.g. read from a file).
inline ModeSet modes_from_masks(const Matrix& b, const std::vector<Mask>& masks, const Vector& priors) {
  linalg::require(static_cast<Eigen::Index>(masks.size()) == priors.size(), "one prior per mask required");
  validate_priors(priors);
  ModeSet modes;
  modes.priors = priors;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (masks[i] == masks[j]) throw InvalidArgument("duplicate mask " + mask_to_string(masks[i]));
    }
    modes.masks.push_back(masks[i]);
    modes.input_matrices.push_back(apply_mode_mask(b, masks[i]));
  }
  return modes;
}

// ---------------------------------------------------------------------------
// Moments

/// Stacked state covariance H_x over k = 0..N. Independent of mode and input.
/// Uses H(l,l) = A H(l-1,l-1) Aᵀ + Hw and H(k,l) = A^{k-l} H(l,l) for k >= l.
inline Matrix state_covariance(const LinearGaussianSystem& sys, int horizon) {
  const int n = sys.states();
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * (horizon + 1);
  Matrix cov = Matrix::Zero(dim, dim);
  Matrix diag = sys.x0_cov;
  for (int l = 0; l <= horizon; ++l) {
    if (l > 0) diag = linalg::symmetrize(sys.A * diag * sys.A.transpose() + sys.Hw);
    Matrix block = diag;
    for (int k = l; k <= horizon; ++k) {
      if (k > l) block = sys.A * block;
      cov.block(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(l) * n, n, n) = block;
      if (k > l) cov.block(static_cast<Eigen::Index>(l) * n, static_cast<Eigen::Index>(k) * n, n, n) = block.transpose();
    }
  }
  return cov;
}

/// Stacked output covariance from a stacked state covariance: C-blocks plus Hv
/// on the diagonal blocks only.
inline Matrix output_covariance(const LinearGaussianSystem& sys, const Matrix& x_cov, int horizon) {
  const int m = sys.outputs();
  const int n = sys.states();
  Matrix cbar = Matrix::Zero(static_cast<Eigen::Index>(m) * (horizon + 1), static_cast<Eigen::Index>(n) * (horizon + 1));
  for (int k = 0; k <= horizon; ++k) {
    cbar.block(static_cast<Eigen::Index>(k) * m, static_cast<Eigen::Index>(k) * n, m, n) = sys.C;
  }
  Matrix y_cov = cbar * x_cov * cbar.transpose();
  for (int k = 0; k <= horizon; ++k) {
    y_cov.block(static_cast<Eigen::Index>(k) * m, static_cast<Eigen::Index>(k) * m, m, m) += sys.Hv;
  }
  return linalg::symmetrize(y_cov);
}

/// Affine map of the stacked state mean: x̄_{0:N} = free * x̄_0 + forced * u_{0:N-1}.
struct StatePrediction {
  Matrix free;    // n(N+1) x n, blocks A^k
  Matrix forced;  // n(N+1) x pN, block (k, j) = A^{k-1-j} B_mu for j < k
};

inline StatePrediction state_prediction(const Matrix& a, const Matrix& b_mu, int horizon) {
  const auto n = a.rows();
  const auto p = b_mu.cols();
  StatePrediction pred{Matrix::Zero(n * (horizon + 1), n), Matrix::Zero(n * (horizon + 1), p * horizon)};
  Matrix power = Matrix::Identity(n, n);
  for (int k = 0; k <= horizon; ++k) {
    pred.free.block(k * n, 0, n, n) = power;
    power = a * power;
  }
  // Column block j enters at step j+1 through B_mu and is then propagated by A.
  for (int j = 0; j < horizon; ++j) {
    Matrix impulse = b_mu;
    for (int k = j + 1; k <= horizon; ++k) {
      pred.forced.block(k * n, j * p, n, p) = impulse;
      impulse = a * impulse;
    }
  }
  return pred;
}

inline TrajectoryMoments propagate_moments(const LinearGaussianSystem& sys, const Matrix& b_mu, int mode,
                                           const ControlSequence& u) {
  linalg::require(b_mu.rows() == sys.states() && b_mu.cols() == sys.inputs(), "B_mu dimensions do not match system");
  linalg::require(u.inputs() == sys.inputs(), "control input dimension does not match system");
  const int n = sys.states();
  const int m = sys.outputs();
  const int horizon = u.horizon();

  TrajectoryMoments out;
  out.mode = mode;
  out.horizon = horizon;
  out.x_mean.resize(static_cast<Eigen::Index>(n) * (horizon + 1));
  out.y_mean.resize(static_cast<Eigen::Index>(m) * (horizon + 1));
  Vector x = sys.x0_mean;
  for (int k = 0; k <= horizon; ++k) {
    out.x_mean.segment(static_cast<Eigen::Index>(k) * n, n) = x;
    out.y_mean.segment(static_cast<Eigen::Index>(k) * m, m) = sys.C * x;
    if (k < horizon) x = sys.A * x + b_mu * u.at(k);
  }
  out.x_cov = state_covariance(sys, horizon);
  out.y_cov = output_covariance(sys, out.x_cov, horizon);
  return out;
}

inline TrajectoryMoments propagate_moments(const LinearGaussianSystem& sys, const ModeSet& modes, int mode,
                                           const ControlSequence& u) {
  linalg::require(mode >= 0 && mode < modes.size(), "mode index out of range");
  return propagate_moments(sys, modes.input_matrix(mode), mode, u);
}

// ---------------------------------------------------------------------------
// Sampling

struct Rollout {
  Matrix states;   // n x (N+1), column k = x_k
  Matrix outputs;  // m x (N+1), column k = y_k
};

/// Draws trajectories of one mode. Square roots of the covariances are factored
/// once so repeated draws stay cheap.
class RolloutSampler {
 public:
  RolloutSampler(const LinearGaussianSystem& sys, Matrix b_mu)
      : sys_(sys),
        b_mu_(std::move(b_mu)),
        x0_root_(linalg::psd_sqrt(sys.x0_cov)),
        w_root_(linalg::psd_sqrt(sys.Hw)),
        v_root_(linalg::psd_sqrt(sys.Hv)) {
    linalg::require(b_mu_.rows() == sys.states() && b_mu_.cols() == sys.inputs(), "B_mu dimensions do not match system");
  }

  template <class Rng>
  Rollout sample(const ControlSequence& u, Rng& rng) const {
    Rollout r;
    sample_into(u, rng, r);
    return r;
  }

  template <class Rng>
  void sample_into(const ControlSequence& u, Rng& rng, Rollout& r) const {
    const int n = sys_.states();
    const int m = sys_.outputs();
    const int horizon = u.horizon();
    r.states.resize(n, horizon + 1);
    r.outputs.resize(m, horizon + 1);
    Vector x = sys_.x0_mean + x0_root_ * standard_normal(n, rng);
    for (int k = 0; k <= horizon; ++k) {
      r.states.col(k) = x;
      r.outputs.col(k) = sys_.C * x + v_root_ * standard_normal(m, rng);
      if (k < horizon) x = sys_.A * x + b_mu_ * u.at(k) + w_root_ * standard_normal(n, rng);
    }
  }

  template <class Rng>
  static Vector standard_normal(int dim, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(dim);
    for (int i = 0; i < dim; ++i) z(i) = normal(rng);
    return z;
  }

 private:
  LinearGaussianSystem sys_;
  Matrix b_mu_;
  Matrix x0_root_;
  Matrix w_root_;
  Matrix v_root_;
};

/// One rollout of x_{k+1} = A x_k + B_mu u_k + w_k; deterministic in the seed.
inline Rollout sample_rollout(const LinearGaussianSystem& sys, const Matrix& b_mu, const ControlSequence& u,
                              std::uint64_t seed) {
  linalg::require(u.inputs() == sys.inputs(), "control input dimension does not match system");
  std::mt19937_64 rng(seed);
  return RolloutSampler(sys, b_mu).sample(u, rng);
}

}  // namespace asentinel
