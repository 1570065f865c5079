#pragma once

// Multiple-model adaptive estimation: one Kalman filter per mode, Bayesian
// posterior over modes from the filter innovations, and a bank of N staggered
// detectors that each decide once per N-step window.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <vector>

#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"
#include "asentinel/model.hpp"

namespace asentinel {

struct KalmanFilterState {
  int mode = 0;
  Vector x_hat;
  Matrix P;
};

struct KalmanStepResult {
  KalmanFilterState state;
  Vector innovation;
  Matrix innovation_cov;
};

/// Measurement update only (used for the first sample of a trajectory).
inline KalmanStepResult kf_update(const KalmanFilterState& prior, const LinearGaussianSystem& sys, const Vector& y) {
  linalg::require(prior.x_hat.size() == sys.states() && prior.P.rows() == sys.states(),
                  "filter state does not match system dimensions");
  linalg::require(y.size() == sys.outputs(), "measurement dimension does not match system");
  KalmanStepResult out;
  out.innovation = y - sys.C * prior.x_hat;
  const Matrix pct = prior.P * sys.C.transpose();
  out.innovation_cov = linalg::symmetrize(sys.C * pct + sys.Hv);
  Eigen::LLT<Matrix> llt(out.innovation_cov);
  if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance is singular", prior.mode);
  const Matrix gain = llt.solve(pct.transpose()).transpose();
  out.state.mode = prior.mode;
  out.state.x_hat = prior.x_hat + gain * out.innovation;
  // Joseph form keeps P symmetric PSD under rounding.
  const Matrix ikc = Matrix::Identity(sys.states(), sys.states()) - gain * sys.C;
  out.state.P = linalg::symmetrize(ikc * prior.P * ikc.transpose() + gain * sys.Hv * gain.transpose());
  return out;
}

/// Predict with (A, B_mu, u), then update with y.
inline KalmanStepResult kf_step(const KalmanFilterState& filter, const LinearGaussianSystem& sys, const Matrix& b_mu,
                                const Vector& u, const Vector& y) {
  linalg::require(u.size() == sys.inputs(), "input dimension does not match system");
  KalmanFilterState predicted;
  predicted.mode = filter.mode;
  predicted.x_hat = sys.A * filter.x_hat + b_mu * u;
  predicted.P = linalg::symmetrize(sys.A * filter.P * sys.A.transpose() + sys.Hw);
  return kf_update(predicted, sys, y);
}

/// log N(innovation; 0, cov).
inline double gaussian_log_density(const Vector& innovation, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Vector z = llt.matrixL().solve(innovation);
  double logdet = 0.0;
  const Matrix& l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(innovation.size()) * std::log(2.0 * std::numbers::pi));
}

struct ModePosterior {
  Vector probs;
  /// Set when the last update had no finite likelihood and was skipped.
  bool flat_fallback = false;
};

inline constexpr double kPosteriorFloor = 1e-12;

/// Bayes update from per-mode log-likelihoods. Max-subtracted in log space;
/// modes with non-zero probability are floored at kPosteriorFloor, modes with
/// exactly zero probability stay excluded.
inline ModePosterior posterior_update_log(const ModePosterior& post, const Vector& log_likelihoods) {
  linalg::require(post.probs.size() == log_likelihoods.size(), "one likelihood per mode required");
  const Eigen::Index count = post.probs.size();
  Vector log_post = Vector::Constant(count, -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < count; ++i) {
    if (post.probs(i) <= 0.0 || !std::isfinite(log_likelihoods(i))) continue;
    log_post(i) = std::log(post.probs(i)) + log_likelihoods(i);
    top = std::max(top, log_post(i));
  }
  if (!std::isfinite(top)) {
    ModePosterior unchanged = post;
    unchanged.flat_fallback = true;
    return unchanged;
  }
  ModePosterior out;
  out.probs = Vector::Zero(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (std::isfinite(log_post(i))) out.probs(i) = std::exp(log_post(i) - top);
  }
  out.probs /= out.probs.sum();
  bool floored = false;
  for (Eigen::Index i = 0; i < count; ++i) {
    if (post.probs(i) > 0.0 && out.probs(i) < kPosteriorFloor) {
      out.probs(i) = kPosteriorFloor;
      floored = true;
    }
  }
  if (floored) out.probs /= out.probs.sum();
  return out;
}

inline ModePosterior posterior_update(const ModePosterior& post, const std::vector<Vector>& innovations,
                                      const std::vector<Matrix>& innovation_covs) {
  linalg::require(innovations.size() == innovation_covs.size() &&
                      static_cast<Eigen::Index>(innovations.size()) == post.probs.size(),
                  "one innovation per mode required");
  Vector ll(post.probs.size());
  for (std::size_t i = 0; i < innovations.size(); ++i) {
    ll(static_cast<Eigen::Index>(i)) = gaussian_log_density(innovations[i], innovation_covs[i]);
  }
  return posterior_update_log(post, ll);
}

/// argmax, lowest index on ties.
inline int decide(const ModePosterior& post) {
  int best = 0;
  for (Eigen::Index i = 1; i < post.probs.size(); ++i) {
    if (post.probs(i) > post.probs(best)) best = static_cast<int>(i);
  }
  return best;
}

/// Moment-matched Gaussian of a weighted mixture of filter states.
inline KalmanFilterState mixture_moments(const std::vector<KalmanFilterState>& filters, const Vector& weights) {
  KalmanFilterState out;
  out.mode = -1;
  out.x_hat = Vector::Zero(filters.front().x_hat.size());
  for (std::size_t i = 0; i < filters.size(); ++i) out.x_hat += weights(static_cast<Eigen::Index>(i)) * filters[i].x_hat;
  out.P = Matrix::Zero(out.x_hat.size(), out.x_hat.size());
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const Vector d = filters[i].x_hat - out.x_hat;
    out.P += weights(static_cast<Eigen::Index>(i)) * (filters[i].P + d * d.transpose());
  }
  out.P = linalg::symmetrize(out.P);
  return out;
}

/// One MMAE instance: a filter per mode plus the mode posterior.
class Mmae {
 public:
  Mmae(const LinearGaussianSystem& sys, const ModeSet& modes) : sys_(&sys), modes_(&modes) {
    reset(sys.x0_mean, sys.x0_cov);
  }

  /// Re-seeds every filter with (mean, cov) and the posterior with the priors.
  /// With `predict_next` the belief refers to the previous sample, so the next
  /// observation starts with a prediction step.
  void reset(const Vector& mean, const Matrix& cov, bool predict_next = false) {
    filters_.clear();
    for (int i = 0; i < modes_->size(); ++i) filters_.push_back(KalmanFilterState{i, mean, cov});
    posterior_ = ModePosterior{modes_->priors, false};
    primed_ = predict_next;
    innovations_.assign(filters_.size(), Vector());
  }

  /// Feeds y_k. The first call after reset is a pure measurement update; later
  /// calls first predict with u_prev = u_{k-1}.
  void observe(const Vector& u_prev, const Vector& y) {
    std::vector<Matrix> covs(filters_.size());
    for (std::size_t i = 0; i < filters_.size(); ++i) {
      KalmanStepResult r = primed_ ? kf_step(filters_[i], *sys_, modes_->input_matrix(static_cast<int>(i)), u_prev, y)
                                   : kf_update(filters_[i], *sys_, y);
      filters_[i] = std::move(r.state);
      innovations_[i] = std::move(r.innovation);
      covs[i] = std::move(r.innovation_cov);
    }
    posterior_ = posterior_update(posterior_, innovations_, covs);
    primed_ = true;
  }

  /// Posterior-weighted moment match of the filter states.
  KalmanFilterState belief() const { return mixture_moments(filters_, posterior_.probs); }

  /// Belief one step ahead after applying u, mixing each mode's prediction.
  KalmanFilterState predicted_belief(const Vector& u) const {
    std::vector<KalmanFilterState> predicted;
    for (const auto& f : filters_) {
      predicted.push_back(KalmanFilterState{f.mode, sys_->A * f.x_hat + modes_->input_matrix(f.mode) * u,
                                            sys_->A * f.P * sys_->A.transpose() + sys_->Hw});
    }
    return mixture_moments(predicted, posterior_.probs);
  }

  const ModePosterior& posterior() const { return posterior_; }
  const std::vector<KalmanFilterState>& filters() const { return filters_; }
  const std::vector<Vector>& innovations() const { return innovations_; }
  bool primed() const { return primed_; }

 private:
  const LinearGaussianSystem* sys_;
  const ModeSet* modes_;
  std::vector<KalmanFilterState> filters_;
  std::vector<Vector> innovations_;
  ModePosterior posterior_;
  bool primed_ = false;
};

struct Decision {
  int k = 0;
  int detector = 0;
  int mode = 0;
  Vector posterior;
};

/// N staggered detectors. Detector d has window boundaries at every k with
/// (k + 1) mod N == d mod N; it decides at a boundary once it has seen a full
/// N-sample window, so exactly one decision is emitted per step from k = N-1
/// on. Detectors d > 0 first run a partial window [0, d-1] without deciding.
/// At a boundary a detector restarts: posterior back to the priors, every
/// filter re-seeded with the moment-matched mixture of its filter states.
class DetectorBank {
 public:
  DetectorBank(const LinearGaussianSystem& sys, const ModeSet& modes, int horizon)
      : sys_(sys), modes_(modes), horizon_(horizon) {
    linalg::require(horizon >= 1, "detection horizon must be >= 1");
    sys_.validate();
    for (int d = 0; d < horizon_; ++d) detectors_.emplace_back(sys_, modes_);
  }

  DetectorBank(const DetectorBank&) = delete;
  DetectorBank& operator=(const DetectorBank&) = delete;

  /// Consumes y_k (u_prev = u_{k-1}, ignored at k = 0). Returns the decision
  /// of the detector whose window closes at k, if any.
  std::optional<Decision> step(const Vector& u_prev, const Vector& y) {
    const int k = k_;
    std::optional<Decision> decision;
    for (int d = 0; d < horizon_; ++d) {
      Mmae& det = detectors_[static_cast<std::size_t>(d)];
      det.observe(u_prev, y);
      if ((k + 1) % horizon_ == d % horizon_) {
        if (k >= d + horizon_ - 1) {
          decision = Decision{k, d, decide(det.posterior()), det.posterior().probs};
        }
        last_window_end_.insert_or_assign(d, det);
        const KalmanFilterState mix = det.belief();
        det.reset(mix.x_hat, mix.P, true);
      }
    }
    ++k_;
    return decision;
  }

  int horizon() const { return horizon_; }
  int steps() const { return k_; }
  const Mmae& detector(int d) const { return detectors_.at(static_cast<std::size_t>(d)); }

  /// Mixture belief a detector held at its last window boundary, before restart.
  std::optional<KalmanFilterState> window_end_belief(int d) const {
    const Mmae* snap = window_end_state(d);
    if (!snap) return std::nullopt;
    return snap->belief();
  }

  /// Filters and posterior of detector d at its last window boundary.
  const Mmae* window_end_state(int d) const {
    auto it = last_window_end_.find(d);
    return it == last_window_end_.end() ? nullptr : &it->second;
  }

 private:
  LinearGaussianSystem sys_;
  ModeSet modes_;
  int horizon_;
  int k_ = 0;
  std::vector<Mmae> detectors_;
  std::map<int, Mmae> last_window_end_;
};

}  // namespace asentinel
