#pragma once

// Two pools of an irrigation main channel controlled by three overshot gates.
//
//   dy_g/dt = a_in(g) h_{g-1}(t - tau(g))^{3/2} - a_out(g) h_g(t)^{3/2}
//
// for pools g = 9, 10 and gates 8, 9, 10. Coefficients and transport delays
// are indexed by the pool they belong to. The linear model uses the Jacobian
// gain 1.5 a sqrt(h0) on the absolute gate head, so zero head means zero flow
// and the levels are pure integrators. Delays that are not a multiple of the
// sampling time split the hold interval between two past inputs.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "asentinel/detector.hpp"
#include "asentinel/errors.hpp"
#include "asentinel/linalg.hpp"
#include "asentinel/model.hpp"
#include "asentinel/model_io.hpp"
#include "asentinel/objectives.hpp"
#include "asentinel/optimizer.hpp"

namespace asentinel::irrigation {

struct PoolParameters {
  double alpha_in = 0.0;   // 1/m^2
  double alpha_out = 0.0;  // 1/m^2
  double tau = 0.0;        // minutes

  void validate() const {
    linalg::require(alpha_in > 0.0 && alpha_out > 0.0 && tau > 0.0, "pool parameters must be positive");
  }
};

struct ScheduleSegment {
  double start = 0.0;  // minutes
  double end = 0.0;
  int mode = 0;
};

struct AttackSchedule {
  std::vector<ScheduleSegment> segments;

  /// Segments must be sorted, contiguous and cover [0, duration].
  void validate(double duration, int mode_count) const {
    linalg::require(!segments.empty(), "attack schedule is empty");
    linalg::require(segments.front().start == 0.0, "attack schedule must start at 0");
    linalg::require(segments.back().end == duration, "attack schedule must end at the run duration");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      linalg::require(s.end > s.start, "schedule segments must have positive length");
      linalg::require(s.mode >= 0 && s.mode < mode_count, "schedule mode index out of range");
      if (i > 0) linalg::require(s.start == segments[i - 1].end, "schedule segments must be contiguous");
    }
  }

  /// Mode at a minute: segments are half-open [start, end) except the last,
  /// which includes its end.
  int mode_at(double minute) const {
    for (const auto& s : segments) {
      if (minute >= s.start && minute < s.end) return s.mode;
    }
    if (!segments.empty() && minute == segments.back().end) return segments.back().mode;
    throw InvalidArgument("minute " + std::to_string(minute) + " is outside the attack schedule");
  }
};

struct ChannelScenario {
  std::map<int, PoolParameters> pools;  // keyed 8, 9, 10
  Vector operating_heads;               // gates 8, 9, 10 (m)
  double sampling_minutes = 10.0;
  int horizon = 20;
  int history_depth = 2;
  Vector initial_levels;    // pools 9, 10 (m)
  Vector reference_levels;  // tracking setpoint (m)
  double initial_level_variance = 0.0;
  double level_cap = 15.0;
  double process_noise = 0.3;
  double measurement_noise = 0.3;
  Vector priors;
  Matrix Q;
  Matrix R;
  double jd_max = 1.0;
  double jc_max = 2000.0;
  double duration_minutes = 700.0;
  AttackSchedule schedule;

  int steps() const { return static_cast<int>(std::llround(duration_minutes / sampling_minutes)); }

  void validate() const {
    for (int g : {8, 9, 10}) {
      linalg::require(pools.count(g) == 1, "pool " + std::to_string(g) + " parameters missing");
      pools.at(g).validate();
    }
    linalg::require(operating_heads.size() == 3, "three operating heads required");
    linalg::require(initial_levels.size() == 2 && reference_levels.size() == 2, "two pool levels required");
    linalg::require(sampling_minutes > 0.0 && horizon >= 1 && history_depth >= 0, "invalid sampling settings");
    linalg::require(process_noise >= 0.0 && measurement_noise > 0.0 && initial_level_variance >= 0.0,
                    "noise variances must be non-negative (measurement noise positive)");
    linalg::require(Q.rows() == 2 && Q.cols() == 2 && R.rows() == 3 && R.cols() == 3, "Q must be 2x2 and R 3x3");
    linalg::require(priors.size() == 8, "eight mode priors required");
    validate_priors(priors);
    schedule.validate(duration_minutes, 8);
  }
};

/// The published channel values with the documented modelling choices.
inline ChannelScenario haughton_defaults() {
  ChannelScenario s;
  s.pools[8] = PoolParameters{0.0208, 0.0278, 6.0};
  s.pools[9] = PoolParameters{0.0700, 0.0614, 3.0};
  s.pools[10] = PoolParameters{0.0142, 0.0156, 16.0};
  s.operating_heads = Vector::Ones(3);
  s.initial_levels = Vector{{6.60, 5.60}};
  s.reference_levels = s.initial_levels;
  s.priors = Vector::Constant(8, 0.125);
  s.Q = Matrix::Identity(2, 2);
  s.R = Matrix::Identity(3, 3);
  // Mode k of the published schedule is index k-1 here.
  s.schedule.segments = {{0, 80, 0},    {80, 200, 7},  {200, 300, 0}, {300, 360, 1},
                         {360, 480, 0}, {480, 580, 6}, {580, 700, 0}};
  return s;
}

inline Json scenario_to_json(const ChannelScenario& s) {
  Json pools = Json::object();
  for (const auto& [g, p] : s.pools) {
    pools[std::to_string(g)] = Json{{"alpha_in", p.alpha_in}, {"alpha_out", p.alpha_out}, {"tau_min", p.tau}};
  }
  Json schedule = Json::array();
  for (const auto& seg : s.schedule.segments) {
    schedule.push_back(Json{{"start_min", seg.start}, {"end_min", seg.end}, {"mode", seg.mode},
                            {"mask", mask_to_string(mask_from_index(seg.mode, 3))}});
  }
  return Json{{"pools", pools},
              {"operating_heads_m", io::vector_to_json(s.operating_heads)},
              {"sampling_minutes", s.sampling_minutes},
              {"horizon_steps", s.horizon},
              {"history_depth", s.history_depth},
              {"initial_levels_m", io::vector_to_json(s.initial_levels)},
              {"reference_levels_m", io::vector_to_json(s.reference_levels)},
              {"initial_level_variance", s.initial_level_variance},
              {"level_cap_m", s.level_cap},
              {"process_noise_variance", s.process_noise},
              {"measurement_noise_variance", s.measurement_noise},
              {"priors", io::vector_to_json(s.priors)},
              {"Q", io::matrix_to_json(s.Q)},
              {"R", io::matrix_to_json(s.R)},
              {"jd_max", s.jd_max},
              {"jc_max", s.jc_max},
              {"duration_min", s.duration_minutes},
              {"schedule", schedule}};
}

/// Missing keys fall back to haughton_defaults(); unknown keys (e.g. "source"
/// notes) are ignored.
inline ChannelScenario scenario_from_json(const Json& j) {
  ChannelScenario s = haughton_defaults();
  if (j.contains("pools")) {
    for (const auto& [key, p] : j.at("pools").items()) {
      s.pools[std::stoi(key)] = PoolParameters{io::field(p, "alpha_in").get<double>(),
                                               io::field(p, "alpha_out").get<double>(),
                                               io::field(p, "tau_min").get<double>()};
    }
  }
  auto num = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  auto vec = [&](const char* key, Vector& dst) {
    if (j.contains(key)) dst = io::vector_from_json(j.at(key), key);
  };
  auto mat = [&](const char* key, Matrix& dst) {
    if (j.contains(key)) dst = io::matrix_from_json(j.at(key), key);
  };
  vec("operating_heads_m", s.operating_heads);
  num("sampling_minutes", s.sampling_minutes);
  if (j.contains("horizon_steps")) s.horizon = j.at("horizon_steps").get<int>();
  if (j.contains("history_depth")) s.history_depth = j.at("history_depth").get<int>();
  vec("initial_levels_m", s.initial_levels);
  vec("reference_levels_m", s.reference_levels);
  num("initial_level_variance", s.initial_level_variance);
  num("level_cap_m", s.level_cap);
  num("process_noise_variance", s.process_noise);
  num("measurement_noise_variance", s.measurement_noise);
  vec("priors", s.priors);
  mat("Q", s.Q);
  mat("R", s.R);
  num("jd_max", s.jd_max);
  num("jc_max", s.jc_max);
  num("duration_min", s.duration_minutes);
  if (j.contains("schedule")) {
    s.schedule.segments.clear();
    for (const auto& seg : j.at("schedule")) {
      int mode = 0;
      if (seg.contains("mode")) {
        mode = seg.at("mode").get<int>();
      } else {
        const Mask m = mask_from_string(io::field(seg, "mask").get<std::string>());
        for (std::size_t b = 0; b < m.size(); ++b) mode |= m[b] ? (1 << b) : 0;
      }
      s.schedule.segments.push_back(
          ScheduleSegment{io::field(seg, "start_min").get<double>(), io::field(seg, "end_min").get<double>(), mode});
    }
  }
  s.validate();
  return s;
}

inline ChannelScenario load_scenario(const std::string& path) {
  try {
    return scenario_from_json(io::read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("scenario \"") + path + "\": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Linearization and discretization

/// One input acting on one state with a transport delay (minutes).
struct DelayedChannel {
  int input = 0;
  int state = 0;
  double gain = 0.0;
  double delay = 0.0;
};

struct ContinuousModel {
  Matrix A;  // state matrix of the undelayed part
  int inputs = 0;
  std::vector<DelayedChannel> channels;
  Matrix C;
};

/// Right-hand side of the nonlinear level equations for pools 9 and 10.
/// `inflow_heads` are the already delayed heads of gates 8 and 9,
/// `outflow_heads` the current heads of gates 9 and 10.
inline Vector channel_rates(const std::map<int, PoolParameters>& pools, const Vector& inflow_heads,
                            const Vector& outflow_heads) {
  auto flow = [](double alpha, double h) { return alpha * std::pow(std::max(h, 0.0), 1.5); };
  return Vector{{flow(pools.at(9).alpha_in, inflow_heads(0)) - flow(pools.at(9).alpha_out, outflow_heads(0)),
                 flow(pools.at(10).alpha_in, inflow_heads(1)) - flow(pools.at(10).alpha_out, outflow_heads(1))}};
}

/// Jacobian of channel_rates at the operating heads of gates 8, 9, 10.
inline ContinuousModel linearize_channel(const std::map<int, PoolParameters>& pools, const Vector& heads) {
  linalg::require(heads.size() == 3, "three operating heads required (gates 8, 9, 10)");
  linalg::require(heads.minCoeff() > 0.0, "operating heads must be positive");
  for (int g : {9, 10}) {
    linalg::require(pools.count(g) == 1, "pool " + std::to_string(g) + " parameters missing");
    pools.at(g).validate();
  }
  auto slope = [](double alpha, double h0) { return 1.5 * alpha * std::sqrt(h0); };
  ContinuousModel m;
  m.A = Matrix::Zero(2, 2);
  m.inputs = 3;
  m.C = Matrix::Identity(2, 2);
  m.channels = {
      {0, 0, slope(pools.at(9).alpha_in, heads(0)), pools.at(9).tau},
      {1, 0, -slope(pools.at(9).alpha_out, heads(1)), 0.0},
      {1, 1, slope(pools.at(10).alpha_in, heads(1)), pools.at(10).tau},
      {2, 1, -slope(pools.at(10).alpha_out, heads(2)), 0.0},
  };
  return m;
}

namespace detail {

/// (e^{A t}, ∫_0^t e^{A s} ds) from one exponential of the augmented matrix.
inline std::pair<Matrix, Matrix> exp_and_integral(const Matrix& a, double t) {
  const Eigen::Index n = a.rows();
  Matrix aug = Matrix::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = a * t;
  aug.topRightCorner(n, n) = Matrix::Identity(n, n) * t;
  const Matrix e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, n)};
}

}  // namespace detail

/// History depth a channel needs: inputs u_{k-d} .. u_{k-d-1} with
/// delay = d Ts + fractional part.
inline int required_history(const ContinuousModel& model, double ts) {
  int depth = 0;
  for (const auto& c : model.channels) {
    linalg::require(c.delay >= 0.0, "delays must be non-negative");
    const double samples = c.delay / ts;
    const int whole = static_cast<int>(std::floor(samples + 1e-12));
    const double frac = samples - whole;
    depth = std::max(depth, frac > 1e-12 ? whole + 1 : whole);
  }
  return depth;
}

/// Zero-order-hold discretization. The state is
///   [plant states, u_{k-1} (all inputs), u_{k-2}, ..., u_{k-D}]
/// with D = max(min_history_depth, required depth). Noise fields are zero.
inline LinearGaussianSystem discretize_with_delays(const ContinuousModel& model, double ts, int min_history_depth = 0) {
  linalg::require(ts > 0.0, "sampling time must be positive");
  linalg::require(model.A.rows() == model.A.cols() && model.C.cols() == model.A.rows(), "inconsistent model");
  const int np = static_cast<int>(model.A.rows());
  const int p = model.inputs;
  const int depth = std::max(min_history_depth, required_history(model, ts));
  const int n = np + depth * p;

  LinearGaussianSystem sys;
  sys.A = Matrix::Zero(n, n);
  sys.B = Matrix::Zero(n, p);
  sys.A.topLeftCorner(np, np) = detail::exp_and_integral(model.A, ts).first;

  // Column of u_{k-lag} in [A | B]: lag 0 is B, lag j >= 1 is history block j.
  auto add = [&](int lag, int input, const Vector& col) {
    if (lag == 0) {
      sys.B.block(0, input, np, 1) += col;
    } else {
      sys.A.block(0, np + (lag - 1) * p + input, np, 1) += col;
    }
  };
  for (const auto& c : model.channels) {
    linalg::require(c.input >= 0 && c.input < p && c.state >= 0 && c.state < np, "channel index out of range");
    Vector b = Vector::Zero(np);
    b(c.state) = c.gain;
    const double samples = c.delay / ts;
    const int whole = static_cast<int>(std::floor(samples + 1e-12));
    double frac = (samples - whole) * ts;
    if (frac < 1e-12 * ts) frac = 0.0;
    // Over [kT, kT + frac) the channel still sees u_{k-whole-1}.
    const auto [carry, late] = detail::exp_and_integral(model.A, ts - frac);
    add(whole, c.input, late * b);
    if (frac > 0.0) add(whole + 1, c.input, carry * detail::exp_and_integral(model.A, frac).second * b);
  }
  // Shift register: history block 1 takes u_k, block j takes block j-1.
  if (depth > 0) {
    sys.B.block(np, 0, p, p) = Matrix::Identity(p, p);
    for (int j = 1; j < depth; ++j) {
      sys.A.block(np + j * p, np + (j - 1) * p, p, p) = Matrix::Identity(p, p);
    }
  }
  sys.C = Matrix::Zero(model.C.rows(), n);
  sys.C.leftCols(np) = model.C;
  sys.Hw = Matrix::Zero(n, n);
  sys.Hv = Matrix::Zero(model.C.rows(), model.C.rows());
  sys.x0_mean = Vector::Zero(n);
  sys.x0_cov = Matrix::Zero(n, n);
  return sys;
}

/// Sampled 8-state system with the scenario's noise and initial levels.
inline LinearGaussianSystem build_system(const ChannelScenario& s) {
  LinearGaussianSystem sys =
      discretize_with_delays(linearize_channel(s.pools, s.operating_heads), s.sampling_minutes, s.history_depth);
  const int n = sys.states();
  sys.Hw = s.process_noise * Matrix::Identity(n, n);
  sys.Hv = s.measurement_noise * Matrix::Identity(2, 2);
  sys.x0_mean.head(2) = s.initial_levels;
  sys.x0_cov.topLeftCorner(2, 2) = s.initial_level_variance * Matrix::Identity(2, 2);
  sys.validate();
  return sys;
}

inline ModeSet build_modes(const ChannelScenario& s, const LinearGaussianSystem& sys) {
  return enumerate_modes(sys.B, s.priors);
}

/// Optimization problem for one window starting from the belief stored in
/// `sys_belief.x0_mean / x0_cov`.
inline ProblemSpec window_problem(const LinearGaussianSystem& sys_belief, const ModeSet& modes,
                                  const ChannelScenario& s, ProblemKind kind) {
  const int n = sys_belief.states();
  const int p = sys_belief.inputs();
  const int horizon = s.horizon;
  Vector reference(2 * (horizon + 1));
  for (int k = 0; k <= horizon; ++k) reference.segment(2 * k, 2) = s.reference_levels;

  // Level cap on both pools, non-negative heads.
  Matrix gx = Matrix::Zero(2 + p, n);
  gx.topLeftCorner(2, 2) = Matrix::Identity(2, 2);
  Matrix gu = Matrix::Zero(2 + p, p);
  gu.bottomRows(p) = -Matrix::Identity(p, p);
  Vector g = Vector::Zero(2 + p);
  g.head(2).setConstant(s.level_cap);

  ProblemSpec spec;
  spec.kind = kind;
  spec.control = build_control_objective(sys_belief, modes, reference, ControlWeights{s.Q, s.R}, horizon);
  spec.detection = build_detection_bound(sys_belief, modes, horizon);
  spec.constraints = expand_constraints(sys_belief, modes, gx, gu, g, horizon);
  spec.jd_max = s.jd_max;
  spec.jc_max = s.jc_max;
  return spec;
}

// ---------------------------------------------------------------------------
// Closed loop

enum class WindowFallback { Zero, LeastViolation };

/// Fewer starts and a tighter inner budget than a one-off solve; a run
/// solves one problem per window.
inline SolverOptions closed_loop_solver_defaults() {
  SolverOptions o;
  o.restarts = 8;
  o.max_total_inner_iterations = 300;
  return o;
}

struct ClosedLoopOptions {
  SolverOptions solver = closed_loop_solver_defaults();
  WindowFallback fallback = WindowFallback::LeastViolation;
  /// Multiplies every noise variance of the scenario (truth and model).
  double noise_scale = 1.0;
  /// Called with (window index, problem) before each window is solved.
  std::function<void(int, const ProblemSpec&)> on_window;
};

struct StepRecord {
  int k = 0;
  double minute = 0.0;
  int true_mode = 0;
  Vector levels;           // true levels of pools 9, 10
  Vector measured;         // y_k
  Vector expected_levels;  // planned mean, worst case over the mode hypotheses
  Vector applied;          // gate heads actually applied
  int decision_detector = -1;
  int decision_mode = -1;
};

struct WindowRecord {
  int index = 0;
  int start_k = 0;
  int steps = 0;
  SolveStatus status = SolveStatus::Infeasible;
  bool failed = false;
  /// No input meets the linear constraints (Farkas certificate), e.g. the
  /// window starts with an expected level above the cap.
  bool linear_infeasible = false;
  double control_cost = 0.0;
  double detection_bound = 0.0;
  double constraint_violation = 0.0;
  double side_slack = 0.0;
  int restarts_used = 0;
  double solve_seconds = 0.0;  // wall time, not written to CSV
};

struct SegmentLatency {
  ScheduleSegment segment;
  std::optional<double> latency_minutes;
};

struct ExperimentLog {
  ProblemKind kind = ProblemKind::PureControl;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<WindowRecord> windows;
  std::vector<Decision> decisions;
  std::vector<SegmentLatency> latencies;

  double control_cost_total() const {
    double s = 0.0;
    for (const auto& w : windows) s += w.control_cost;
    return s;
  }
  double detection_bound_total() const {
    double s = 0.0;
    for (const auto& w : windows) s += w.detection_bound;
    return s;
  }
  int failed_windows() const {
    int f = 0;
    for (const auto& w : windows) f += w.failed ? 1 : 0;
    return f;
  }
};

inline ChannelScenario scale_noise(ChannelScenario s, double factor) {
  s.process_noise *= factor;
  s.measurement_noise *= factor;
  s.initial_level_variance *= factor;
  return s;
}

inline std::vector<SegmentLatency> detection_latencies(const AttackSchedule& schedule,
                                                       const std::vector<Decision>& decisions, double ts) {
  std::vector<SegmentLatency> out;
  for (const auto& seg : schedule.segments) {
    SegmentLatency l{seg, std::nullopt};
    for (const auto& d : decisions) {
      const double t = d.k * ts;
      if (t >= seg.start && d.mode == seg.mode) {
        l.latency_minutes = t - seg.start;
        break;
      }
    }
    out.push_back(l);
  }
  return out;
}

inline ExperimentLog run_closed_loop(const ChannelScenario& scenario_in, ProblemKind kind, std::uint64_t seed,
                                     const ClosedLoopOptions& options = {}) {
  const ChannelScenario s = scale_noise(scenario_in, options.noise_scale);
  s.validate();
  const LinearGaussianSystem sys = build_system(s);
  const ModeSet modes = build_modes(s, sys);
  const int n = sys.states();
  const int p = sys.inputs();
  const int horizon = s.horizon;
  const int total = s.steps();

  std::mt19937_64 rng(seed);
  const Matrix w_root = linalg::psd_sqrt(sys.Hw);
  const Matrix v_root = linalg::psd_sqrt(sys.Hv);
  const Matrix x0_root = linalg::psd_sqrt(sys.x0_cov);
  auto normal = [&](int dim) { return RolloutSampler::standard_normal(dim, rng); };

  ExperimentLog log;
  log.kind = kind;
  log.seed = seed;
  DetectorBank bank(sys, modes, horizon);
  Vector x = sys.x0_mean + x0_root * normal(n);
  Vector u_prev = Vector::Zero(p);
  Vector plan;
  // Planned expected state per mode hypothesis, from the current window start.
  std::vector<Vector> expected(static_cast<std::size_t>(modes.size()));

  for (int k = 0; k < total; ++k) {
    const int mode = s.schedule.mode_at(k * s.sampling_minutes);
    const Vector y = sys.C * x + v_root * normal(2);
    StepRecord rec;
    rec.k = k;
    rec.minute = k * s.sampling_minutes;
    rec.true_mode = mode;
    rec.levels = x.head(2);
    rec.measured = y;
    if (auto d = bank.step(u_prev, y)) {
      rec.decision_detector = d->detector;
      rec.decision_mode = d->mode;
      log.decisions.push_back(*d);
    }

    if (k % horizon == 0) {
      // First window: the scenario prior. Later windows: detector 0 has just
      // restarted and taken y_k, so its mixture is the filtered belief at k.
      LinearGaussianSystem belief_sys = sys;
      if (k > 0) {
        const KalmanFilterState b = bank.detector(0).belief();
        belief_sys.x0_mean = b.x_hat;
        belief_sys.x0_cov = b.P;
      }
      const ProblemSpec spec = window_problem(belief_sys, modes, s, kind);
      if (options.on_window) options.on_window(k / horizon, spec);
      SolverOptions solver = options.solver;
      solver.seed = options.solver.seed ^ (seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(k));
      const auto started = std::chrono::steady_clock::now();
      const Solution sol = solve(spec, solver);
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      WindowRecord w;
      w.index = k / horizon;
      w.start_k = k;
      w.steps = std::min(horizon, total - k);
      w.status = sol.status;
      w.failed = !sol.accepted();
      w.linear_infeasible = sol.farkas.has_value();
      // A window whose side cap is out of reach keeps the least-violating
      // plan when the linear constraints hold; otherwise zero heads.
      const bool usable = !w.failed || (options.fallback == WindowFallback::LeastViolation && !sol.farkas &&
                                        spec.constraints.violation(sol.u_star) <= options.solver.constraint_tol);
      plan = usable ? sol.u_star : Vector::Zero(static_cast<Eigen::Index>(p) * horizon);
      w.control_cost = spec.control.value(plan);
      w.detection_bound = spec.detection.value(plan);
      w.constraint_violation = spec.constraints.violation(plan);
      w.side_slack = sol.side_constraint_slack;
      w.restarts_used = sol.restarts_used;
      w.solve_seconds = elapsed;
      log.windows.push_back(w);
      for (auto& e : expected) e = belief_sys.x0_mean;
    }

    rec.expected_levels = Vector::Constant(2, -std::numeric_limits<double>::infinity());
    for (const auto& e : expected) rec.expected_levels = rec.expected_levels.cwiseMax(sys.C * e);
    const Vector u = plan.segment(static_cast<Eigen::Index>(k % horizon) * p, p).cwiseMax(0.0);
    rec.applied = u;
    log.steps.push_back(rec);

    x = sys.A * x + modes.input_matrix(mode) * u + w_root * normal(n);
    for (int i = 0; i < modes.size(); ++i) {
      auto& e = expected[static_cast<std::size_t>(i)];
      e = sys.A * e + modes.input_matrix(i) * u;
    }
    u_prev = u;
  }
  log.latencies = detection_latencies(s.schedule, log.decisions, s.sampling_minutes);
  return log;
}


// ---------------------------------------------------------------------------
// Normalized comparison

struct NormalizedSummary {
  ProblemKind kind = ProblemKind::PureControl;
  int runs = 0;
  double mean_control_cost = 0.0;    // mean over seeds of J_c / J_c(pure, same seed)
  double mean_detection_bound = 0.0; // same for Ĵ_d
  int failed_windows = 0;
};

/// `runs[s]` and `pure[s]` must share a seed.
inline NormalizedSummary normalize_against(const std::vector<ExperimentLog>& runs,
                                           const std::vector<ExperimentLog>& pure) {
  linalg::require(runs.size() == pure.size() && !runs.empty(), "one pure-control run per seed required");
  NormalizedSummary out;
  out.kind = runs.front().kind;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    linalg::require(runs[i].seed == pure[i].seed, "runs and pure-control runs must use the same seeds");
    const double jc = pure[i].control_cost_total();
    const double jd = pure[i].detection_bound_total();
    linalg::require(jc > 0.0 && jd > 0.0, "pure-control costs must be positive to normalize");
    out.mean_control_cost += runs[i].control_cost_total() / jc;
    out.mean_detection_bound += runs[i].detection_bound_total() / jd;
    out.failed_windows += runs[i].failed_windows();
  }
  out.runs = static_cast<int>(runs.size());
  out.mean_control_cost /= out.runs;
  out.mean_detection_bound /= out.runs;
  return out;
}

}  // namespace asentinel::irrigation
