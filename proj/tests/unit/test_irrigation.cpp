#include <gtest/gtest.h>

#include <random>

#include "asentinel/irrigation.hpp"

using namespace asentinel;
using namespace asentinel::irrigation;

namespace {

// Levels of a delayed integrator model driven by held inputs, integrated on a
// fine grid.
Vector integrate_fine(const ContinuousModel& m, const std::vector<Vector>& inputs, double ts, int steps, double dt) {
  Vector y = Vector::Zero(m.A.rows());
  const int sub = static_cast<int>(std::llround(ts / dt));
  for (int i = 0; i < steps * sub; ++i) {
    const double t = (i + 0.5) * dt;
    Vector rate = m.A * y;
    for (const auto& c : m.channels) {
      const double td = t - c.delay;
      if (td < 0.0) continue;
      const auto j = static_cast<std::size_t>(std::floor(td / ts));
      rate(c.state) += c.gain * inputs.at(j)(c.input);
    }
    y += dt * rate;
  }
  return y;
}

ChannelScenario single_mode_scenario(double minutes) {
  ChannelScenario s = haughton_defaults();
  s.duration_minutes = minutes;
  s.schedule.segments = {{0, minutes, 0}};
  return s;
}

}  // namespace

TEST(Linearization, JacobianGains) {
  const ChannelScenario s = haughton_defaults();
  const ContinuousModel m = linearize_channel(s.pools, s.operating_heads);
  ASSERT_EQ(m.channels.size(), 4u);
  EXPECT_NEAR(m.channels[1].gain, -0.0921, 1e-12);
  EXPECT_NEAR(m.channels[0].gain, 1.5 * 0.07, 1e-12);
  EXPECT_DOUBLE_EQ(m.channels[2].delay, 16.0);

  auto pools = s.pools;
  pools[9].alpha_out *= 2.0;
  EXPECT_NEAR(linearize_channel(pools, s.operating_heads).channels[1].gain, -2.0 * 0.0921, 1e-12);
}

TEST(Linearization, MatchesFiniteDifferences) {
  const ChannelScenario s = haughton_defaults();
  const Vector h0{{1.3, 0.8, 1.1}};
  const ContinuousModel m = linearize_channel(s.pools, h0);
  const double eps = 1e-6;
  Matrix fd = Matrix::Zero(2, 3);
  for (int g = 0; g < 3; ++g) {
    Vector hp = h0, hm = h0;
    hp(g) += eps;
    hm(g) -= eps;
    // Inflows see gates 8, 9 and outflows gates 9, 10.
    const Vector rp = channel_rates(s.pools, hp.head(2), hp.tail(2));
    const Vector rm = channel_rates(s.pools, hm.head(2), hm.tail(2));
    fd.col(g) = (rp - rm) / (2 * eps);
  }
  Matrix analytic = Matrix::Zero(2, 3);
  for (const auto& c : m.channels) analytic(c.state, c.input) += c.gain;
  EXPECT_LT((fd - analytic).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Discretization, ZeroDelayIsMatrixExponential) {
  ContinuousModel m;
  m.A = Matrix{{-0.1, 0.02}, {0.0, -0.05}};
  m.inputs = 1;
  m.channels = {{0, 0, 0.3, 0.0}, {0, 1, -0.2, 0.0}};
  m.C = Matrix::Identity(2, 2);
  const LinearGaussianSystem d = discretize_with_delays(m, 10.0);
  ASSERT_EQ(d.states(), 2);
  const Matrix e = (m.A * 10.0).exp();
  EXPECT_LT((d.A - e).cwiseAbs().maxCoeff(), 1e-12);
  // B = A^{-1}(e^{AT} - I) b.
  const Vector b{{0.3, -0.2}};
  const Vector expected = m.A.inverse() * (e - Matrix::Identity(2, 2)) * b;
  EXPECT_LT((d.B.col(0) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Discretization, FractionalDelaySplitsHold) {
  ContinuousModel m;
  m.A = Matrix::Zero(1, 1);
  m.inputs = 1;
  m.channels = {{0, 0, 0.5, 16.0}};
  m.C = Matrix::Identity(1, 1);
  const LinearGaussianSystem d = discretize_with_delays(m, 10.0);
  ASSERT_EQ(d.states(), 3);
  EXPECT_DOUBLE_EQ(d.B(0, 0), 0.0);
  EXPECT_NEAR(d.A(0, 1), 0.5 * 4.0, 1e-12);  // u_{k-1} for the last 4 minutes
  EXPECT_NEAR(d.A(0, 2), 0.5 * 6.0, 1e-12);  // u_{k-2} for the first 6
  EXPECT_EQ(d.B(1, 0), 1.0);
  EXPECT_EQ(d.A(2, 1), 1.0);
}

TEST(Discretization, HaughtonResponseMatchesFineIntegration) {
  const ChannelScenario s = haughton_defaults();
  const ContinuousModel m = linearize_channel(s.pools, s.operating_heads);
  LinearGaussianSystem d = discretize_with_delays(m, s.sampling_minutes, s.history_depth);
  ASSERT_EQ(d.states(), 8);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 2.0);
  std::vector<Vector> inputs;
  Vector x = Vector::Zero(8);
  for (int k = 0; k < 12; ++k) {
    inputs.push_back(Vector{{unif(rng), unif(rng), unif(rng)}});
    x = d.A * x + d.B * inputs.back();
    const Vector fine = integrate_fine(m, inputs, s.sampling_minutes, k + 1, 0.01);
    EXPECT_LT((x.head(2) - fine).cwiseAbs().maxCoeff(), 1e-3) << "step " << k + 1;
  }
}

TEST(Scenario, DefaultsAreConsistent) {
  const ChannelScenario s = haughton_defaults();
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.steps(), 70);
  EXPECT_EQ(s.schedule.mode_at(0), 0);
  EXPECT_EQ(s.schedule.mode_at(80), 7);
  EXPECT_EQ(s.schedule.mode_at(199.9), 7);
  EXPECT_EQ(s.schedule.mode_at(700), 0);
  EXPECT_THROW(s.schedule.mode_at(701), InvalidArgument);
  const LinearGaussianSystem sys = build_system(s);
  EXPECT_EQ(sys.states(), 8);
  EXPECT_EQ(build_modes(s, sys).size(), 8);
}

TEST(Scenario, ScheduleMustCoverRun) {
  ChannelScenario s = haughton_defaults();
  s.schedule.segments = {{0, 80, 0}, {90, 700, 1}};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s.schedule.segments = {{0, 600, 0}};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s.schedule.segments = {{0, 700, 8}};
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Scenario, JsonRoundTrip) {
  ChannelScenario s = haughton_defaults();
  s.jc_max = 1234.0;
  s.schedule.segments = {{0, 350, 0}, {350, 700, 5}};
  const ChannelScenario back = scenario_from_json(scenario_to_json(s));
  EXPECT_EQ(back.jc_max, 1234.0);
  EXPECT_EQ(back.schedule.mode_at(400), 5);
  EXPECT_EQ(back.pools.at(10).tau, 16.0);
  EXPECT_EQ(back.Q, s.Q);

  // Masks are accepted in place of mode indices.
  Json j = scenario_to_json(s);
  j["schedule"][1].erase("mode");
  EXPECT_EQ(scenario_from_json(j).schedule.mode_at(400), 5);
}

TEST(Scenario, ShippedFileMatchesDefaults) {
  const ChannelScenario s = load_scenario(std::string(ASENTINEL_SCENARIO_DIR) + "/haughton_9_10.json");
  const ChannelScenario d = haughton_defaults();
  const LinearGaussianSystem a = build_system(s);
  const LinearGaussianSystem b = build_system(d);
  EXPECT_LT((a.A - b.A).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.B - b.B).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(s.jd_max, d.jd_max);
  EXPECT_EQ(s.jc_max, d.jc_max);
  EXPECT_EQ(s.schedule.segments.size(), d.schedule.segments.size());
}

TEST(Moments, EightStateCovarianceMatchesSampling) {
  const LinearGaussianSystem sys = build_system(haughton_defaults());
  const int horizon = 3;
  const Matrix h = state_covariance(sys, horizon);
  const RolloutSampler sampler(sys, sys.B);
  const ControlSequence u = ControlSequence::zeros(horizon, 3);
  std::mt19937_64 rng(3);
  const int draws = 20000;
  Vector sum = Vector::Zero(8);
  Matrix sq = Matrix::Zero(8, 8);
  for (int r = 0; r < draws; ++r) {
    const Vector x = sampler.sample(u, rng).states.col(horizon);
    sum += x;
    sq += x * x.transpose();
  }
  const Vector mean = sum / draws;
  const Matrix cov = (sq - draws * mean * mean.transpose()) / (draws - 1);
  const Matrix expected = h.block(8 * horizon, 8 * horizon, 8, 8);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double se = std::sqrt((expected(i, i) * expected(j, j) + expected(i, j) * expected(i, j)) / draws);
      EXPECT_LE(std::abs(cov(i, j) - expected(i, j)), 4.0 * se + 1e-12) << i << "," << j;
    }
  }
}

TEST(ClosedLoop, OpenGatesIdentifyEachAttack) {
  // Every gate held open: each mode moves the levels differently.
  const ChannelScenario s = scale_noise(haughton_defaults(), 1e-2);
  const LinearGaussianSystem sys = build_system(s);
  const ModeSet modes = build_modes(s, sys);
  const Vector u = Vector::Constant(3, 0.5);
  for (int truth = 0; truth < modes.size(); ++truth) {
    DetectorBank bank(sys, modes, s.horizon);
    std::mt19937_64 rng(static_cast<std::uint64_t>(truth) + 1);
    Vector x = sys.x0_mean;
    std::optional<Decision> last;
    for (int k = 0; k < s.horizon; ++k) {
      const Vector y = sys.C * x + linalg::psd_sqrt(sys.Hv) * RolloutSampler::standard_normal(2, rng);
      if (auto d = bank.step(u, y)) last = d;
      x = sys.A * x + modes.input_matrix(truth) * u + linalg::psd_sqrt(sys.Hw) * RolloutSampler::standard_normal(8, rng);
    }
    ASSERT_TRUE(last.has_value());
    EXPECT_EQ(last->mode, truth);
  }
}

TEST(ClosedLoop, PureControlRespectsConstraints) {
  const ChannelScenario s = haughton_defaults();
  const ExperimentLog log = run_closed_loop(s, ProblemKind::PureControl, 11);
  ASSERT_EQ(static_cast<int>(log.steps.size()), s.steps());
  EXPECT_EQ(log.windows.size(), 4u);
  EXPECT_EQ(log.windows.back().steps, 10);
  for (const auto& st : log.steps) {
    EXPECT_GE(st.applied.minCoeff(), 0.0);
    EXPECT_LE(st.expected_levels.maxCoeff(), s.level_cap + 1e-6);
  }
  // One decision per step once the first window is full.
  EXPECT_EQ(static_cast<int>(log.decisions.size()), s.steps() - s.horizon + 1);
  EXPECT_EQ(log.latencies.size(), s.schedule.segments.size());
}

TEST(ClosedLoop, DeterministicForSeed) {
  const ChannelScenario s = single_mode_scenario(200);
  const ExperimentLog a = run_closed_loop(s, ProblemKind::PureControl, 4);
  const ExperimentLog b = run_closed_loop(s, ProblemKind::PureControl, 4);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) EXPECT_EQ(a.steps[k].levels, b.steps[k].levels);
  EXPECT_EQ(a.control_cost_total(), b.control_cost_total());
}

TEST(ClosedLoop, UnreachableControlCapFallsBack) {
  ChannelScenario s = single_mode_scenario(200);
  s.initial_levels = Vector{{8.0, 4.0}};
  s.jc_max = 1e-3;
  ClosedLoopOptions opt;
  opt.solver.restarts = 2;
  const ExperimentLog least = run_closed_loop(s, ProblemKind::ControlConstrained, 1, opt);
  const ExperimentLog pure = run_closed_loop(s, ProblemKind::PureControl, 1, opt);
  ASSERT_EQ(least.failed_windows(), 1);
  EXPECT_EQ(least.windows[0].status, SolveStatus::Infeasible);
  EXPECT_NEAR(least.windows[0].control_cost, pure.windows[0].control_cost, 1e-9);

  opt.fallback = WindowFallback::Zero;
  const ExperimentLog zero = run_closed_loop(s, ProblemKind::ControlConstrained, 1, opt);
  for (const auto& st : zero.steps) EXPECT_EQ(st.applied.squaredNorm(), 0.0);
}

TEST(ClosedLoop, StartAboveCapHasNoAdmissibleInput) {
  ChannelScenario s = single_mode_scenario(200);
  s.initial_levels = Vector{{15.5, 5.0}};
  s.reference_levels = Vector{{6.6, 5.6}};
  ClosedLoopOptions opt;
  opt.solver.restarts = 2;
  const ExperimentLog log = run_closed_loop(s, ProblemKind::PureControl, 1, opt);
  ASSERT_FALSE(log.windows.empty());
  EXPECT_TRUE(log.windows[0].failed);
  EXPECT_TRUE(log.windows[0].linear_infeasible);
  for (int k = 0; k < log.windows[0].steps; ++k) {
    EXPECT_EQ(log.steps[static_cast<std::size_t>(k)].applied.squaredNorm(), 0.0);
  }
  EXPECT_FALSE(run_closed_loop(single_mode_scenario(200), ProblemKind::PureControl, 1, opt).windows[0].linear_infeasible);
}
