#include <gtest/gtest.h>

#include <random>

#include "asentinel/optimizer.hpp"

using namespace asentinel;

namespace {

// Scalar integrator with two modes; inputs directly separate the modes.
struct SmallProblem {
  LinearGaussianSystem sys;
  ModeSet modes;
  int horizon = 2;

  SmallProblem() {
    sys.A = Matrix::Constant(1, 1, 0.9);
    sys.B = Matrix::Constant(1, 1, 1.0);
    sys.C = Matrix::Identity(1, 1);
    sys.Hw = Matrix::Constant(1, 1, 0.2);
    sys.Hv = Matrix::Constant(1, 1, 0.3);
    sys.x0_mean = Vector::Constant(1, 1.0);
    sys.x0_cov = Matrix::Constant(1, 1, 0.1);
    modes = enumerate_modes(sys.B, uniform_priors(1));
  }

  ProblemSpec spec(ProblemKind kind, double lo, double hi) const {
    ProblemSpec s;
    s.kind = kind;
    s.control = build_control_objective(sys, modes, Vector::Constant(horizon + 1, 1.0),
                                        ControlWeights{Matrix::Identity(1, 1), Matrix::Identity(1, 1)}, horizon);
    s.detection = build_detection_bound(sys, modes, horizon);
    Matrix gu(2, 1);
    gu << 1, -1;
    s.constraints = expand_constraints(sys, modes, Matrix::Zero(2, 1), gu, Vector{{hi, -lo}}, horizon);
    return s;
  }
};

double best_on_grid(const ProblemSpec& spec, double lo, double hi, int points) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    for (int j = 0; j < points; ++j) {
      const Vector u{{lo + (hi - lo) * i / (points - 1), lo + (hi - lo) * j / (points - 1)}};
      const double jc = spec.control.value(u);
      const double jd = spec.detection.value(u);
      if (spec.kind == ProblemKind::DetectionConstrained && jd <= spec.jd_max) best = std::min(best, jc);
      if (spec.kind == ProblemKind::ControlConstrained && jc <= spec.jc_max) best = std::min(best, jd);
    }
  }
  return best;
}

}  // namespace

TEST(PureControl, UnconstrainedScalar) {
  ProblemSpec s;
  s.control.Phi = Matrix::Constant(1, 1, 2.0);
  s.control.psi = Vector::Constant(1, -4.0);
  s.control.c0 = 3.0;
  s.constraints.M = Matrix(0, 1);
  s.constraints.b = Vector(0);
  const Solution sol = solve_pure_control(s);
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.u_star(0), 1.0, 1e-14);
  EXPECT_NEAR(sol.objective_value, 3.0 - 2.0, 1e-14);
  EXPECT_LE(sol.kkt_residual, 1e-8);
}

TEST(PureControl, ClampedByBound) {
  ProblemSpec s;
  s.control.Phi = Matrix::Constant(1, 1, 2.0);
  s.control.psi = Vector::Constant(1, -4.0);
  s.constraints.M = Matrix::Ones(1, 1);
  s.constraints.b = Vector::Constant(1, 0.5);
  const Solution sol = solve_pure_control(s);
  ASSERT_EQ(sol.status, SolveStatus::Optimal);
  EXPECT_NEAR(sol.u_star(0), 0.5, 1e-14);
  EXPECT_LE(sol.kkt_residual, 1e-8);
}

TEST(PureControl, InfeasibleGivesCertificate) {
  ProblemSpec s;
  s.control.Phi = Matrix::Identity(1, 1);
  s.control.psi = Vector::Zero(1);
  s.constraints.M = Matrix(3, 1);
  s.constraints.M << 1, -1, 1;
  s.constraints.b = Vector{{0.0, -1.0, 0.0}};
  const Solution sol = solve_pure_control(s);
  ASSERT_EQ(sol.status, SolveStatus::Infeasible);
  ASSERT_TRUE(sol.farkas.has_value());
  EXPECT_GE(sol.farkas->minCoeff(), 0.0);
  EXPECT_LT((s.constraints.M.transpose() * *sol.farkas).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(s.constraints.b.dot(*sol.farkas), 0.0);
}

TEST(SideConstrained, VacuousDetectionCapMatchesPureControl) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::DetectionConstrained, -5, 5);
  s.jd_max = s.detection.weight_sum();
  const Solution pure = solve_pure_control(p.spec(ProblemKind::PureControl, -5, 5));
  const Solution sol = solve_with_side_constraint(s);
  ASSERT_TRUE(sol.accepted());
  EXPECT_NEAR(sol.objective_value, pure.objective_value, 1e-6);
}

TEST(SideConstrained, DetectionConstrainedMatchesGrid) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::DetectionConstrained, -3, 3);
  const Solution pure = solve_pure_control(p.spec(ProblemKind::PureControl, -3, 3));
  s.jd_max = 0.8 * pure.detection_bound;
  const Solution sol = solve_with_side_constraint(s);
  ASSERT_TRUE(sol.accepted()) << to_string(sol.status);
  EXPECT_LE(sol.constraint_violation, 1e-6);
  EXPECT_GE(sol.side_constraint_slack, -1e-6);
  EXPECT_LE(std::abs(sol.detection_bound - s.jd_max), 1e-6);
  EXPECT_GE(best_on_grid(s, -3, 3, 201), sol.objective_value - 1e-4);
}

TEST(SideConstrained, ControlConstrainedMatchesGrid) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::ControlConstrained, -3, 3);
  const Solution pure = solve_pure_control(p.spec(ProblemKind::PureControl, -3, 3));
  s.jc_max = 1.5 * pure.control_cost;
  const Solution sol = solve_with_side_constraint(s);
  ASSERT_TRUE(sol.accepted()) << to_string(sol.status);
  EXPECT_GE(sol.side_constraint_slack, -1e-6);
  EXPECT_LT(sol.objective_value, pure.detection_bound);
  EXPECT_GE(best_on_grid(s, -3, 3, 201), sol.objective_value - 1e-4);
}

TEST(SideConstrained, UnboundedControlCapGrowsInput) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::ControlConstrained, -3, 3);
  s.constraints = ExpandedConstraints{Matrix(0, 2), Vector(0), {}};
  s.jc_max = std::numeric_limits<double>::infinity();
  SolverOptions opt;
  opt.restarts = 2;
  opt.max_outer_iterations = 5;
  const Solution pure = solve_pure_control(p.spec(ProblemKind::PureControl, -100, 100));
  const Solution sol = solve_with_side_constraint(s, opt);
  EXPECT_GT(sol.u_star.norm(), 10.0 * pure.u_star.norm());
  EXPECT_LT(sol.detection_bound, 1e-3 * pure.detection_bound);
}

TEST(SideConstrained, UnboundedControlCapWithBoxEndsOnBoundary) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::ControlConstrained, -3, 3);
  s.jc_max = std::numeric_limits<double>::infinity();
  const Solution sol = solve_with_side_constraint(s);
  ASSERT_TRUE(sol.accepted());
  EXPECT_NEAR(sol.u_star.cwiseAbs().maxCoeff(), 3.0, 1e-9);
}

TEST(SideConstrained, InfeasibleCapReportsMinimum) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::DetectionConstrained, -0.1, 0.1);
  s.jd_max = 1e-6;
  SolverOptions opt;
  opt.restarts = 3;
  const Solution sol = solve_with_side_constraint(s, opt);
  EXPECT_EQ(sol.status, SolveStatus::Infeasible);
  EXPECT_GT(sol.min_side_value, 1e-6);
  EXPECT_LE(sol.min_side_value, s.detection.weight_sum());
}

TEST(SideConstrained, DeterministicForFixedSeed) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::ControlConstrained, -3, 3);
  s.jc_max = 1.3 * solve_pure_control(p.spec(ProblemKind::PureControl, -3, 3)).control_cost;
  SolverOptions opt;
  opt.seed = 99;
  const Solution a = solve_with_side_constraint(s, opt);
  const Solution b = solve_with_side_constraint(s, opt);
  EXPECT_EQ(a.objective_value, b.objective_value);
  EXPECT_EQ(a.u_star, b.u_star);
}

TEST(SideConstrained, TighterDetectionCapCostsMore) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::DetectionConstrained, -3, 3);
  const double start = solve_pure_control(p.spec(ProblemKind::PureControl, -3, 3)).detection_bound;
  double previous = -std::numeric_limits<double>::infinity();
  for (double f : {1.0, 0.9, 0.8, 0.7, 0.6}) {
    s.jd_max = f * start;
    const Solution sol = solve_with_side_constraint(s);
    ASSERT_TRUE(sol.accepted());
    EXPECT_GE(sol.objective_value, previous - 1e-8);
    previous = sol.objective_value;
  }
}

TEST(ProblemSpec, Validation) {
  SmallProblem p;
  ProblemSpec s = p.spec(ProblemKind::DetectionConstrained, -3, 3);
  s.jd_max = -1.0;
  EXPECT_THROW(solve_with_side_constraint(s), InvalidArgument);
  EXPECT_THROW(problem_kind_from_string("bogus"), InvalidArgument);
  EXPECT_EQ(problem_kind_from_string("control-constrained"), ProblemKind::ControlConstrained);
}
