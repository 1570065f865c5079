#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "asentinel/objectives.hpp"

using namespace asentinel;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> g;
  Matrix x(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) x(i, j) = g(rng);
  return x;
}

LinearGaussianSystem random_system(std::mt19937_64& rng, int n, int p, int m) {
  LinearGaussianSystem s;
  s.A = 0.4 * random_matrix(rng, n, n);
  s.B = random_matrix(rng, n, p);
  s.C = random_matrix(rng, m, n);
  const Matrix w = random_matrix(rng, n, n);
  s.Hw = 0.1 * w * w.transpose();
  s.Hv = 0.2 * Matrix::Identity(m, m);
  s.x0_mean = random_matrix(rng, n, 1);
  const Matrix x0 = random_matrix(rng, n, n);
  s.x0_cov = 0.1 * x0 * x0.transpose();
  return s;
}

LinearGaussianSystem scalar(double a, double b, double hw, double hv, double x0, double p0) {
  LinearGaussianSystem s;
  s.A = Matrix::Constant(1, 1, a);
  s.B = Matrix::Constant(1, 1, b);
  s.C = Matrix::Identity(1, 1);
  s.Hw = Matrix::Constant(1, 1, hw);
  s.Hv = Matrix::Constant(1, 1, hv);
  s.x0_mean = Vector::Constant(1, x0);
  s.x0_cov = Matrix::Constant(1, 1, p0);
  return s;
}

// Term-by-term expectation of the tracking cost from trajectory moments.
double direct_control_cost(const LinearGaussianSystem& sys, const ModeSet& modes, const Vector& r, const Matrix& q,
                           const Matrix& rw, const Vector& u, int horizon) {
  const int m = sys.outputs();
  const int p = sys.inputs();
  double total = 0.0;
  for (int i = 0; i < modes.size(); ++i) {
    const auto mom = propagate_moments(sys, modes, i, ControlSequence(u, horizon, p));
    double cost = 0.0;
    for (int k = 0; k <= horizon; ++k) {
      const Vector e = mom.y_mean.segment(k * m, m) - r.segment(k * m, m);
      cost += e.dot(q * e) + (q * mom.y_cov.block(k * m, k * m, m, m)).trace();
    }
    total += modes.priors(i) * cost;
  }
  for (int k = 0; k < horizon; ++k) total += u.segment(k * p, p).dot(rw * u.segment(k * p, p));
  return total;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& u, double h = 1e-5) {
  Vector g(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    Vector a = u, b = u;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(ControlObjective, PureEffortTerm) {
  const auto sys = scalar(1, 1, 0, 1, 0, 0);
  const ModeSet modes = enumerate_modes(sys.B, Vector{{1.0, 0.0}});
  const auto form = build_control_objective(sys, modes, Vector::Zero(3),
                                            ControlWeights{Matrix::Zero(1, 1), Matrix::Identity(1, 1)}, 2);
  EXPECT_NEAR(eval_control_objective(form, Vector{{1.0, 2.0}}), 5.0, 1e-12);
}

TEST(ControlObjective, OnlyTraceTermSurvives) {
  const auto sys = scalar(1, 1, 0, 0, 0, 1);
  const ModeSet modes = enumerate_modes(sys.B, Vector{{1.0, 0.0}});
  ControlWeights w{Matrix::Identity(1, 1), Matrix::Zero(1, 1), false};
  const auto form = build_control_objective(sys, modes, Vector::Zero(2), w, 1);
  EXPECT_NEAR(eval_control_objective(form, Vector::Zero(1)), 2.0, 1e-12);
  EXPECT_NEAR(form.c0, 2.0, 1e-12);
}

TEST(ControlObjective, WeightValidation) {
  const auto sys = scalar(1, 1, 0, 1, 0, 0);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  EXPECT_THROW(build_control_objective(sys, modes, Vector::Zero(2),
                                       ControlWeights{Matrix::Identity(1, 1), Matrix::Zero(1, 1)}, 1),
               InvalidArgument);
  EXPECT_THROW(build_control_objective(sys, modes, Vector::Zero(2),
                                       ControlWeights{-Matrix::Identity(1, 1), Matrix::Identity(1, 1)}, 1),
               InvalidArgument);
  EXPECT_THROW(build_control_objective(sys, modes, Vector::Zero(3),
                                       ControlWeights{Matrix::Identity(1, 1), Matrix::Identity(1, 1)}, 1),
               InvalidArgument);
}

TEST(ControlObjective, QuadraticFormArithmetic) {
  ControlObjectiveForm f;
  f.Phi = Matrix::Identity(2, 2);
  f.psi = Vector::Zero(2);
  EXPECT_DOUBLE_EQ(eval_control_objective(f, Vector{{3.0, 4.0}}), 25.0);
  f.c0 = 7.5;
  EXPECT_DOUBLE_EQ(eval_control_objective(f, Vector::Zero(2)), 7.5);
}

TEST(ControlObjective, MatchesDirectExpectation) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const auto sys = random_system(rng, 3, 2, 2);
    const ModeSet modes = enumerate_modes(sys.B, Vector{{0.4, 0.3, 0.2, 0.1}});
    const int horizon = 4;
    const Vector r = random_matrix(rng, 2 * (horizon + 1), 1);
    const Matrix qf = random_matrix(rng, 2, 2);
    const Matrix q = qf * qf.transpose();
    const Matrix rw = 0.5 * Matrix::Identity(2, 2);
    const auto form = build_control_objective(sys, modes, r, ControlWeights{q, rw}, horizon);
    EXPECT_LT((form.Phi - form.Phi.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(linalg::is_pd(form.Phi));
    for (int s = 0; s < 3; ++s) {
      const Vector u = random_matrix(rng, 2 * horizon, 1);
      const double direct = direct_control_cost(sys, modes, r, q, rw, u, horizon);
      EXPECT_NEAR(form.value(u), direct, 1e-8 * std::abs(direct));
    }
  }
}

TEST(ControlObjective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(37);
  const auto sys = random_system(rng, 3, 2, 2);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(2));
  const auto form = build_control_objective(sys, modes, Vector::Ones(2 * 6),
                                            ControlWeights{Matrix::Identity(2, 2), Matrix::Identity(2, 2)}, 5);
  for (int t = 0; t < 5; ++t) {
    const Vector u = random_matrix(rng, 10, 1);
    const Vector g = control_objective_gradient(form, u);
    const Vector fd = central_difference([&](const Vector& v) { return form.value(v); }, u);
    EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-6 * (1 + g.norm()));
  }
}

TEST(ControlObjective, AsPrintedVariantsRecorded) {
  std::mt19937_64 rng(41);
  const auto sys = random_system(rng, 2, 1, 2);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  const Vector r = Vector::Ones(2 * 3);
  const auto form =
      build_control_objective(sys, modes, r, ControlWeights{Matrix::Identity(2, 2), Matrix::Identity(1, 1)}, 2);
  ASSERT_TRUE(form.psi_as_printed.has_value());
  EXPECT_NE(form.c0_as_printed, form.c0);
  const Json diag = objective_diagnostics_json(form, build_detection_bound(sys, modes, 2));
  EXPECT_TRUE(diag["control"]["as_printed"].contains("c0"));
}

TEST(DetectionBound, IdenticalModesGiveWeightSum) {
  auto sys = scalar(0.9, 1, 0.1, 0.5, 1, 0.1);
  sys.B = Matrix::Zero(1, 1);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  const auto form = build_detection_bound(sys, modes, 3);
  ASSERT_EQ(form.pairs.size(), 1u);
  EXPECT_NEAR(form.value(Vector::Constant(3, 2.0)), 0.5, 1e-14);
  EXPECT_NEAR(form.pairs[0].logdet, 0.0, 1e-14);
}

TEST(DetectionBound, ScalarPairArithmetic) {
  DetectionPairTerm t;
  t.weight = 0.5;
  t.D = Matrix::Zero(1, 1);
  t.offset = Vector::Constant(1, 2.0);
  t.W = Matrix::Constant(1, 1, 0.25);
  t.DtW = t.D.transpose() * t.W;
  t.DtWD = t.DtW * t.D;
  DetectionBoundForm form;
  form.pairs.push_back(t);
  form.horizon = 1;
  form.inputs = 1;
  EXPECT_NEAR(t.exponent(Vector::Zero(1)), 0.25, 1e-15);
  EXPECT_NEAR(eval_detection_bound(form, Vector::Zero(1)), 0.5 * std::exp(-0.25), 1e-15);
  EXPECT_NEAR(eval_detection_bound(form, Vector::Zero(1)), 0.38940, 1e-5);
}

TEST(DetectionBound, BoundedAndMaximalAtZeroSeparation) {
  std::mt19937_64 rng(43);
  auto sys = random_system(rng, 2, 2, 2);
  sys.x0_mean.setZero();
  const ModeSet modes = enumerate_modes(sys.B, Vector{{0.1, 0.2, 0.3, 0.4}});
  const auto form = build_detection_bound(sys, modes, 4);
  EXPECT_NEAR(form.value(Vector::Zero(8)), form.weight_sum(), 1e-14);
  for (int t = 0; t < 10; ++t) {
    const double v = form.value(random_matrix(rng, 8, 1));
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, form.weight_sum());
  }
  for (const auto& pair : form.pairs) {
    EXPECT_NEAR(pair.logdet, 0.0, 1e-12);
    EXPECT_TRUE(linalg::is_pd(pair.W));
  }
}

TEST(DetectionBound, GradientAndHessianMatchFiniteDifferences) {
  std::mt19937_64 rng(47);
  const auto sys = random_system(rng, 3, 2, 2);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(2));
  const auto form = build_detection_bound(sys, modes, 3);
  for (int t = 0; t < 5; ++t) {
    const Vector u = 0.3 * random_matrix(rng, 6, 1);
    const Vector g = detection_bound_gradient(form, u);
    const Vector fd = central_difference([&](const Vector& v) { return form.value(v); }, u);
    EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-6 * (1 + g.norm()));
    const Matrix h = form.hessian(u);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      Vector a = u, b = u;
      a(i) += 1e-5;
      b(i) -= 1e-5;
      const Vector col = (form.gradient(a) - form.gradient(b)) / 2e-5;
      EXPECT_LE((h.col(i) - col).cwiseAbs().maxCoeff(), 1e-6 * (1 + h.norm()));
    }
  }
}

TEST(DetectionBound, CovarianceTermsIndependentOfInput) {
  std::mt19937_64 rng(53);
  const auto sys = random_system(rng, 2, 1, 1);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  const auto form = build_detection_bound(sys, modes, 2);
  const Vector u1 = Vector::Zero(2), u2 = Vector::Constant(2, 5.0);
  EXPECT_NE(form.pairs[0].delta(u1), form.pairs[0].delta(u2));
  EXPECT_NEAR(form.pairs[0].exponent(u1) - 0.25 * form.pairs[0].delta(u1).dot(form.pairs[0].W * form.pairs[0].delta(u1)),
              form.pairs[0].logdet, 1e-15);
}

TEST(DetectionBound, SingularCovarianceRejected) {
  auto sys = scalar(1, 1, 0, 0, 0, 0);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  EXPECT_THROW(build_detection_bound(sys, modes, 1), FactorizationError);
}

TEST(Constraints, ScalarLevelRow) {
  const auto sys = scalar(1, 1, 0, 1, 6.6, 0);
  const ModeSet modes = enumerate_modes(sys.B, Vector{{1.0, 0.0}});
  const auto c = expand_constraints(sys, modes, Matrix::Ones(1, 1), Matrix::Zero(1, 1), Vector::Constant(1, 15.0), 1);
  // modes x (N+1) x n_c rows
  ASSERT_EQ(c.rows(), 4);
  EXPECT_EQ(c.tags[1].k, 1);
  EXPECT_DOUBLE_EQ(c.M(1, 0), 1.0);
  EXPECT_NEAR(c.b(1), 8.4, 1e-12);
  EXPECT_DOUBLE_EQ(c.M(0, 0), 0.0);
  // The blocked mode cannot move the level.
  EXPECT_DOUBLE_EQ(c.M(3, 0), 0.0);
}

TEST(Constraints, InputOnlyRowsTouchOneBlock) {
  std::mt19937_64 rng(59);
  const auto sys = random_system(rng, 2, 2, 1);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(2));
  const Matrix gu = -Matrix::Identity(2, 2);
  const auto c = expand_constraints(sys, modes, Matrix::Zero(2, 2), gu, Vector::Zero(2), 3);
  EXPECT_EQ(c.rows(), 2 * 4 * 4);
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    const int k = c.tags[static_cast<std::size_t>(r)].k;
    const int nonzero = static_cast<int>((c.M.row(r).array() != 0.0).count());
    EXPECT_EQ(nonzero, k < 3 ? 1 : 0);
  }
}

TEST(Constraints, EquivalentToExpectedConstraint) {
  std::mt19937_64 rng(61);
  const auto sys = random_system(rng, 3, 2, 2);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(2));
  const Matrix gx = random_matrix(rng, 2, 3);
  const Matrix gu = random_matrix(rng, 2, 2);
  const Vector g = Vector::Constant(2, 3.0);
  const int horizon = 4;
  const auto c = expand_constraints(sys, modes, gx, gu, g, horizon);
  const Vector u = random_matrix(rng, 8, 1);
  const Vector lhs = c.M * u - c.b;
  Eigen::Index row = 0;
  for (int i = 0; i < modes.size(); ++i) {
    const auto mom = propagate_moments(sys, modes, i, ControlSequence(u, horizon, 2));
    for (int k = 0; k <= horizon; ++k) {
      Vector e = gx * mom.x_mean.segment(3 * k, 3) - g;
      if (k < horizon) e += gu * u.segment(2 * k, 2);
      for (int r = 0; r < 2; ++r, ++row) EXPECT_NEAR(lhs(row), e(r), 1e-10);
    }
  }
}

TEST(Constraints, DimensionMismatch) {
  const auto sys = scalar(1, 1, 0, 1, 0, 0);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(1));
  EXPECT_THROW(expand_constraints(sys, modes, Matrix::Ones(1, 2), Matrix::Zero(1, 1), Vector::Ones(1), 1),
               InvalidArgument);
}
