#include <gtest/gtest.h>

#include <random>

#include "asentinel/model.hpp"
#include "asentinel/model_io.hpp"

using namespace asentinel;

namespace {

LinearGaussianSystem scalar_system(double a, double b, double c, double hw, double hv, double x0, double p0) {
  LinearGaussianSystem s;
  s.A = Matrix::Constant(1, 1, a);
  s.B = Matrix::Constant(1, 1, b);
  s.C = Matrix::Constant(1, 1, c);
  s.Hw = Matrix::Constant(1, 1, hw);
  s.Hv = Matrix::Constant(1, 1, hv);
  s.x0_mean = Vector::Constant(1, x0);
  s.x0_cov = Matrix::Constant(1, 1, p0);
  return s;
}

LinearGaussianSystem random_system(std::mt19937_64& rng, int n, int p, int m) {
  std::normal_distribution<double> g(0.0, 1.0);
  auto rnd = [&](int r, int c) {
    Matrix x(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) x(i, j) = g(rng);
    return x;
  };
  LinearGaussianSystem s;
  s.A = 0.5 * rnd(n, n);
  s.B = rnd(n, p);
  s.C = rnd(m, n);
  Matrix w = rnd(n, n);
  s.Hw = 0.1 * w * w.transpose();
  Matrix v = rnd(m, m);
  s.Hv = 0.1 * v * v.transpose() + 0.1 * Matrix::Identity(m, m);
  s.x0_mean = rnd(n, 1);
  Matrix x0 = rnd(n, n);
  s.x0_cov = 0.2 * x0 * x0.transpose();
  return s;
}

}  // namespace

TEST(ApplyModeMask, ZeroesMaskedColumns) {
  Matrix b(2, 2);
  b << 1, 2, 3, 4;
  Matrix expected(2, 2);
  expected << 1, 0, 3, 0;
  EXPECT_EQ(apply_mode_mask(b, {false, true}), expected);
  EXPECT_EQ(apply_mode_mask(b, {false, false}), b);
  EXPECT_EQ(apply_mode_mask(b, {true, true}), Matrix::Zero(2, 2));
  EXPECT_THROW(apply_mode_mask(b, {true}), InvalidArgument);
}

TEST(EnumerateModes, BinaryCountingOrder) {
  const Matrix b = Matrix::Ones(3, 2);
  const ModeSet modes = enumerate_modes(b, uniform_priors(2));
  ASSERT_EQ(modes.size(), 4);
  EXPECT_EQ(mask_to_string(modes.masks[0]), "00");
  EXPECT_EQ(mask_to_string(modes.masks[1]), "10");
  EXPECT_EQ(mask_to_string(modes.masks[2]), "01");
  EXPECT_EQ(mask_to_string(modes.masks[3]), "11");
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(modes.priors(i), 0.25);
  EXPECT_EQ(modes.input_matrix(1).col(0), Vector::Zero(3));
  EXPECT_EQ(modes.input_matrix(1).col(1), b.col(1));
}

TEST(EnumerateModes, EightModesForThreeActuators) {
  const ModeSet modes = enumerate_modes(Matrix::Ones(2, 3), Vector::Constant(8, 0.125));
  EXPECT_EQ(modes.size(), 8);
  EXPECT_EQ(mask_to_string(modes.masks[7]), "111");
}

TEST(EnumerateModes, SingleActuator) {
  const ModeSet modes = enumerate_modes(Matrix::Ones(2, 1), uniform_priors(1));
  ASSERT_EQ(modes.size(), 2);
  EXPECT_EQ(modes.input_matrix(0), Matrix::Ones(2, 1));
  EXPECT_EQ(modes.input_matrix(1), Matrix::Zero(2, 1));
}

TEST(EnumerateModes, Errors) {
  EXPECT_THROW(enumerate_modes(Matrix::Ones(1, 13), uniform_priors(13)), CapacityError);
  EXPECT_THROW(enumerate_modes(Matrix::Ones(1, 1), Vector::Constant(2, 0.4)), InvalidArgument);
  EXPECT_THROW(enumerate_modes(Matrix::Ones(1, 2), Vector::Constant(2, 0.5)), InvalidArgument);
}

TEST(PropagateMoments, ScalarMean) {
  const auto sys = scalar_system(0.5, 1, 1, 0, 0, 0, 0);
  const auto mom = propagate_moments(sys, sys.B, 0, ControlSequence(Vector::Ones(1), 1, 1));
  EXPECT_DOUBLE_EQ(mom.x_mean(0), 0.0);
  EXPECT_DOUBLE_EQ(mom.x_mean(1), 1.0);
}

TEST(PropagateMoments, ScalarStateCovariance) {
  const auto sys = scalar_system(1, 1, 1, 1, 0, 0, 1);
  const auto mom = propagate_moments(sys, sys.B, 0, ControlSequence::zeros(3, 1));
  for (int k = 0; k <= 3; ++k) EXPECT_DOUBLE_EQ(mom.x_cov(k, k), 1.0 + k);
  EXPECT_DOUBLE_EQ(mom.x_cov(2, 1), 2.0);
  EXPECT_DOUBLE_EQ(mom.x_cov(1, 2), 2.0);
}

TEST(PropagateMoments, OutputNoiseOnDiagonalOnly) {
  const auto sys = scalar_system(1, 1, 1, 0, 0.5, 0, 1);
  const auto mom = propagate_moments(sys, sys.B, 0, ControlSequence::zeros(1, 1));
  EXPECT_DOUBLE_EQ(mom.y_cov(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(mom.y_cov(1, 0), 1.0);
}

TEST(PropagateMoments, MatchesExplicitSum) {
  std::mt19937_64 rng(3);
  const auto sys = random_system(rng, 3, 2, 2);
  const int horizon = 5;
  const Matrix h = state_covariance(sys, horizon);
  for (int k = 0; k <= horizon; ++k) {
    for (int l = 0; l <= k; ++l) {
      Matrix expected = linalg::matrix_power(sys.A, k) * sys.x0_cov * linalg::matrix_power(sys.A, l).transpose();
      for (int j = 1; j <= l; ++j) {
        expected += linalg::matrix_power(sys.A, k - j) * sys.Hw * linalg::matrix_power(sys.A, l - j).transpose();
      }
      EXPECT_LT((h.block(3 * k, 3 * l, 3, 3) - expected).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((h.block(3 * l, 3 * k, 3, 3) - expected.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(PropagateMoments, ModeIndependentCovarianceAndLinearity) {
  std::mt19937_64 rng(5);
  auto sys = random_system(rng, 3, 2, 2);
  const ModeSet modes = enumerate_modes(sys.B, uniform_priors(2));
  std::normal_distribution<double> g;
  Vector u1(8), u2(8);
  for (int i = 0; i < 8; ++i) {
    u1(i) = g(rng);
    u2(i) = g(rng);
  }
  const auto a = propagate_moments(sys, modes, 1, ControlSequence(u1, 4, 2));
  const auto b = propagate_moments(sys, modes, 3, ControlSequence(u2, 4, 2));
  EXPECT_EQ(a.x_cov, b.x_cov);
  const Matrix sym = a.y_cov - a.y_cov.transpose();
  EXPECT_LE(sym.cwiseAbs().maxCoeff(), 1e-10 * a.y_cov.cwiseAbs().maxCoeff());
  EXPECT_TRUE(linalg::is_psd(linalg::symmetrize(a.y_cov), 1e-10, 1e-8));

  sys.x0_mean.setZero();
  const auto s1 = propagate_moments(sys, modes, 2, ControlSequence(u1, 4, 2));
  const auto s2 = propagate_moments(sys, modes, 2, ControlSequence(u2, 4, 2));
  const auto s12 = propagate_moments(sys, modes, 2, ControlSequence(u1 + u2, 4, 2));
  EXPECT_LT((s12.x_mean - s1.x_mean - s2.x_mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PropagateMoments, DimensionErrors) {
  const auto sys = scalar_system(1, 1, 1, 0, 0, 0, 0);
  EXPECT_THROW(ControlSequence(Vector::Ones(3), 2, 1), InvalidArgument);
  EXPECT_THROW(propagate_moments(sys, Matrix::Ones(2, 1), 0, ControlSequence::zeros(1, 1)), InvalidArgument);
}

TEST(SampleRollout, NoiseFreeEqualsMean) {
  std::mt19937_64 rng(9);
  auto sys = random_system(rng, 3, 2, 2);
  sys.Hw.setZero();
  sys.Hv.setZero();
  sys.x0_cov.setZero();
  const Vector u = Vector::LinSpaced(6, -1, 1);
  const ControlSequence seq(u, 3, 2);
  const Rollout r = sample_rollout(sys, sys.B, seq, 11);
  const auto mom = propagate_moments(sys, sys.B, 0, seq);
  for (int k = 0; k <= 3; ++k) {
    EXPECT_LT((r.states.col(k) - mom.x_mean.segment(3 * k, 3)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((r.outputs.col(k) - mom.y_mean.segment(2 * k, 2)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SampleRollout, DeterministicInSeed) {
  std::mt19937_64 rng(13);
  const auto sys = random_system(rng, 2, 1, 1);
  const ControlSequence seq(Vector::Ones(4), 4, 1);
  const Rollout a = sample_rollout(sys, sys.B, seq, 42);
  const Rollout b = sample_rollout(sys, sys.B, seq, 42);
  const Rollout c = sample_rollout(sys, sys.B, seq, 43);
  EXPECT_EQ(a.outputs, b.outputs);
  EXPECT_EQ(a.states, b.states);
  EXPECT_NE(a.outputs, c.outputs);
}

TEST(SystemValidation, RejectsNonPsdNoise) {
  auto sys = scalar_system(1, 1, 1, -1, 1, 0, 0);
  EXPECT_THROW(sys.validate(), InvalidArgument);
  sys.Hw = Matrix::Identity(1, 1);
  sys.Hv = Matrix::Identity(2, 2);
  EXPECT_THROW(sys.validate(), InvalidArgument);
}

TEST(SystemDocument, JsonRoundTrip) {
  std::mt19937_64 rng(17);
  SystemDocument doc;
  doc.system = random_system(rng, 2, 2, 1);
  doc.modes = enumerate_modes(doc.system.B, Vector::Constant(4, 0.25));
  const SystemDocument back = document_from_json(io::parse_text(document_to_json(doc).dump()));
  EXPECT_EQ(back.system.A, doc.system.A);
  EXPECT_EQ(back.system.Hv, doc.system.Hv);
  ASSERT_EQ(back.modes.size(), 4);
  EXPECT_EQ(mask_to_string(back.modes.masks[2]), "01");
}

TEST(SystemDocument, ParseErrorCarriesLocation) {
  try {
    io::parse_text("{\n  \"A\": [[1,\n]");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(SystemDocument, RejectsDuplicateMasks) {
  const Json j = Json::parse(R"({"A":[[1]],"B":[[1]],"C":[[1]],"Hw":[[0]],"Hv":[[1]],"x0_mean":[0],"x0_cov":[[0]],
    "modes":{"masks":["0","0"],"priors":[0.5,0.5]}})");
  EXPECT_THROW(document_from_json(j), InvalidArgument);
}
