#include <gtest/gtest.h>

#include <cmath>

#include "twoscale/darcy_macro.hpp"

using namespace twoscale;

namespace {

MacroGrid mesh(int n) {
  MacroGrid m;
  m.dims = {n, n};
  return m;
}

double max_abs(const VectorField& u) {
  double m = 0.0;
  for (const auto& c : u.comp)
    for (double v : c) m = std::max(m, std::abs(v));
  return m;
}

double max_abs(const ScalarField& p) {
  double m = 0.0;
  for (double v : p.values) m = std::max(m, std::abs(v));
  return m;
}

/// Rotational field, tangent to the walls.
Vec2 swirl(double x, double y) {
  double s = std::sin(M_PI * x), t = std::sin(M_PI * y);
  return {2.0 * M_PI * s * s * std::sin(2.0 * M_PI * y) / 2.0, -2.0 * M_PI * std::sin(2.0 * M_PI * x) * t * t / 2.0};
}

Vec2 mixed(double x, double y) { return Vec2(1.0 + x, 0.5 * y) + swirl(x, y); }

/// Bingham-type law with threshold `tc`.
LawFn plug_law(const Mat2& K, double tc) {
  return [K, tc](const Vec2& l) {
    double n = l.norm();
    return n > tc ? Vec2(K * l * (1.0 - tc / n)) : Vec2(0.0, 0.0);
  };
}

}  // namespace

TEST(LinearDarcy, ConstantForcingIsAbsorbed) {
  auto s = solve_linear_darcy(Mat2::Identity(), [](double, double) { return Vec2(1.5, -0.5); }, mesh(16));
  EXPECT_LE(max_abs(s.u0), 1e-12);
  auto h = s.mesh.spacing();
  // p = f·x up to a constant
  for (int j = 0; j < 16; ++j)
    for (int i = 1; i < 16; ++i) EXPECT_NEAR((s.p_hat.at(i, j) - s.p_hat.at(i - 1, j)) / h[0], 1.5, 1e-9);
}

TEST(LinearDarcy, AdmissibleForcingPassesThrough) {
  auto s = solve_linear_darcy(Mat2::Identity(), swirl, mesh(32));
  EXPECT_LE(max_abs(s.p_hat), 1e-12);
  StaggeredGrid g = s.mesh.grid();
  for (int c = 0; c < 2; ++c) {
    auto fd = g.face_dims(c);
    for (int j = 0; j < fd[1]; ++j)
      for (int i = 0; i < fd[0]; ++i) {
        auto p = g.face_point(c, i, j);
        EXPECT_NEAR(s.u0.at(c, i, j), swirl(p[0], p[1])[c], 1e-12);
      }
  }
}

TEST(LinearDarcy, DiagonalPermeabilitySecondOrder) {
  const double k1 = 2.0, k2 = 0.5;
  Mat2 K;
  K << k1, 0.0, 0.0, k2;
  // f = (cos πy, 0): p = A(x) cos πy with k1 A'' = k2 π² A, A'(0) = A'(1) = 1
  const double kap = M_PI * std::sqrt(k2 / k1);
  auto A = [&](double x) { return std::sinh(kap * (x - 0.5)) / (kap * std::cosh(kap / 2)); };
  auto dA = [&](double x) { return std::cosh(kap * (x - 0.5)) / std::cosh(kap / 2); };
  std::vector<double> err;
  for (int n : {16, 32, 64}) {
    auto s = solve_linear_darcy(K, [](double, double y) { return Vec2(std::cos(M_PI * y), 0.0); }, mesh(n));
    StaggeredGrid g = s.mesh.grid();
    double e = 0.0;
    for (int c = 0; c < 2; ++c) {
      auto fd = g.face_dims(c);
      for (int j = 0; j < fd[1]; ++j)
        for (int i = 0; i < fd[0]; ++i) {
          auto p = g.face_point(c, i, j);
          double exact = c == 0 ? k1 * (1.0 - dA(p[0])) * std::cos(M_PI * p[1]) : k2 * M_PI * A(p[0]) * std::sin(M_PI * p[1]);
          e = std::max(e, std::abs(s.u0.at(c, i, j) - exact));
        }
    }
    err.push_back(e);
    EXPECT_LE(s.div_max, 1e-10);
    EXPECT_EQ(s.boundary_flux, 0.0);
  }
  EXPECT_GE(err[0] / err[1], 3.5);
  EXPECT_GE(err[1] / err[2], 3.5);
  EXPECT_LE(err[2], 1e-3);
}

TEST(LinearDarcy, FullTensorConserves) {
  Mat2 K;
  K << 2.0, 0.4, 0.4, 1.0;
  auto s = solve_linear_darcy(K, mixed, mesh(24));
  EXPECT_LE(s.residual, 1e-12);
  EXPECT_EQ(s.boundary_flux, 0.0);
  double mean = 0.0;
  for (double v : s.p_hat.values) mean += v;
  EXPECT_NEAR(mean, 0.0, 1e-12);
}

TEST(LinearDarcy, RejectsIndefinitePermeability) {
  Mat2 K;
  K << 1.0, 2.0, 2.0, 1.0;
  try {
    solve_linear_darcy(K, mixed, mesh(8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularK);
  }
  EXPECT_THROW(solve_linear_darcy(Mat2::Zero(), mixed, mesh(8)), Error);
}

TEST(NonlinearDarcy, ZeroForcingGivesRest) {
  Mat2 K = Mat2::Identity();
  auto s = solve_nonlinear_darcy(plug_law(K, 0.3), K, [](double, double) { return Vec2(0.0, 0.0); }, mesh(16));
  EXPECT_EQ(max_abs(s.p_hat), 0.0);
  EXPECT_EQ(max_abs(s.u0), 0.0);
  EXPECT_TRUE(s.all_rigid);
}

TEST(NonlinearDarcy, LinearLawMatchesLinearSolve) {
  Mat2 K;
  K << 2.0, 0.3, 0.3, 0.5;
  auto lin = solve_linear_darcy(K, mixed, mesh(32));
  auto nl = solve_nonlinear_darcy([&](const Vec2& l) { return Vec2(K * l); }, K, mixed, mesh(32));
  for (std::size_t k = 0; k < lin.p_hat.values.size(); ++k)
    EXPECT_NEAR(nl.p_hat.values[k], lin.p_hat.values[k], 1e-6 * max_abs(lin.p_hat));
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < lin.u0.comp[c].size(); ++k)
      EXPECT_NEAR(nl.u0.comp[c][k], lin.u0.comp[c][k], 1e-6 * max_abs(lin.u0));
}

TEST(NonlinearDarcy, SubThresholdGradientIsRigid) {
  Mat2 K = Mat2::Identity();
  // |∇φ| ≤ 0.5 < threshold 0.6
  auto s = solve_nonlinear_darcy(plug_law(K, 0.6), K, [](double x, double y) {
    return Vec2(0.3 * std::cos(x), 0.3 * std::sin(y));
  }, mesh(16));
  EXPECT_TRUE(s.all_rigid);
  EXPECT_TRUE(s.converged);
  EXPECT_EQ(max_abs(s.u0), 0.0);
}

TEST(NonlinearDarcy, PlugLawConvergesAndConserves) {
  Mat2 K;
  K << 1.0, 0.0, 0.0, 0.7;
  auto s = solve_nonlinear_darcy(plug_law(K, 0.4), K, mixed, mesh(32));
  EXPECT_TRUE(s.converged);
  EXPECT_LE(s.residual, 1e-10);
  EXPECT_EQ(s.boundary_flux, 0.0);
  EXPECT_FALSE(s.all_rigid);
  for (std::size_t k = 1; k < s.residual_history.size(); ++k)
    EXPECT_LT(s.residual_history[k], s.residual_history[k - 1]);
  // slower than the Stokes-type response everywhere
  auto lin = solve_linear_darcy(K, mixed, mesh(32));
  double nl = 0.0, ln = 0.0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < s.u0.comp[c].size(); ++k) {
      nl += s.u0.comp[c][k] * s.u0.comp[c][k];
      ln += lin.u0.comp[c][k] * lin.u0.comp[c][k];
    }
  EXPECT_LT(nl, ln);
}

TEST(NonlinearDarcy, LawFileWithZeroYieldMatchesLinear) {
  EffectiveLaw law;
  law.g = 0.0;
  Mat2 K;
  K << 0.02, 0.0, 0.0, 0.02;
  law.linear_K = K;
  auto lin = solve_linear_darcy(K, mixed, mesh(16));
  auto nl = solve_nonlinear_darcy(law, mixed, mesh(16));
  for (std::size_t k = 0; k < lin.p_hat.values.size(); ++k)
    EXPECT_NEAR(nl.p_hat.values[k], lin.p_hat.values[k], 1e-6 * max_abs(lin.p_hat));
}

TEST(NonlinearDarcy, ConfigValidation) {
  DarcyConfig c;
  c.damping = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = DarcyConfig{};
  c.floor = 2.0;
  EXPECT_THROW(c.validate(), Error);
}
