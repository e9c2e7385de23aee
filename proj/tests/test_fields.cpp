#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twoscale/fields.hpp"

using namespace twoscale;

namespace {

StaggeredGrid box_grid(int n, double L = 1.0, bool periodic = false) {
  return StaggeredGrid{{n, n}, {L / n, L / n}, {periodic, periodic}};
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(Divergence, ConstantFieldIsFreeOfSources) {
  for (bool per : {false, true}) {
    auto g = box_grid(8, 1.0, per);
    auto u = VectorField::sample(g, [](double, double) { return std::array<double, 2>{2.0, -3.0}; });
    EXPECT_LT(max_abs(divergence(u).values), 1e-12);
  }
}

TEST(Divergence, SolenoidalLinearField) {
  auto g = box_grid(16);
  auto u = VectorField::sample(g, [](double x, double y) { return std::array<double, 2>{x, -y}; });
  EXPECT_LT(max_abs(divergence(u).values), 1e-12);
}

TEST(Divergence, SecondOrderOnSine) {
  double err[2];
  for (int r = 0; r < 2; ++r) {
    auto g = box_grid(16 << r, 2.0);
    auto u = VectorField::sample(g, [](double x, double) { return std::array<double, 2>{std::sin(x), 0.0}; });
    auto d = divergence(u);
    double e = 0.0;
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) e = std::max(e, std::abs(d.at(i, j) - std::cos(g.xc(i))));
    err[r] = e;
  }
  EXPECT_GE(std::log2(err[0] / err[1]), 1.9);
}

TEST(Gradient, ConstantHasZeroGradient) {
  ScalarField p(box_grid(8, 1.0, true), 4.5);
  auto v = gradient(p);
  EXPECT_EQ(max_abs(v.comp[0]), 0.0);
  EXPECT_EQ(max_abs(v.comp[1]), 0.0);
}

TEST(Gradient, SecondOrderOnPeriodicSine) {
  double err[2];
  for (int r = 0; r < 2; ++r) {
    auto g = box_grid(16 << r, 1.0, true);
    auto p = ScalarField::sample(g, [](double x, double y) { return std::sin(2 * M_PI * x) * std::cos(2 * M_PI * y); });
    auto v = gradient(p);
    double e = 0.0;
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        auto q = g.face_point(0, i, j);
        e = std::max(e, std::abs(v.at(0, i, j) - 2 * M_PI * std::cos(2 * M_PI * q[0]) * std::cos(2 * M_PI * q[1])));
      }
    err[r] = e;
  }
  EXPECT_GE(std::log2(err[0] / err[1]), 1.9);
}

TEST(Gradient, AdjointToDivergenceOnPeriodicFields) {
  auto g = StaggeredGrid{{12, 10}, {0.1, 0.13}, {true, true}};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarField p(g);
  for (auto& x : p.values) x = U(rng);
  VectorField u(g);
  for (auto& c : u.comp)
    for (auto& x : c) x = U(rng);
  double lhs = inner(gradient(p), u);
  double rhs = -inner(p, divergence(u));
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
}

TEST(Gradient, AdjointForZeroBoundaryFields) {
  auto g = box_grid(9);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarField p(g);
  for (auto& x : p.values) x = U(rng);
  VectorField u(g);
  for (int c = 0; c < 2; ++c) {
    auto fd = g.face_dims(c);
    for (int j = 0; j < fd[1]; ++j)
      for (int i = 0; i < fd[0]; ++i) {
        int a = c == 0 ? i : j;
        if (a == 0 || a == g.dims[c]) continue;
        u.at(c, i, j) = U(rng);
      }
  }
  EXPECT_NEAR(inner(gradient(p), u), -inner(p, divergence(u)), 1e-12);
}

TEST(Strain, SimpleShearHandValue) {
  auto g = box_grid(8);
  auto u = VectorField::sample(g, [](double, double y) { return std::array<double, 2>{y, 0.0}; });
  auto d = strain(u);
  auto dii = second_invariant(d);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    EXPECT_NEAR(d.comp[0][k], 0.0, 1e-13);
    EXPECT_NEAR(d.comp[1][k], 0.5, 1e-13);
    EXPECT_NEAR(d.comp[2][k], 0.5, 1e-13);
    EXPECT_NEAR(d.comp[3][k], 0.0, 1e-13);
    EXPECT_NEAR(dii.values[k], 0.25, 1e-13);
  }
}

TEST(Strain, SymmetricAndNonNegativeInvariant) {
  auto g = box_grid(10, 1.0, true);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  VectorField u(g);
  for (auto& c : u.comp)
    for (auto& x : c) x = U(rng);
  auto d = strain(u);
  auto dii = second_invariant(d);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    EXPECT_EQ(d.comp[1][k], d.comp[2][k]);
    EXPECT_GE(dii.values[k], 0.0);
  }
}

TEST(Stress, ZeroVelocityIsRigidAndUsesMultiplier) {
  auto g = box_grid(6);
  VectorField u(g);
  TensorField m(g);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    m.comp[0][k] = 0.1;
    m.comp[1][k] = 0.2;
    m.comp[2][k] = 0.2;
    m.comp[3][k] = -0.1;
  }
  auto s = stress(u, 1.0, 1.0, &m);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    EXPECT_EQ(s.rigid[k], 1);
    EXPECT_NEAR(std::sqrt(s.second_invariant.values[k]), m.norm_at(k), 1e-14);
  }
  EXPECT_THROW(stress(u, 1.0, 1.0, nullptr), Error);
}

TEST(Stress, SimpleShearClosedForm) {
  auto g = box_grid(8);
  const double gamma = 3.0, g_eff = 0.7, mu_eff = 0.05;
  auto u = VectorField::sample(g, [&](double, double y) { return std::array<double, 2>{gamma * y, 0.0}; });
  auto s = stress(u, g_eff, mu_eff);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    double dii = s.strain_invariant.values[k];
    EXPECT_NEAR(dii, gamma * gamma / 4, 1e-12);
    EXPECT_NEAR(std::sqrt(s.second_invariant.values[k]), g_eff + mu_eff * std::sqrt(dii), 1e-12);
  }
}

TEST(Stress, ViscousPartLinearInViscosity) {
  auto g = box_grid(8, 1.0, true);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  VectorField u(g);
  for (auto& c : u.comp)
    for (auto& x : c) x = U(rng);
  auto d = strain(u);
  auto dii = second_invariant(d);
  auto s1 = stress(u, 0.3, 1.0);
  auto s2 = stress(u, 0.3, 2.0);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    if (s1.rigid[k]) continue;
    for (int c = 0; c < 4; ++c) {
      double plastic = 0.3 * d.comp[c][k] / std::sqrt(dii.values[k]);
      EXPECT_NEAR(s2.deviatoric.comp[c][k] - plastic, 2.0 * (s1.deviatoric.comp[c][k] - plastic), 1e-12);
    }
  }
}

TEST(Quadrature, IntegrateUnitField) {
  auto g = StaggeredGrid{{10, 8}, {0.2, 0.25}, {false, false}};
  ScalarField one(g, 1.0);
  EXPECT_NEAR(integrate(one), 2.0 * 2.0, 1e-13);
  Mask2 m({10, 8}, {0.2, 0.25});
  for (int i = 0; i < 10; ++i) m.values[m.index({i, 0})] = 0;
  EXPECT_NEAR(integrate(one, &m), m.fluid_fraction() * 4.0, 1e-13);
}

TEST(Quadrature, L2NormOfSine) {
  double err[2];
  for (int r = 0; r < 2; ++r) {
    auto g = box_grid(8 << r);
    auto f = ScalarField::sample(g, [](double x, double) { return std::sin(2 * M_PI * x); });
    err[r] = std::abs(l2_norm(f) - 1.0 / std::sqrt(2.0));
    EXPECT_LT(err[r], 1e-2);
  }
}

TEST(Quadrature, CellAverageRespectsBlocks) {
  auto g = box_grid(8);
  auto f = ScalarField::sample(g, [](double x, double y) { return x + 10 * y; });
  auto a = cell_average(f, 4, 4);
  EXPECT_EQ(a.grid.dims[0], 2);
  EXPECT_NEAR(a.at(0, 0), 0.25 + 2.5, 1e-13);
  EXPECT_NEAR(a.at(1, 1), 0.75 + 7.5, 1e-13);
  EXPECT_THROW(cell_average(f, 3, 3), Error);
}
