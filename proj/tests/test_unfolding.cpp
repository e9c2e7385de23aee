#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twoscale/unfolding.hpp"

using namespace twoscale;

namespace {

Domain2 domain(double eps, int sub = 4, int gps = 4) {
  return Domain2(Box2{{0, 0}, {1, 1}}, eps, default_geometry(sub), gps);
}

StaggeredGrid grid_of(const Domain2& d) { return StaggeredGrid{d.grid_dims(), d.spacing(), {false, false}}; }

}  // namespace

TEST(UnfoldEps, ConstantStaysConstant) {
  auto d = domain(0.25);
  ScalarField f(grid_of(d), 3.25);
  auto t = unfold_eps(f, d);
  for (double v : t.values) EXPECT_EQ(v, 3.25);
  EXPECT_EQ(t.macro_dims[0], 4);
}

TEST(UnfoldEps, PeriodicFunctionMapsToCellFunction) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  const double eps = d.epsilon;
  auto phi = [](double y0, double y1) { return std::sin(2 * M_PI * y0) + y1 * y1; };
  // Sample φ(x/ε) through the micro index so that the field is exactly periodic.
  int m = d.cells_per_eps_cell(0);
  ScalarField f(g);
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i) f.at(i, j) = phi((i % m + 0.5) / m, (j % m + 0.5) / m);
  auto t = unfold_eps(f, eps, {1.0, 1.0});
  for (int ky = 0; ky < t.macro_dims[1]; ++ky)
    for (int kx = 0; kx < t.macro_dims[0]; ++kx)
      for (int yy = 0; yy < t.y_dims[1]; ++yy)
        for (int yx = 0; yx < t.y_dims[0]; ++yx) {
          auto y = t.y_point(yx, yy);
          ASSERT_EQ(t.at1(kx, ky, yx, yy), phi(y[0], y[1]));
        }
}

TEST(UnfoldEps, CoordinateFunctionPointwise) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  auto f = ScalarField::sample(g, [](double x, double) { return x; });
  auto t = unfold_eps(f, d);
  for (int ky = 0; ky < t.macro_dims[1]; ++ky)
    for (int kx = 0; kx < t.macro_dims[0]; ++kx)
      for (int yy = 0; yy < t.y_dims[1]; ++yy)
        for (int yx = 0; yx < t.y_dims[0]; ++yx) {
          double expect = d.epsilon * kx + d.epsilon * t.y_point(yx, yy)[0];
          ASSERT_NEAR(t.at1(kx, ky, yx, yy), expect, 1e-14);
        }
}

TEST(UnfoldEps, NotNestedGridRejected) {
  StaggeredGrid g{{30, 30}, {1.0 / 30, 1.0 / 30}, {false, false}};
  ScalarField f(g, 1.0);
  try {
    unfold_eps(f, 0.25, {1.0, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GridNotNested);
  }
}

TEST(UnfoldEps, LambdaRegionIsZero) {
  // 10 cells with 4 per eps-cell: the third macro cell is partial.
  StaggeredGrid g{{10, 8}, {0.0625, 0.0625}, {false, false}};
  ScalarField f(g, 1.0);
  auto t = unfold_eps(f, 0.25, {1.0, 1.0});
  EXPECT_EQ(t.macro_dims[0], 3);
  EXPECT_EQ(t.lambda_region[2], 1);
  for (int yy = 0; yy < 4; ++yy)
    for (int yx = 0; yx < 4; ++yx) EXPECT_EQ(t.at1(2, 0, yx, yy), 0.0);
  EXPECT_EQ(t.at1(1, 1, 3, 3), 1.0);
}

TEST(UnfoldDelta, ConstantInYStaysConstant) {
  auto d = domain(0.5);
  ScalarField f(grid_of(d), -2.0);
  auto t = unfold_delta(unfold_eps(f, d), d.geometry);
  for (double v : t.values) EXPECT_EQ(v, -2.0);
}

TEST(UnfoldDelta, ZPeriodicFunctionIndependentOfSubcell) {
  auto d = domain(0.5);
  auto g = grid_of(d);
  int r = d.grid_per_subcell;
  ScalarField f(g);
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i) f.at(i, j) = std::cos(2 * M_PI * (i % r + 0.5) / r) + (j % r);
  auto t = unfold_delta(unfold_eps(f, d), d.geometry);
  for (int ky = 0; ky < t.macro_dims[1]; ++ky)
    for (int kx = 0; kx < t.macro_dims[0]; ++kx)
      for (int ly = 0; ly < t.sub_dims[1]; ++ly)
        for (int lx = 0; lx < t.sub_dims[0]; ++lx)
          for (int zy = 0; zy < r; ++zy)
            for (int zx = 0; zx < r; ++zx)
              ASSERT_EQ(t.at2(kx, ky, lx, ly, zx, zy), t.at2(0, 0, 0, 0, zx, zy));
}

TEST(UnfoldDelta, CompositionIdentityOnCoordinate) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  auto f = ScalarField::sample(g, [](double x, double) { return x; });
  auto t = unfold_delta(unfold_eps(f, d), d.geometry);
  const double eps = d.epsilon, dl = d.delta();
  for (int ky = 0; ky < t.macro_dims[1]; ++ky)
    for (int kx = 0; kx < t.macro_dims[0]; ++kx)
      for (int ly = 0; ly < t.sub_dims[1]; ++ly)
        for (int lx = 0; lx < t.sub_dims[0]; ++lx)
          for (int zy = 0; zy < t.z_dims[1]; ++zy)
            for (int zx = 0; zx < t.z_dims[0]; ++zx) {
              double z = t.z_point(zx, zy)[0];
              double expect = eps * kx + eps * dl * lx + eps * dl * z;
              ASSERT_NEAR(t.at2(kx, ky, lx, ly, zx, zy), expect, 1e-14);
            }
}

TEST(UnfoldDelta, RequiresNestedSubdivision) {
  auto d = domain(0.5);
  ScalarField f(grid_of(d), 1.0);
  auto t = unfold_eps(f, d);
  EXPECT_THROW(unfold_delta(t, {3, 3}, {1.0, 1.0}), Error);
}

TEST(Means, MeanYIsCellAverage) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarField f(g);
  for (auto& v : f.values) v = U(rng);
  auto m = mean_Y(unfold_eps(f, d));
  int p = d.cells_per_eps_cell(0);
  auto ca = cell_average(f, p, p);
  for (std::size_t k = 0; k < m.values.size(); ++k) EXPECT_NEAR(m.values[k], ca.values[k], 1e-15);
}

TEST(Means, MeanOfSineVanishes) {
  auto d = domain(0.5);
  auto g = grid_of(d);
  int p = d.cells_per_eps_cell(0);
  ScalarField f(g);
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i) f.at(i, j) = std::sin(2 * M_PI * (i % p + 0.5) / p);
  auto m = mean_Y(unfold_eps(f, d));
  for (double v : m.values) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Means, MeanZThenMeanYIsCellAverage) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 1);
  ScalarField f(g);
  for (auto& v : f.values) v = U(rng);
  auto mm = mean_Y(mean_Z(unfold_delta(unfold_eps(f, d), d.geometry)));
  int p = d.cells_per_eps_cell(0);
  auto ca = cell_average(f, p, p);
  for (std::size_t k = 0; k < mm.values.size(); ++k) {
    double direct = 0.0;
    int kx = static_cast<int>(k) % mm.grid.dims[0], ky = static_cast<int>(k) / mm.grid.dims[0];
    for (int j = 0; j < p; ++j)
      for (int i = 0; i < p; ++i) direct += f.at(kx * p + i, ky * p + j);
    direct /= p * p;
    EXPECT_NEAR(mm.values[k], direct, 1e-14);
    EXPECT_NEAR(mm.values[k], ca.values[k], 1e-14);
  }
}

TEST(IntegralIdentity, ExactForUnitRandomAndIndicator) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  EXPECT_EQ(check_integral_identity(ScalarField(g, 1.0), d), 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarField f(g);
  double l1 = 0.0;
  for (auto& v : f.values) {
    v = U(rng);
    l1 += std::abs(v) * g.cell_area();
  }
  EXPECT_LE(check_integral_identity(f, d), 1e-12 * l1);
  ScalarField ind(g);
  int p = d.cells_per_eps_cell(0);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) ind.at(p + i, j) = 1.0;
  EXPECT_LE(check_integral_identity(ind, d), 1e-15);
}

TEST(GradientIdentities, LinearSmoothAndZero) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  auto lin = ScalarField::sample(g, [](double x, double y) { return 2 * x - 3 * y; });
  auto r1 = check_gradient_identities(lin, d);
  EXPECT_LE(r1.gap_y, 1e-12);
  EXPECT_LE(r1.gap_z, 1e-12);
  auto s = ScalarField::sample(g, [](double x, double y) { return std::sin(2 * M_PI * x) * std::sin(2 * M_PI * y); });
  auto r2 = check_gradient_identities(s, d);
  EXPECT_LE(r2.gap_y, 1e-12);
  EXPECT_LE(r2.gap_z, 1e-12);
  EXPECT_GT(r2.compared, 0u);
  auto r3 = check_gradient_identities(ScalarField(g), d);
  EXPECT_EQ(r3.gap_y, 0.0);
  EXPECT_EQ(r3.gap_z, 0.0);
}

TEST(Properties, LinearityMultiplicativityNorm) {
  auto d = domain(0.25);
  auto g = grid_of(d);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarField f(g), h(g), comb(g), prod(g);
  for (std::size_t k = 0; k < f.values.size(); ++k) {
    f.values[k] = U(rng);
    h.values[k] = U(rng);
    comb.values[k] = 2.0 * f.values[k] - 0.5 * h.values[k];
    prod.values[k] = f.values[k] * h.values[k];
  }
  auto tf = unfold_eps(f, d), th = unfold_eps(h, d);
  auto tc = unfold_eps(comb, d), tp = unfold_eps(prod, d);
  double norm2 = 0.0;
  for (std::size_t k = 0; k < tf.values.size(); ++k) {
    EXPECT_EQ(tc.values[k], 2.0 * tf.values[k] - 0.5 * th.values[k]);
    EXPECT_EQ(tp.values[k], tf.values[k] * th.values[k]);
    norm2 += tf.values[k] * tf.values[k];
  }
  double unfolded_sq = norm2 * d.epsilon * d.epsilon / static_cast<double>(tf.micro_count());
  double sq = l2_norm(f) * l2_norm(f);
  EXPECT_NEAR(unfolded_sq, sq, 1e-12 * sq);
}

TEST(VectorUnfold, ComponentsUseFaceLattice) {
  auto d = domain(0.5);
  StaggeredGrid g{d.grid_dims(), d.spacing(), {false, false}};
  auto u = VectorField::sample(g, [](double x, double y) { return std::array<double, 2>{x, y}; });
  auto t = unfold_eps(u, d);
  EXPECT_EQ(t[0].offset[0], 0.0);
  EXPECT_NEAR(t[0].at1(1, 0, 0, 0), 0.5, 1e-15);
  EXPECT_NEAR(t[1].at1(0, 1, 0, 0), 0.5, 1e-15);
}
