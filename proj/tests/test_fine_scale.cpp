#include <gtest/gtest.h>

#include <cmath>

#include "twoscale/fine_scale.hpp"

using namespace twoscale;

namespace {

Domain2 domain(double eps, int gps = 8) { return Domain2(Box2{{0.0, 0.0}, {1.0, 1.0}}, eps, default_geometry(4), gps); }

/// Gradient part plus a wall-tangent rotational part of amplitude `amp`.
std::array<double, 2> mixed_forcing(double x, double y, double amp) {
  double s = std::sin(M_PI * x), t = std::sin(M_PI * y);
  return {1.0 + x + amp * M_PI * s * s * std::sin(2.0 * M_PI * y), -amp * M_PI * std::sin(2.0 * M_PI * x) * t * t};
}

VectorField forcing(const Domain2& dom, double amp) {
  return sample_forcing(dom, [&](double x, double y) { return mixed_forcing(x, y, amp); });
}

double max_abs(const VectorField& u) {
  double m = 0.0;
  for (const auto& c : u.comp)
    for (double v : c) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST(FineSolve, ZeroForcingGivesRest) {
  Domain2 dom = domain(0.5);
  VectorField f = forcing(dom, 0.0);
  for (auto& c : f.comp) std::fill(c.begin(), c.end(), 0.0);
  FlowSolution s = solve_fine(dom, f, 0.1, 1.0);
  EXPECT_EQ(max_abs(s.u), 0.0);
  RigidZoneReport rz = rigid_zones(s);
  EXPECT_EQ(rz.flowing_cells, 0u);
  for (std::size_t k = 0; k < s.mask.size(); ++k)
    if (s.mask.fluid(k)) EXPECT_EQ(rz.rigid.values[k], 1);
}

TEST(FineSolve, ZeroYieldIsStokes) {
  Domain2 dom = domain(0.5);
  VectorField f = forcing(dom, 1.0);
  FlowSolution s = solve_fine(dom, f, 0.0, 1.0);
  double ed = dom.eps_delta();
  StokesResult st = solve_stokes(s.mask, f, 2.0 * ed * ed, Boundary::dirichlet0());
  double diff = 0.0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < s.u.comp[c].size(); ++k) diff = std::max(diff, std::abs(s.u.comp[c][k] - st.u.comp[c][k]));
  EXPECT_LE(diff, 1e-12 * max_abs(st.u));
  EXPECT_EQ(rigid_zones(s).rigid_cells, 0u);
}

TEST(FineSolve, WeakForcingIsRigid) {
  Domain2 dom = domain(0.5);
  FlowSolution s = solve_fine(dom, forcing(dom, 0.02), 0.1, 1.0);
  EXPECT_EQ(max_abs(s.u), 0.0);
  EXPECT_EQ(rigid_zones(s).flowing_cells, 0u);
}

TEST(FineSolve, ExtendedVelocityIsDivergenceFree) {
  Domain2 dom = domain(0.5);
  FlowSolution s = solve_fine(dom, forcing(dom, 1.0), 0.1, 1.0);
  EXPECT_GT(max_abs(s.u), 0.0);
  EXPECT_LE(s.div_max, 1e-10 * max_abs(s.u) / s.mask.spacing[0]);
  // zero on solid faces and on the outer walls
  for (int j = 0; j < s.mask.dims[1]; ++j) {
    EXPECT_EQ(s.u.at(0, 0, j), 0.0);
    EXPECT_EQ(s.u.at(0, s.mask.dims[0], j), 0.0);
  }
  for (int j = 0; j < s.mask.dims[1]; ++j)
    for (int i = 1; i < s.mask.dims[0]; ++i)
      if (!s.mask.fluid({i, j}) || !s.mask.fluid({i - 1, j})) EXPECT_EQ(s.u.at(0, i, j), 0.0);
}

TEST(FineSolve, ThresholdLawOnModerateForcing) {
  Domain2 dom = domain(0.5);
  SolverConfig cfg;
  cfg.tol_coupling = 1e-8;
  FlowSolution s = solve_fine(dom, forcing(dom, 1.0), 0.1, 1.0, cfg);
  RigidZoneReport rz = rigid_zones(s);
  EXPECT_GT(rz.rigid_cells, 0u);
  EXPECT_GT(rz.flowing_cells, 0u);
  EXPECT_LE(rz.rigid_gradient, 10.0 * cfg.tol_vi);
  EXPECT_LE(rz.relation_residual, 1e-6);
}

TEST(FineSolve, MissingMultiplierRejected) {
  Domain2 dom = domain(0.5);
  FlowSolution s = solve_fine(dom, forcing(dom, 1.0), 0.0, 1.0);
  AlVariables empty;
  try {
    rigid_zones(s.mask, Boundary::dirichlet0(), s.u, empty, s.g_eff, s.mu_eff);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingMultiplier);
  }
}

TEST(FineSolve, NegativeYieldRejected) {
  Domain2 dom = domain(0.5);
  EXPECT_THROW(solve_fine(dom, forcing(dom, 1.0), -1.0, 1.0), Error);
}

TEST(AprioriNorms, RestStateKeepsHydrostaticPressure) {
  Domain2 dom = domain(0.5);
  FlowSolution s = solve_fine(dom, forcing(dom, 0.0), 0.1, 1.0);
  AprioriNorms n = apriori_norms(s);
  EXPECT_EQ(n.u_l2, 0.0);
  EXPECT_EQ(n.scaled_grad_l2, 0.0);
  EXPECT_GT(n.p_l2, 0.0);
}

TEST(AprioriNorms, ScalingForcingDownIsSubadditive) {
  Domain2 dom = domain(0.5);
  VectorField f = forcing(dom, 1.0);
  VectorField half = f;
  for (auto& c : half.comp)
    for (double& v : c) v *= 0.5;
  double full = apriori_norms(solve_fine(dom, f, 0.1, 1.0)).u_l2;
  double reduced = apriori_norms(solve_fine(dom, half, 0.1, 1.0)).u_l2;
  EXPECT_GT(full, 0.0);
  EXPECT_LE(reduced, 0.5 * full * (1.0 + 1e-9));
}

TEST(ExtendPressure, NoObstaclesKeepsMeanFreePressure) {
  Mask2 m({6, 5}, {1.0, 1.0}, true);
  ScalarField p(StaggeredGrid::from_mask(m));
  double mean = 0.0;
  for (std::size_t k = 0; k < p.values.size(); ++k) mean += (p.values[k] = std::sin(0.7 * k));
  mean /= p.values.size();
  for (double& v : p.values) v -= mean;
  ScalarField e = extend_pressure(m, p);
  for (std::size_t k = 0; k < p.values.size(); ++k) EXPECT_NEAR(e.values[k], p.values[k], 1e-15);
}

TEST(ExtendPressure, ConstantBecomesZero) {
  Mask2 m({6, 6}, {1.0, 1.0}, true);
  m.values[m.index({2, 2})] = 0;
  m.values[m.index({3, 2})] = 0;
  ScalarField p(StaggeredGrid::from_mask(m), 3.5);
  ScalarField e = extend_pressure(m, p);
  for (double v : e.values) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(ExtendPressure, SingleObstacleTakesRingAverage) {
  Mask2 m({3, 3}, {1.0, 1.0}, true);
  m.values[m.index({1, 1})] = 0;
  ScalarField p(StaggeredGrid::from_mask(m), 0.0);
  p.at(0, 1) = 1.0;
  p.at(2, 1) = 2.0;
  p.at(1, 0) = 3.0;
  p.at(1, 2) = 4.0;
  p.at(1, 1) = 0.0;
  ScalarField e = extend_pressure(m, p);
  double mean = (1.0 + 2.0 + 3.0 + 4.0 + 2.5) / 9.0;
  EXPECT_NEAR(e.at(1, 1) + mean, 2.5, 1e-14);
  EXPECT_NEAR(e.at(0, 1) + mean, 1.0, 1e-14);
  double total = 0.0;
  for (double v : e.values) total += v;
  EXPECT_NEAR(total, 0.0, 1e-13);
}

TEST(Poincare, UnitSquareMatchesLowestEigenvalue) {
  Mask2 m({64, 64}, {1.0 / 64, 1.0 / 64}, true);
  EXPECT_NEAR(poincare_constant(m), 1.0 / (M_PI * std::sqrt(2.0)), 0.02 / (M_PI * std::sqrt(2.0)));
}

TEST(Poincare, StableUnderRefinement) {
  // obstacle corners limit the order to about 1.6, so compare in the resolved regime
  double coarse = poincare_constant(domain(0.5, 32));
  double fine = poincare_constant(domain(0.5, 64));
  EXPECT_LE(std::abs(coarse - fine), 0.01 * fine);
}

TEST(Poincare, ScalesLinearlyWithSmallestPeriod) {
  std::vector<double> lx, ly;
  for (double eps : {0.5, 0.25, 0.125}) {
    Domain2 dom = domain(eps);
    lx.push_back(std::log(dom.eps_delta()));
    ly.push_back(std::log(poincare_constant(dom)));
  }
  double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3, sxy = 0, sxx = 0;
  for (int k = 0; k < 3; ++k) {
    sxy += (lx[k] - mx) * (ly[k] - my);
    sxx += (lx[k] - mx) * (lx[k] - mx);
  }
  double slope = sxy / sxx;
  EXPECT_GE(slope, 0.85);
  EXPECT_LE(slope, 1.15);
}

TEST(Poincare, BoundsFineVelocity) {
  Domain2 dom = domain(0.5);
  FlowSolution s = solve_fine(dom, forcing(dom, 1.0), 0.0, 1.0);
  AprioriNorms n = apriori_norms(s);
  double cp = poincare_constant(dom);
  // ‖u‖ ≤ C_P ‖∇u‖ for fields vanishing on the obstacles
  EXPECT_LE(n.u_l2, cp * n.scaled_grad_l2 / dom.eps_delta() * (1.0 + 1e-9));
}
