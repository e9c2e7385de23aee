#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "twoscale/effective_law.hpp"

using namespace twoscale;

namespace {

CellConfig small_config(int ny = 8, int nz = 8) {
  CellConfig cfg;
  cfg.y_resolution = ny;
  cfg.z_resolution = nz;
  return cfg;
}

double rel(const Vec2& a, const Vec2& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST(LinearCell, RejectsObstacleFreeZCell) {
  auto g = default_geometry(4);
  g.z_cell.obstacles.clear();
  try {
    solve_linear_cell(g, 1.0, small_config());
    FAIL() << "expected InvalidGeometry";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidGeometry);
  }
}

TEST(LinearCell, AxisSwapSymmetricGeometryGivesIsotropicK) {
  auto r = solve_linear_cell(default_geometry(4), 1.0, small_config());
  const Mat2& K = r.K;
  EXPECT_GT(K(0, 0), 0.0);
  EXPECT_NEAR(K(1, 1), K(0, 0), 1e-6 * K(0, 0));
  EXPECT_LE(std::abs(K(0, 1)), 1e-6 * K(0, 0));
  EXPECT_LE(std::abs(K(1, 0)), 1e-6 * K(0, 0));
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (K + K.transpose()));
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(LinearCell, AnisotropicGeometryStaysSymmetric) {
  auto g = default_geometry(4);
  g.z_cell.obstacles = {Box2{{0.25, 0.125}, {0.25, 0.75}}};
  auto r = solve_linear_cell(g, 1.0, small_config());
  EXPECT_NEAR(r.K(0, 1), r.K(1, 0), 1e-10 * r.K.norm());
  EXPECT_GT(std::abs(r.K(0, 0) - r.K(1, 1)), 1e-3 * r.K.norm());
}

TEST(LinearCell, SmallerZObstacleEnlargesPermeability) {
  auto big = default_geometry(4);
  auto small = big;
  small.z_cell.obstacles = {Box2{{0.375, 0.375}, {0.25, 0.25}}};
  auto kb = solve_linear_cell(big, 1.0, small_config());
  auto ks = solve_linear_cell(small, 1.0, small_config());
  EXPECT_GT(ks.K(0, 0), kb.K(0, 0) * (1.0 + 1e-3));
}

TEST(LinearCell, WithoutYObstacleReducesToZPermeability) {
  auto g = default_geometry(4);
  g.y_cell.obstacles.clear();
  auto cfg = small_config();
  auto r = solve_linear_cell(g, 0.7, cfg);
  ZCell z(g.z_cell, cfg.z_resolution);
  KktProjector P(z.op(), 2.0 * 0.7, 1e-12, 5);
  for (int k = 0; k < 2; ++k) {
    Vec2 expect = z.integral(P.solve(z.unit(k))) / z.fluid_volume();
    EXPECT_LE(rel(Vec2(r.K.col(k)), expect), 1e-10);
  }
}

TEST(LinearCell, ViscosityScalesInversely) {
  auto g = default_geometry(4);
  auto a = solve_linear_cell(g, 1.0, small_config());
  auto b = solve_linear_cell(g, 2.5, small_config());
  EXPECT_LE((a.K - 2.5 * b.K).norm(), 1e-10 * a.K.norm());
}

TEST(LinearCell, SolutionsSatisfyConstraints) {
  auto g = default_geometry(4);
  auto cfg = small_config();
  auto r = solve_linear_cell(g, 1.0, cfg);
  ZCell z(g.z_cell, cfg.z_resolution);
  for (const auto& s : r.chi) {
    double vmax = s.chi.cwiseAbs().maxCoeff();
    ASSERT_GT(vmax, 0.0);
    EXPECT_LE(s.div_z, 1e-10 * vmax / z.mask().spacing[0]);
    EXPECT_LE(s.div_y, 1e-10 * vmax * z.fluid_volume() / (1.0 / cfg.y_resolution));
    for (Eigen::Index f = 0; f < z.op().faces(); ++f)
      if (!z.op().face_active(f)) EXPECT_EQ(s.chi.row(f).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(s.pi.rows(), z.op().cells());
    EXPECT_EQ(s.q.size(), s.chi.cols());
  }
}

TEST(NonlinearCell, ZeroForcingGivesRest) {
  auto g = default_geometry(4);
  for (auto strat : {CellStrategy::Product, CellStrategy::TwoLevel}) {
    auto s = solve_nonlinear_cell(g, Vec2::Zero(), 1.0, 1.0, strat, small_config());
    EXPECT_EQ(s.flux.norm(), 0.0) << to_string(strat);
    if (s.chi.size()) EXPECT_EQ(s.chi.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(NonlinearCell, ZeroYieldIsLinearSuperposition) {
  auto g = default_geometry(4);
  auto cfg = small_config();
  cfg.solver.tol_coupling = 1e-10;
  cfg.solver.tol_vi = 1e-10;
  auto lin = solve_linear_cell(g, 1.0, cfg);
  Vec2 lambda(1.3, -0.4);
  auto s = solve_nonlinear_cell(g, lambda, 0.0, 1.0, CellStrategy::Product, cfg);
  Eigen::MatrixXd expect = lambda[0] * lin.chi[0].chi + lambda[1] * lin.chi[1].chi;
  EXPECT_LE((s.chi - expect).cwiseAbs().maxCoeff(), 1e-8 * expect.cwiseAbs().maxCoeff());
  EXPECT_LE(rel(s.flux, lin.K * lambda), 1e-8);
  auto t = solve_nonlinear_cell(g, lambda, 0.0, 1.0, CellStrategy::TwoLevel, cfg);
  EXPECT_LE(rel(t.flux, lin.K * lambda), 1e-6);
}

TEST(NonlinearCell, BelowYieldIsExactlyRigid) {
  auto g = default_geometry(4);
  auto cfg = small_config(4, 8);
  CellLawEvaluator ev(g, 1.0, 1.0, CellStrategy::Product, cfg);
  double lc = ev.estimate_yield_threshold(Vec2(1.0, 0.0));
  auto s = ev.solve(Vec2(0.9 * lc, 0.0), 1.0);
  EXPECT_TRUE(s.converged);
  EXPECT_EQ(s.chi.cwiseAbs().maxCoeff(), 0.0);
  auto f = ev.solve(Vec2(1.2 * lc, 0.0), 1.0);
  EXPECT_GT(f.flux.norm(), 1e-6 * (ev.linear_K() * Vec2(lc, 0.0)).norm());
}

TEST(NonlinearCell, VariationalInequalityResidualOnProbeSet) {
  auto g = default_geometry(4);
  auto cfg = small_config();
  cfg.solver.tol_coupling = 1e-9;
  cfg.solver.tol_vi = 1e-9;
  ProductCellSolver S(g, 1.0, cfg);
  Vec2 lambda(12.0, 5.0);
  auto s = S.solve(lambda, 1.0);
  ASSERT_TRUE(s.converged);
  Vec chi = Eigen::Map<const Vec>(s.chi.data(), s.chi.size());
  auto lin = solve_linear_cell(g, 1.0, cfg);
  std::vector<Vec> probes{Vec::Zero(chi.size()), 2.0 * chi};
  for (const auto& c : lin.chi) probes.push_back(Eigen::Map<const Vec>(c.chi.data(), c.chi.size()));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Vec r = S.random_admissible(seed);
    probes.push_back(r * (chi.cwiseAbs().maxCoeff() / r.cwiseAbs().maxCoeff()));
  }
  detail::ProductAlOps ops{S.cell()};
  double scale = ops.pairing(S.cell().forcing(lambda), chi);
  ASSERT_GT(scale, 0.0);
  EXPECT_LE(S.residual_vi(s, 1.0, probes), 1e-6 * scale);
  EXPECT_LE(s.div_z, 1e-9 * s.chi.cwiseAbs().maxCoeff() * cfg.z_resolution);
}

TEST(NonlinearCell, ProbeOutsideAdmissibleSetRejected) {
  auto g = default_geometry(4);
  ProductCellSolver S(g, 1.0, small_config());
  auto s = S.solve(Vec2(20.0, 0.0), 1.0);
  Vec bad = Vec::Ones(s.chi.size());
  EXPECT_THROW(S.residual_vi(s, 1.0, {bad}), Error);
}

TEST(NonlinearCell, StrategiesAgree) {
  auto g = default_geometry(4);
  CellLawEvaluator P(g, 1.0, 1.0, CellStrategy::Product, small_config());
  CellLawEvaluator T(g, 1.0, 1.0, CellStrategy::TwoLevel, small_config());
  for (Vec2 lambda : {Vec2(6.0, 0.0), Vec2(8.0, 3.0), Vec2(-15.0, 4.0), Vec2(0.0, 30.0), Vec2(50.0, -50.0)}) {
    Vec2 kp = P.eval_K(lambda), kt = T.eval_K(lambda);
    ASSERT_GT(kp.norm(), 0.0);
    EXPECT_LE((kp - kt).norm() / kp.norm(), 0.05) << lambda.transpose();
  }
}

TEST(EvalK, ZeroYieldMatchesLinearPermeability) {
  auto g = default_geometry(4);
  CellLawEvaluator ev(g, 1.0, 0.0, CellStrategy::Product, small_config());
  Vec2 lambda(0.3, 2.0);
  EXPECT_LE(rel(ev.eval_K(lambda), ev.linear_K() * lambda), 1e-6);
  EXPECT_EQ(ev.eval_K(Vec2::Zero()).norm(), 0.0);
}

TEST(EvalK, OddInLambdaForCentrallySymmetricGeometry) {
  auto g = default_geometry(4);
  CellLawEvaluator ev(g, 1.0, 1.0, CellStrategy::Product, small_config());
  for (Vec2 lambda : {Vec2(9.0, 2.0), Vec2(-3.0, 14.0)}) {
    Vec2 a = ev.eval_K(lambda), b = ev.eval_K(-lambda);
    EXPECT_LE((a + b).norm(), 1e-5 * a.norm());
  }
}

TEST(EvalK, MemoReturnsStoredValueForNearbyKeys) {
  auto g = default_geometry(4);
  CellLawEvaluator ev(g, 1.0, 1.0, CellStrategy::Product, small_config());
  Vec2 lambda(10.0, 1.0);
  Vec2 a = ev.eval_K(lambda);
  std::size_t n = ev.solves();
  Vec2 b = ev.eval_K(lambda * (1.0 + 1e-5));
  EXPECT_EQ(ev.solves(), n);
  EXPECT_EQ(a, b);
  ev.eval_K(lambda * 1.01);
  EXPECT_EQ(ev.solves(), n + 1);
}

TEST(EvalK, MonotoneOnSampledPairs) {
  auto g = default_geometry(4);
  CellLawEvaluator ev(g, 1.0, 1.0, CellStrategy::Product, small_config(4, 8));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-25.0, 25.0);
  std::vector<std::pair<Vec2, Vec2>> pts;
  for (int k = 0; k < 12; ++k) {
    Vec2 l(U(rng), U(rng));
    pts.emplace_back(l, ev.eval_K(l));
  }
  double kscale = ev.linear_K().norm() * 25.0 * 25.0;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      double d = (pts[a].second - pts[b].second).dot(pts[a].first - pts[b].first);
      EXPECT_GE(d, -1e-6 * kscale);
    }
}

TEST(EvalK, SmallYieldApproachesLinearLaw) {
  auto g = default_geometry(4);
  Vec2 lambda(20.0, 7.0);
  double gsmall = 1e-3 * 1.0 * lambda.norm();
  CellLawEvaluator ev(g, 1.0, gsmall, CellStrategy::Product, small_config());
  EXPECT_LE(rel(ev.eval_K(lambda), ev.linear_K() * lambda), 0.05);
}

TEST(YieldThreshold, ZeroYieldHasNoBracket) {
  CellLawEvaluator ev(default_geometry(4), 1.0, 0.0, CellStrategy::Product, small_config());
  try {
    ev.estimate_yield_threshold(Vec2(1.0, 0.0));
    FAIL() << "expected NoBracket";
  } catch (const NoBracket& e) {
    EXPECT_EQ(e.lower_bound(), 0.0);
  }
}

TEST(YieldThreshold, HomogeneousOfDegreeOneAndAxisSymmetric) {
  auto g = default_geometry(4);
  auto cfg = small_config(4, 8);
  CellLawEvaluator ev1(g, 1.0, 1.0, CellStrategy::Product, cfg);
  CellLawEvaluator ev2(g, 1.0, 2.0, CellStrategy::Product, cfg);
  double a = ev1.estimate_yield_threshold(Vec2(1.0, 0.0));
  double b = ev2.estimate_yield_threshold(Vec2(1.0, 0.0));
  EXPECT_NEAR(b / a, 2.0, 0.04);
  double c = ev1.estimate_yield_threshold(Vec2(0.0, 1.0));
  EXPECT_NEAR(c / a, 1.0, 0.02);
  // A plug between obstacle rows sliding on two walls: λ·(channel width) = 2g.
  EXPECT_NEAR(a, 4.0, 0.04 * 4.0);
}

TEST(PolarTable, ReproducesPiecewiseLinearRadialLaw) {
  auto law = [](const Vec2& x) {
    double r = x.norm();
    return r <= 2.0 ? Vec2(Vec2::Zero()) : Vec2((r - 2.0) * x / r);
  };
  PolarTable t(16, {0.0, 0.5, 1.0, 2.0, 4.0}, [](const Vec2&) { return 2.0; }, law);
  for (Vec2 x : {Vec2(1.0, 0.3), Vec2(3.0, -1.0), Vec2(-5.0, 2.0), Vec2(20.0, 11.0)})
    EXPECT_LE((t(x) - law(x)).norm(), 1e-12 * (1.0 + x.norm())) << x.transpose();
  EXPECT_EQ(t(Vec2::Zero()).norm(), 0.0);
}

TEST(PolarTable, RejectsBadRadii) {
  auto th = [](const Vec2&) { return 1.0; };
  auto v = [](const Vec2& x) { return x; };
  EXPECT_THROW(PolarTable(16, {0.5, 1.0}, th, v), Error);
  EXPECT_THROW(PolarTable(16, {0.0, 1.0, 1.0}, th, v), Error);
  EXPECT_THROW(PolarTable(2, {0.0, 1.0}, th, v), Error);
}

TEST(EffectiveLawFile, RoundTripIsByteStable) {
  EffectiveLaw law;
  law.geometry_hash = "0123456789abcdef";
  law.g = 0.5;
  law.mu = 1.25;
  law.y_resolution = 8;
  law.z_resolution = 16;
  law.strategy = "two_level";
  law.normalization = {0.75, 0.75, 1.0, 1.0};
  Mat2 K;
  K << 0.1, 0.01, 0.01, 0.2;
  law.linear_K = K;
  law.yield_thresholds = {{0.0, 1.9}, {1.5707963267948966, 2.1}};
  PolarTable t(8, {0.0, 1.0, 2.0}, [](const Vec2&) { return 3.0; },
               [](const Vec2& x) { return Vec2(0.1 * x[0], 0.2 * x[1] + 1.0 / 3.0); });
  t.fill();
  law.set_polar(t);
  law.memo[EffectiveLaw::quantize(Vec2(1.0, 2.0))] = {Vec2(1.0, 2.0), Vec2(0.3, 0.4)};
  std::ostringstream a;
  law.write(a);
  std::istringstream in(a.str());
  EffectiveLaw back = EffectiveLaw::read(in);
  std::ostringstream b;
  back.write(b);
  EXPECT_EQ(a.str(), b.str());
  Vec2 x(2.2, -0.7);
  EXPECT_LE((back.evaluate(x) - law.evaluate(x)).norm(), 1e-15);
  EXPECT_EQ(a.str().rfind("twoscale-effective-law 1\n", 0), 0u);
}

TEST(EffectiveLawFile, RejectsUnknownVersion) {
  std::istringstream in("twoscale-effective-law 99\n");
  EXPECT_THROW(EffectiveLaw::read(in), Error);
}

TEST(EffectiveLaw, TabulatedLawInterpolatesDirectSolves) {
  auto g = default_geometry(4);
  auto cfg = small_config(4, 8);
  CellLawEvaluator ev(g, 1.0, 1.0, CellStrategy::TwoLevel, cfg);
  ev.tabulate(72);
  const EffectiveLaw& law = ev.law();
  ASSERT_TRUE(law.has_polar());
  EXPECT_EQ(law.evaluate(Vec2::Zero()).norm(), 0.0);
  for (Vec2 lambda : {Vec2(9.0, 1.0), Vec2(-3.0, 20.0), Vec2(30.0, -7.0)}) {
    Vec2 direct = ev.two_level().solve(lambda, 1.0).flux;
    EXPECT_LE(rel(law.evaluate(lambda), direct), 0.02) << lambda.transpose();
  }
  EXPECT_NEAR(law.normalization.conversion(), 0.75 * 0.75, 1e-12);
}
