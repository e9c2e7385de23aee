#include <gtest/gtest.h>

#include <filesystem>

#include "twoscale/harness.hpp"

using namespace twoscale;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("twoscale_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) { return detail::read_file(p.string()); }

/// Two coarse Stokes levels on a small macro grid.
StudyConfig tiny_study() {
  StudyConfig c;
  c.eps_levels = {0.5, 0.25};
  c.grid_per_subcell = 4;
  c.cell.y_resolution = 8;
  c.macro.dims = {16, 16};
  return c;
}

}  // namespace

TEST(GeometryJson, RoundTrip) {
  CellGeometry2 g = default_geometry(4);
  g.y_cell.obstacles.push_back(Box2{{0.05, 0.05}, {0.1, 0.1}});
  CellGeometry2 back = geometry_from_json(Json::parse(to_json(g).dump()));
  EXPECT_EQ(geometry_hash(back), geometry_hash(g));
}

TEST(GeometryJson, UnknownKeyRejected) {
  Json j = to_json(default_geometry(4));
  j["subdivisions"] = {4, 4};
  try {
    geometry_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
}

TEST(StudyJson, FileOverridesEarlierSettings) {
  auto dir = scratch("cfg");
  StudyConfig c;
  c.g = 0.3;
  c.grid_per_subcell = 16;
  {
    std::ofstream(dir / "study.json") << R"({"g": 0.05, "eps_levels": [0.25, 0.125], "fine": {"tol_vi": 1e-6},
      "forcing": {"preset": "swirl", "amplitude": 2}, "strategy": "product"})";
  }
  apply_config_file((dir / "study.json").string(), c);
  EXPECT_EQ(c.g, 0.05);
  EXPECT_EQ(c.grid_per_subcell, 16);
  EXPECT_EQ(c.eps_levels, (std::vector<double>{0.25, 0.125}));
  EXPECT_EQ(c.fine.tol_vi, 1e-6);
  EXPECT_EQ(c.forcing.preset, "swirl");
  EXPECT_EQ(c.forcing.amplitude, 2.0);
  EXPECT_EQ(c.strategy, CellStrategy::Product);
}

TEST(StudyJson, ResolvedConfigRoundTrips) {
  StudyConfig c;
  c.g = 0.125;
  c.eps_levels = {0.5, 0.25};
  c.fine.tol_coupling = 3e-6;
  Json j = to_json(c);
  StudyConfig back;
  apply_json(j, back);
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(StudyJson, NonDyadicLevelsRejected) {
  StudyConfig c;
  apply_json(Json{{"eps_levels", {0.5, 0.3}}}, c);
  EXPECT_THROW(c.validate(), Error);
}

TEST(GriddedForcing, LoadsAndInterpolates) {
  auto dir = scratch("forcing");
  {
    std::ofstream out(dir / "f.csv");
    out << "i,j,f1,f2\n";
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i) out << i << "," << j << "," << 0.5 * i << "," << -1.0 * j << "\n";
  }
  StudyConfig c;
  apply_json(Json{{"forcing", {{"file", "f.csv"}}}}, c, dir.string());
  ASSERT_EQ(c.forcing.preset, "gridded");
  Forcing f = make_forcing(c.forcing, c.omega);
  Vec2 v = f(0.25, 0.75);
  EXPECT_NEAR(v[0], 0.25, 1e-15);
  EXPECT_NEAR(v[1], -1.5, 1e-15);
}

TEST(Export, FieldCsvRoundTrips) {
  StaggeredGrid g{{7, 5}, {0.125, 0.2}, {false, false}};
  ScalarField f = ScalarField::sample(g, [](double x, double y) { return std::exp(x) * std::sin(3.0 * y) / 3.0; });
  ScalarField back = load_field_csv(field_csv(f));
  EXPECT_EQ(back.grid.dims, g.dims);
  EXPECT_DOUBLE_EQ(back.grid.spacing[0], g.spacing[0]);
  EXPECT_DOUBLE_EQ(back.grid.spacing[1], g.spacing[1]);
  for (std::size_t k = 0; k < f.values.size(); ++k) EXPECT_EQ(back.values[k], f.values[k]);
}

TEST(Export, UnfoldedCsvRoundTrips) {
  Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, 0.5, default_geometry(4), 4);
  StaggeredGrid g = StaggeredGrid::from_mask(Mask2(dom.grid_dims(), dom.spacing()));
  ScalarField f = ScalarField::sample(g, [](double x, double y) { return std::cos(7.0 * x) + y / 3.0; });
  UnfoldedField t1 = unfold_eps(f, dom);
  UnfoldedField t2 = unfold_delta(t1, dom.geometry);
  for (const UnfoldedField* t : {&t1, &t2}) {
    int level = 0;
    auto rows = load_unfolded_csv(unfolded_csv(*t), &level);
    EXPECT_EQ(level, t->level);
    ASSERT_EQ(rows.size(), t->values.size());
    // file order follows the macro cells then the micro points, as does the storage
    for (std::size_t k = 0; k < rows.size(); ++k) EXPECT_EQ(rows[k].value, t->values[k]);
  }
}

TEST(Export, MaskFormats) {
  Mask2 m({3, 2}, {1.0, 1.0});
  m.values[m.index({1, 0})] = 0;
  EXPECT_EQ(mask_pgm(m), "P2\n3 2\n255\n255 255 255\n255 0 255\n");
  EXPECT_EQ(mask_csv(m), "i,j,fluid\n0,0,1\n1,0,0\n2,0,1\n0,1,1\n1,1,1\n2,1,1\n");
}

TEST(Export, SeventeenSignificantDigits) {
  StaggeredGrid g{{1, 1}, {1.0, 1.0}, {false, false}};
  ScalarField f(g, 0.1);
  EXPECT_NE(field_csv(f).find("0.10000000000000001"), std::string::npos);
}

TEST(Study, ZeroForcingGivesExactlyZeroGaps) {
  StudyConfig c = tiny_study();
  c.forcing.preset = "zero";
  ConvergenceReport r = run_convergence_study(c);
  ASSERT_EQ(r.levels.size(), 2u);
  for (const auto& l : r.levels) {
    EXPECT_EQ(l.status, "ok");
    EXPECT_EQ(l.gap_u, 0.0);
    EXPECT_EQ(l.gap_p, 0.0);
    EXPECT_EQ(l.gap_p_fluid, 0.0);
  }
  EXPECT_TRUE(r.monotone_u);
  EXPECT_TRUE(r.monotone_p);
}

TEST(Study, CachedLawMustMatchGeometry) {
  StudyConfig c = tiny_study();
  EffectiveLaw law;
  law.geometry_hash = geometry_hash(default_geometry(2));
  law.linear_K = Mat2::Identity();
  EXPECT_THROW(run_convergence_study(c, &law), Error);
}

TEST(RunOutput, ManifestListsOutputsAndHash) {
  auto dir = scratch("manifest");
  StudyConfig c = tiny_study();
  for (int rep = 0; rep < 2; ++rep) {
    auto sub = dir / ("run" + std::to_string(rep));
    RunOutput out(sub.string(), "converge");
    ConvergenceReport r = run_convergence_study(c);
    out.write("levels.csv", study_levels_csv(r));
    out.timing("total", 1.0 + rep);
    out.finish(to_json(c), geometry_hash(c.geometry), to_json(r), study_passed(c, r));
  }
  EXPECT_EQ(slurp(dir / "run0" / "levels.csv"), slurp(dir / "run1" / "levels.csv"));
  EXPECT_EQ(slurp(dir / "run0" / "manifest.json"), slurp(dir / "run1" / "manifest.json"));
  EXPECT_NE(slurp(dir / "run0" / "timings.json"), slurp(dir / "run1" / "timings.json"));
  Json m = read_manifest((dir / "run0" / "manifest.json").string());
  EXPECT_EQ(m["geometry_hash"], geometry_hash(c.geometry));
  EXPECT_EQ(m["result"]["law_geometry_hash"], geometry_hash(c.geometry));
  EXPECT_EQ(m["outputs"][0]["path"], "levels.csv");
  EXPECT_FALSE(m.contains("timings"));
}
