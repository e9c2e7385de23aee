// Command-line driver: geometry validation, unfolding suites, cell problems, fine simulations,
// macro Darcy solves, convergence studies and property suites.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "twoscale/harness.hpp"

using namespace twoscale;

namespace {

using Clock = std::chrono::steady_clock;

/// Flags shared by the subcommands; they mirror StudyConfig and are overridden by --config.
struct Flags {
  std::string config;
  std::string geometry_file;
  int subdivision = 4;
  double g = 0.0;
  double mu = 1.0;
  double epsilon = 0.5;
  std::vector<double> eps_levels{0.5, 0.25, 0.125};
  int grid_per_subcell = 8;
  std::string forcing = "mixed";
  double amplitude = 1.0;
  std::vector<double> constant{1.0, 0.0};
  std::string strategy = "two_level";
  int y_resolution = 32;
  int z_resolution = 8;
  int law_angles = 72;
  int macro_n = 64;
  std::uint64_t seed = 1;
  std::string output = "out";
  std::string mask_format = "pgm";
  std::string field_format = "csv";
  double tol_coupling = -1.0;  ///< < 0: subcommand default
  double tol_vi = -1.0;
  std::string law_file;
  std::vector<double> lambdas;
  bool tabulate = false;
  double max_final_gap_u = -1.0;
  bool export_unfolded = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config; its values override flags");
  sub->add_option("--geometry", f.geometry_file, "geometry JSON (default: built-in geometry)");
  sub->add_option("--subdivision", f.subdivision, "subdivision of the built-in geometry")->check(CLI::PositiveNumber);
  sub->add_option("-o,--output", f.output, "output directory");
  sub->add_option("--seed", f.seed, "random seed");
}

void add_physics(CLI::App* sub, Flags& f) {
  sub->add_option("--g", f.g, "yield stress")->check(CLI::NonNegativeNumber);
  sub->add_option("--mu", f.mu, "viscosity")->check(CLI::PositiveNumber);
  sub->add_option("--forcing", f.forcing, "forcing preset")->check(CLI::IsMember({"mixed", "swirl", "constant", "zero"}));
  sub->add_option("--amplitude", f.amplitude, "rotational forcing amplitude");
  sub->add_option("--constant", f.constant, "constant forcing vector")->expected(2);
  sub->add_option("--tol-coupling", f.tol_coupling, "augmented-Lagrangian coupling tolerance (default: 1e-8 for fine-sim, 1e-5 for studies)");
  sub->add_option("--tol-vi", f.tol_vi, "variational-inequality tolerance (default: 1e-7 for fine-sim, 1e-5 for studies)");
}

void add_cell(CLI::App* sub, Flags& f) {
  sub->add_option("--strategy", f.strategy, "cell strategy")->check(CLI::IsMember({"product", "two_level"}));
  sub->add_option("--y-resolution", f.y_resolution, "grid cells per Y edge");
  sub->add_option("--z-resolution", f.z_resolution, "grid cells per Z edge");
}

StudyConfig study_from(const Flags& f) {
  StudyConfig c;
  c.geometry = default_geometry(f.subdivision);
  if (!f.geometry_file.empty()) {
    c.geometry_file = f.geometry_file;
    c.geometry = load_geometry(f.geometry_file);
  }
  c.g = f.g;
  c.mu = f.mu;
  c.forcing.preset = f.forcing;
  c.forcing.amplitude = f.amplitude;
  c.forcing.constant = Vec2(f.constant.at(0), f.constant.at(1));
  c.eps_levels = f.eps_levels;
  c.grid_per_subcell = f.grid_per_subcell;
  if (f.tol_coupling > 0) c.fine.tol_coupling = f.tol_coupling;
  if (f.tol_vi > 0) c.fine.tol_vi = f.tol_vi;
  c.cell.y_resolution = f.y_resolution;
  c.cell.z_resolution = f.z_resolution;
  c.strategy = parse_strategy(f.strategy);
  c.law_angles = f.law_angles;
  c.macro.dims = {f.macro_n, f.macro_n};
  c.seed = f.seed;
  c.max_final_gap_u = f.max_final_gap_u;
  c.output_dir = f.output;
  if (!f.config.empty()) apply_config_file(f.config, c);
  return c;
}

/// Resolved config for the manifest; the output location does not affect results.
Json manifest_config(const StudyConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  return j;
}

/// Single-level view of the study config (first ε level).
Domain2 single_domain(const StudyConfig& c) { return c.level_domain(0); }

void write_mask(RunOutput& out, const std::string& stem, const Mask2& m, const std::string& fmt) {
  if (fmt == "pgm") out.write(stem + ".pgm", mask_pgm(m));
  else out.write(stem + ".csv", mask_csv(m));
}

void write_field(RunOutput& out, const std::string& stem, const ScalarField& f, const std::string& fmt,
                 std::array<double, 2> origin) {
  if (fmt == "grid") out.write(stem + ".grid", field_grid(f, stem, origin));
  else out.write(stem + ".csv", field_csv(f, origin));
}

void write_field(RunOutput& out, const std::string& stem, const VectorField& u, const std::string& fmt,
                 std::array<double, 2> origin) {
  if (fmt == "grid") out.write(stem + ".grid", field_grid(u, stem, origin));
  else out.write(stem + ".csv", field_csv(u, origin));
}

std::string law_text(const EffectiveLaw& law) {
  std::ostringstream os;
  law.write(os);
  return os.str();
}

EffectiveLaw read_law(const std::string& path) {
  std::istringstream in(detail::read_file(path));
  return EffectiveLaw::read(in);
}

Json mat_json(const Mat2& K) { return Json{K(0, 0), K(0, 1), K(1, 0), K(1, 1)}; }

void print_items(const PropertyReport& r) {
  for (const auto& it : r.items)
    std::cout << (it.passed ? "PASS " : "FAIL ") << it.name << " value=" << detail::fmt17(it.value)
              << (it.detail.empty() ? "" : " (" + it.detail + ")") << "\n";
}

// ---------------------------------------------------------------- subcommands

int cmd_validate_geometry(const Flags& f) {
  StudyConfig c = study_from(f);
  RunOutput out(c.output_dir, "validate-geometry");
  GeometryReport rep = validate_geometry(c.geometry);
  std::ostringstream csv;
  csv << "check,passed,detail\n";
  Json items = Json::array();
  for (const auto& it : rep.items) {
    csv << it.name << "," << (it.passed ? 1 : 0) << "," << detail::csv_quote(it.detail) << "\n";
    items.push_back(Json{{"check", it.name}, {"passed", it.passed}, {"detail", it.detail}});
    std::cout << (it.passed ? "PASS " : "FAIL ") << it.name << (it.detail.empty() ? "" : " (" + it.detail + ")") << "\n";
  }
  out.write("geometry_checks.csv", csv.str());
  out.write("geometry.json", to_json(c.geometry).dump(2) + "\n");
  bool ok = rep.passed();
  Json result{{"checks", items}};
  if (ok) {
    CellMasks<2> cm = build_cell_masks(c.geometry, c.grid_per_subcell);
    write_mask(out, "y_fluid_mask", cm.y_fluid, f.mask_format);
    write_mask(out, "z_star_mask", cm.z_star, f.mask_format);
    Domain2 dom = single_domain(c);
    Mask2 m = build_domain_mask(dom, false);
    write_mask(out, "domain_mask", m, f.mask_format);
    int comps = count_fluid_components(m);
    result["domain"] = Json{{"epsilon", dom.epsilon},
                            {"delta", dom.delta()},
                            {"grid_dims", {m.dims[0], m.dims[1]}},
                            {"fluid_cells", m.count_fluid()},
                            {"fluid_components", comps}};
    ok = comps == 1;
    std::cout << (ok ? "PASS " : "FAIL ") << "domain.fluid_connected components=" << comps << "\n";
  }
  out.finish(manifest_config(c), geometry_hash(c.geometry), result, ok);
  return ok ? 0 : 1;
}

PropertyConfig property_from(const Flags& f, std::vector<std::string> suites) {
  PropertyConfig p;
  p.geometry = default_geometry(f.subdivision);
  if (!f.geometry_file.empty()) p.geometry = load_geometry(f.geometry_file);
  p.epsilon = f.epsilon;
  p.seed = f.seed;
  p.g = f.g > 0 ? f.g : p.g;
  p.suites = std::move(suites);
  if (!f.config.empty()) apply_config_file(f.config, p);
  return p;
}

int run_properties(const Flags& f, const std::string& command, std::vector<std::string> suites) {
  PropertyConfig p = property_from(f, std::move(suites));
  RunOutput out(f.output, command);
  PropertyReport rep = run_property_suites(p);
  out.write("properties.csv", properties_csv(rep));
  if (f.export_unfolded) {
    Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, p.epsilon, p.geometry, p.grid_per_subcell);
    StaggeredGrid g = StaggeredGrid::from_mask(Mask2(dom.grid_dims(), dom.spacing()));
    const double e = dom.epsilon, ed = dom.eps_delta();
    ScalarField phi = ScalarField::sample(g, [&](double x, double y) {
      return std::sin(std::numbers::pi * x) * std::sin(std::numbers::pi * y) *
             (1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * x / e) * std::cos(2.0 * std::numbers::pi * y / e)) *
             (1.0 + 0.5 * std::cos(2.0 * std::numbers::pi * x / ed) * std::sin(2.0 * std::numbers::pi * y / ed));
    });
    UnfoldedField t1 = unfold_eps(phi, dom);
    out.write("unfolded_eps.csv", unfolded_csv(t1));
    out.write("unfolded_eps_delta.csv", unfolded_csv(unfold_delta(t1, dom.geometry)));
  }
  print_items(rep);
  Json items = Json::array();
  for (const auto& it : rep.items)
    items.push_back(Json{{"suite", it.suite}, {"name", it.name}, {"value", it.value}, {"tolerance", it.tolerance}, {"passed", it.passed}});
  out.finish(to_json(p), geometry_hash(p.geometry), Json{{"items", items}}, rep.passed());
  return rep.passed() ? 0 : 1;
}

int cmd_cell_linear(const Flags& f) {
  StudyConfig c = study_from(f);
  RunOutput out(c.output_dir, "cell-linear");
  auto t0 = Clock::now();
  LinearCellResult lin = solve_linear_cell(c.geometry, c.mu, c.cell);
  out.timing("solve", detail::seconds_since(t0));
  const Mat2& K = lin.K;
  double sym = (K - K.transpose()).norm() / K.norm();
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (K + K.transpose()));
  bool spd = es.eigenvalues().minCoeff() > 0.0;
  EffectiveLaw law = CellLawEvaluator(c.geometry, c.mu, 0.0, c.strategy, c.cell).law();
  out.write("effective_law.txt", law_text(law));
  std::cout << "K = [" << detail::fmt17(K(0, 0)) << ", " << detail::fmt17(K(0, 1)) << "; " << detail::fmt17(K(1, 0)) << ", "
            << detail::fmt17(K(1, 1)) << "]\n";
  std::cout << (sym <= 1e-6 ? "PASS" : "FAIL") << " symmetric rel=" << detail::fmt17(sym) << "\n";
  std::cout << (spd ? "PASS" : "FAIL") << " positive definite\n";
  bool ok = sym <= 1e-6 && spd;
  out.finish(manifest_config(c), geometry_hash(c.geometry),
             Json{{"K", mat_json(K)}, {"asymmetry", sym}, {"positive_definite", spd}, {"conversion", law.normalization.conversion()}}, ok);
  return ok ? 0 : 1;
}

int cmd_cell_nonlinear(const Flags& f) {
  StudyConfig c = study_from(f);
  if (f.lambdas.size() % 2) throw Error(ErrorKind::InvalidConfig, "--lambda takes pairs of numbers");
  RunOutput out(c.output_dir, "cell-nonlinear");
  auto t0 = Clock::now();
  CellLawEvaluator ev(c.geometry, c.mu, c.g, c.strategy, c.cell);
  std::ostringstream csv;
  csv << "lambda1,lambda2,flux1,flux2\n";
  Json rows = Json::array();
  bool ok = true;
  for (std::size_t k = 0; k + 1 < f.lambdas.size(); k += 2) {
    Vec2 l(f.lambdas[k], f.lambdas[k + 1]);
    Vec2 q = ev.eval_K(l);
    csv << detail::fmt17(l[0]) << "," << detail::fmt17(l[1]) << "," << detail::fmt17(q[0]) << "," << detail::fmt17(q[1]) << "\n";
    rows.push_back(Json{{"lambda", {l[0], l[1]}}, {"flux", {q[0], q[1]}}});
    ok = ok && std::isfinite(q[0]) && std::isfinite(q[1]) && q.dot(l) >= 0.0;
  }
  if (f.tabulate && c.g > 0.0) ev.tabulate(c.law_angles);
  out.timing("law", detail::seconds_since(t0));
  out.write("flux.csv", csv.str());
  out.write("effective_law.txt", law_text(ev.law()));
  Vec2 zero = ev.eval_K(Vec2::Zero());
  ok = ok && zero.norm() == 0.0;
  std::cout << (zero.norm() == 0.0 ? "PASS" : "FAIL") << " law vanishes at zero\n";
  std::cout << (ok ? "PASS" : "FAIL") << " evaluated " << rows.size() << " forcings\n";
  out.finish(manifest_config(c), geometry_hash(c.geometry),
             Json{{"K", mat_json(ev.linear_K())}, {"rows", rows}, {"tabulated", ev.law().has_polar()}}, ok);
  return ok ? 0 : 1;
}

int cmd_fine_sim(const Flags& f) {
  Flags tight = f;
  // a single solve is checked against the threshold law at 1e-6, which needs tight coupling
  if (tight.tol_coupling <= 0) tight.tol_coupling = 1e-8;
  if (tight.tol_vi <= 0) tight.tol_vi = SolverConfig{}.tol_vi;
  StudyConfig c = study_from(tight);
  c.validate();
  RunOutput out(c.output_dir, "fine-sim");
  Domain2 dom = single_domain(c);
  Forcing force = make_forcing(c.forcing, c.omega);
  VectorField fv = sample_forcing(dom, [&](double x, double y) { return force(x, y); });
  auto t0 = Clock::now();
  FlowSolution sol = solve_fine(dom, fv, c.g, c.mu, c.fine);
  out.timing("solve", detail::seconds_since(t0));
  AprioriNorms n = apriori_norms(sol);
  RigidZoneReport rz = rigid_zones(sol);
  std::array<double, 2> origin = dom.omega.corner;
  write_mask(out, "mask", sol.mask, f.mask_format);
  write_mask(out, "rigid", rz.rigid, f.mask_format);
  write_field(out, "velocity", sol.u, f.field_format, origin);
  write_field(out, "pressure", sol.p_ext, f.field_format, origin);
  write_field(out, "pressure_fluid", sol.p_fluid, f.field_format, origin);
  bool threshold_ok = c.g == 0.0 || rz.passed(10.0 * c.fine.tol_vi, 1e-6);
  bool ok = sol.state.converged && threshold_ok;
  std::cout << "epsilon=" << dom.epsilon << " delta=" << dom.delta() << " grid=" << sol.mask.dims[0] << "x" << sol.mask.dims[1]
            << " iterations=" << sol.state.iterations << "\n";
  std::cout << (sol.state.converged ? "PASS" : "FAIL") << " converged\n";
  std::cout << (threshold_ok ? "PASS" : "FAIL") << " threshold law rigid_gradient=" << detail::fmt17(rz.rigid_gradient)
            << " relation=" << detail::fmt17(rz.relation_residual) << "\n";
  Json result{{"epsilon", dom.epsilon},
              {"delta", dom.delta()},
              {"iterations", sol.state.iterations},
              {"converged", sol.state.converged},
              {"u_l2", n.u_l2},
              {"scaled_grad_l2", n.scaled_grad_l2},
              {"p_l2", n.p_l2},
              {"div_max", sol.div_max},
              {"rigid_cells", rz.rigid_cells},
              {"flowing_cells", rz.flowing_cells},
              {"rigid_gradient", rz.rigid_gradient},
              {"relation_residual", rz.relation_residual}};
  out.finish(manifest_config(c), geometry_hash(c.geometry), result, ok);
  return ok ? 0 : 1;
}

int cmd_darcy(const Flags& f) {
  StudyConfig c = study_from(f);
  RunOutput out(c.output_dir, "darcy");
  EffectiveLaw law;
  if (!f.law_file.empty()) {
    law = read_law(f.law_file);
    if (law.geometry_hash != geometry_hash(c.geometry))
      throw Error(ErrorKind::InvalidConfig, "law file belongs to a different geometry");
  } else {
    law = build_study_law(c);
    out.write("effective_law.txt", law_text(law));
  }
  auto t0 = Clock::now();
  MacroSolution s = solve_study_macro(c, law);
  out.timing("solve", detail::seconds_since(t0));
  write_field(out, "p_hat", s.p_hat, f.field_format, c.omega.corner);
  write_field(out, "u0", s.u0, f.field_format, c.omega.corner);
  double scale = 0.0;
  for (const auto& comp : s.u0.comp)
    for (double v : comp) scale = std::max(scale, std::abs(v));
  const double div_rel = scale > 0 ? s.div_max * s.mesh.spacing()[0] / scale : s.div_max;
  const bool div_ok = div_rel <= 1e-10;
  bool ok = div_ok && s.boundary_flux == 0.0;
  std::cout << (div_ok ? "PASS" : "FAIL") << " div u0 = 0 (max|div| h/max|u| = " << detail::fmt17(div_rel) << ")\n";
  std::cout << (s.boundary_flux == 0.0 ? "PASS" : "FAIL") << " no wall flux\n";
  std::cout << (s.converged ? "" : "note: nonlinear iteration stopped at residual " + detail::fmt17(s.residual) + "\n");
  out.finish(manifest_config(c), law.geometry_hash,
             Json{{"iterations", s.iterations},
                  {"converged", s.converged},
                  {"residual", s.residual},
                  {"correction", s.correction},
                  {"div_max", s.div_max},
                  {"boundary_flux", s.boundary_flux},
                  {"all_rigid", s.all_rigid}},
             ok);
  return ok ? 0 : 1;
}

int cmd_converge(const Flags& f) {
  StudyConfig c = study_from(f);
  RunOutput out(c.output_dir, "converge");
  c.validate();
  auto t0 = Clock::now();
  EffectiveLaw law;
  if (!f.law_file.empty()) {
    law = read_law(f.law_file);
  } else {
    law = build_study_law(c);
    out.write("effective_law.txt", law_text(law));
  }
  out.timing("law", detail::seconds_since(t0));
  ConvergenceReport r = run_convergence_study(c, &law);
  out.timing("total", detail::seconds_since(t0));
  out.timing("macro", r.macro_seconds);
  for (std::size_t k = 0; k < r.levels.size(); ++k) out.timing("level_" + std::to_string(k), r.levels[k].seconds);
  out.write("levels.csv", study_levels_csv(r));
  bool ok = study_passed(c, r);
  for (const auto& l : r.levels)
    std::cout << "eps=" << l.epsilon << " " << l.status << " gap_u=" << detail::fmt17(l.gap_u) << " gap_p=" << detail::fmt17(l.gap_p)
              << " rigid_fraction=" << detail::fmt17(l.rigid_fraction) << (l.error.empty() ? "" : " error=" + l.error) << "\n";
  std::cout << (r.monotone_u ? "PASS" : "FAIL") << " gap_u decreasing\n";
  std::cout << (r.monotone_p ? "PASS" : "FAIL") << " gap_p decreasing\n";
  if (c.max_final_gap_u >= 0)
    std::cout << (r.final_gap_u() <= c.max_final_gap_u ? "PASS" : "FAIL") << " final gap_u <= " << c.max_final_gap_u << "\n";
  out.finish(manifest_config(c), geometry_hash(c.geometry), to_json(r), ok);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-scale homogenization toolkit for Bingham flow in doubly perforated media"};
  app.require_subcommand(1);
  Flags f;

  auto* vg = app.add_subcommand("validate-geometry", "check a cell geometry and write its masks");
  add_common(vg, f);
  vg->add_option("--epsilon", f.eps_levels, "epsilon for the domain mask")->expected(1);
  vg->add_option("--gps", f.grid_per_subcell, "grid cells per Z-subcell edge");
  vg->add_option("--mask-format", f.mask_format, "pgm or csv")->check(CLI::IsMember({"pgm", "csv"}));

  auto* us = app.add_subcommand("unfold-suite", "unfolding identities and two-scale convergence suite");
  add_common(us, f);
  us->add_option("--epsilon", f.epsilon, "epsilon of the identity checks");
  us->add_flag("--export-unfolded", f.export_unfolded, "write unfolded CSVs of a sample oscillating field");

  auto* cl = app.add_subcommand("cell-linear", "linear cell problems and permeability K");
  add_common(cl, f);
  add_cell(cl, f);
  cl->add_option("--mu", f.mu, "viscosity")->check(CLI::PositiveNumber);

  auto* cn = app.add_subcommand("cell-nonlinear", "nonlinear cell law at given forcings");
  add_common(cn, f);
  add_cell(cn, f);
  add_physics(cn, f);
  cn->add_option("--lambda", f.lambdas, "forcing pairs l1 l2 [l1 l2 ...]");
  cn->add_flag("--tabulate", f.tabulate, "also tabulate the polar law");
  cn->add_option("--law-angles", f.law_angles, "angles of the polar table");

  auto* fs = app.add_subcommand("fine-sim", "Bingham flow on the perforated domain at one epsilon");
  add_common(fs, f);
  add_physics(fs, f);
  fs->add_option("--epsilon", f.eps_levels, "epsilon")->expected(1);
  fs->add_option("--gps", f.grid_per_subcell, "grid cells per Z-subcell edge");
  fs->add_option("--mask-format", f.mask_format, "pgm or csv")->check(CLI::IsMember({"pgm", "csv"}));
  fs->add_option("--field-format", f.field_format, "csv or grid")->check(CLI::IsMember({"csv", "grid"}));

  auto* dc = app.add_subcommand("darcy", "macro Darcy problem from an effective law");
  add_common(dc, f);
  add_physics(dc, f);
  add_cell(dc, f);
  dc->add_option("--law", f.law_file, "effective law file (default: compute from the geometry)");
  dc->add_option("--law-angles", f.law_angles, "angles of the polar table");
  dc->add_option("--macro-n", f.macro_n, "macro cells per axis");
  dc->add_option("--field-format", f.field_format, "csv or grid")->check(CLI::IsMember({"csv", "grid"}));

  auto* cv = app.add_subcommand("converge", "convergence study over an epsilon sweep");
  add_common(cv, f);
  add_physics(cv, f);
  add_cell(cv, f);
  cv->add_option("--eps", f.eps_levels, "epsilon levels (dyadic, decreasing)");
  cv->add_option("--gps", f.grid_per_subcell, "grid cells per Z-subcell edge");
  cv->add_option("--law", f.law_file, "cached effective law file");
  cv->add_option("--law-angles", f.law_angles, "angles of the polar table");
  cv->add_option("--macro-n", f.macro_n, "macro cells per axis");
  cv->add_option("--max-final-gap-u", f.max_final_gap_u, "assert the final velocity gap (negative: off)");

  auto* pr = app.add_subcommand("properties", "all invariant suites");
  add_common(pr, f);
  pr->add_option("--epsilon", f.epsilon, "epsilon of the identity checks");
  pr->add_option("--g", f.g, "yield used by the saddle and cell suites");
  pr->add_flag("--export-unfolded", f.export_unfolded, "write unfolded CSVs of a sample oscillating field");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*vg) return cmd_validate_geometry(f);
    if (*us) return run_properties(f, "unfold-suite", {"unfolding", "two_scale"});
    if (*cl) return cmd_cell_linear(f);
    if (*cn) return cmd_cell_nonlinear(f);
    if (*fs) return cmd_fine_sim(f);
    if (*dc) return cmd_darcy(f);
    if (*cv) return cmd_converge(f);
    if (*pr) return run_properties(f, "properties", {"geometry", "unfolding", "two_scale", "fields", "saddle", "cell"});
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
