#pragma once
/// Convergence study: fine simulations on Ω_εδ over a dyadic ε sweep compared with the macro
/// Darcy solution built from the cell-derived effective law.

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "twoscale/darcy_macro.hpp"
#include "twoscale/effective_law.hpp"
#include "twoscale/fine_scale.hpp"

namespace twoscale {

/// Body force on Ω: a symbolic preset or bilinear interpolation of gridded samples.
struct ForcingSpec {
  std::string preset = "mixed";  ///< mixed | swirl | constant | zero | gridded
  double amplitude = 1.0;        ///< weight of the rotational part (mixed, swirl)
  Vec2 constant = Vec2(1.0, 0.0);
  // gridded: node values on a (nx × ny) lattice spanning Ω, x fastest
  std::array<int, 2> grid_dims{0, 0};
  std::vector<Vec2> grid_values;
  std::string source;  ///< file the gridded samples came from

  void validate() const {
    if (preset == "gridded") {
      if (grid_dims[0] < 2 || grid_dims[1] < 2 ||
          grid_values.size() != static_cast<std::size_t>(grid_dims[0]) * grid_dims[1])
        throw Error(ErrorKind::InvalidConfig, "gridded forcing needs >= 2x2 samples");
    } else if (preset != "mixed" && preset != "swirl" && preset != "constant" && preset != "zero") {
      throw Error(ErrorKind::InvalidConfig, "unknown forcing preset '" + preset + "'");
    }
  }
};

/// Wall-tangent rotational field with stream function sin²(πx)sin²(πy) (up to the sign).
inline Vec2 swirl_forcing(double x, double y) {
  double s = std::sin(std::numbers::pi * x), t = std::sin(std::numbers::pi * y);
  return {std::numbers::pi * s * s * std::sin(2.0 * std::numbers::pi * y),
          -std::numbers::pi * std::sin(2.0 * std::numbers::pi * x) * t * t};
}

/// Forcing as a function of the absolute position in Ω.
inline Forcing make_forcing(const ForcingSpec& spec, const Box2& omega) {
  spec.validate();
  auto local = [omega](double x, double y) {
    return Vec2((x - omega.corner[0]) / omega.extent[0], (y - omega.corner[1]) / omega.extent[1]);
  };
  if (spec.preset == "zero") return [](double, double) { return Vec2(0.0, 0.0); };
  if (spec.preset == "constant") return [c = spec.constant](double, double) { return c; };
  if (spec.preset == "swirl")
    return [local, a = spec.amplitude](double x, double y) {
      Vec2 q = local(x, y);
      return Vec2(a * swirl_forcing(q[0], q[1]));
    };
  if (spec.preset == "mixed")
    return [local, a = spec.amplitude](double x, double y) {
      Vec2 q = local(x, y);
      return Vec2(Vec2(1.0 + q[0], 0.0) + a * swirl_forcing(q[0], q[1]));
    };
  return [local, n = spec.grid_dims, v = spec.grid_values](double x, double y) {
    Vec2 q = local(x, y);
    double fx = std::clamp(q[0], 0.0, 1.0) * (n[0] - 1), fy = std::clamp(q[1], 0.0, 1.0) * (n[1] - 1);
    int i = std::min(static_cast<int>(fx), n[0] - 2), j = std::min(static_cast<int>(fy), n[1] - 2);
    double tx = fx - i, ty = fy - j;
    auto at = [&](int a, int b) { return v[a + static_cast<std::size_t>(n[0]) * b]; };
    return Vec2((1 - ty) * ((1 - tx) * at(i, j) + tx * at(i + 1, j)) + ty * ((1 - tx) * at(i, j + 1) + tx * at(i + 1, j + 1)));
  };
}

struct StudyConfig {
  CellGeometry2 geometry = default_geometry(4);  ///< subdivision used at the first level
  std::string geometry_file;                     ///< provenance only
  Box2 omega{{0.0, 0.0}, {1.0, 1.0}};
  double g = 0.0;
  double mu = 1.0;
  ForcingSpec forcing;
  std::vector<double> eps_levels{0.5, 0.25, 0.125};
  bool refine_delta = true;  ///< subdivision doubles whenever ε halves (δ ∝ ε)
  int grid_per_subcell = 8;
  SolverConfig fine;
  CellConfig cell;
  CellStrategy strategy = CellStrategy::TwoLevel;
  int law_angles = 72;
  MacroGrid macro;
  DarcyConfig darcy;
  std::uint64_t seed = 1;
  bool require_monotone = true;
  double max_final_gap_u = -1.0;  ///< < 0: no bound asserted
  std::string output_dir = "out";

  StudyConfig() {
    fine.tol_coupling = 1e-5;
    fine.tol_vi = 1e-5;
    cell.y_resolution = 32;
    cell.z_resolution = 8;
    macro.dims = {64, 64};
    darcy.throw_on_failure = false;  // a stalled macro iteration is reported, not fatal
  }

  int subdivision(std::size_t level) const {
    if (!refine_delta) return geometry.subdivision[0];
    return static_cast<int>(std::lround(geometry.subdivision[0] * eps_levels.front() / eps_levels[level]));
  }

  CellGeometry2 level_geometry(std::size_t level) const {
    CellGeometry2 g2 = geometry;
    if (refine_delta) {
      double r = eps_levels.front() / eps_levels[level];
      for (int d = 0; d < 2; ++d) g2.subdivision[d] = static_cast<int>(std::lround(geometry.subdivision[d] * r));
    }
    return g2;
  }

  Domain2 level_domain(std::size_t level) const {
    return Domain2(omega, eps_levels[level], level_geometry(level), grid_per_subcell);
  }

  void validate() const {
    if (eps_levels.empty()) throw Error(ErrorKind::InvalidConfig, "at least one epsilon level");
    for (std::size_t k = 0; k < eps_levels.size(); ++k) {
      double e = eps_levels[k];
      if (!(e > 0 && e < 1) || !detail::near_integer(std::log2(e), 1e-12))
        throw Error(ErrorKind::InvalidConfig, "epsilon levels must be dyadic (2^-m)");
      if (k && !(e < eps_levels[k - 1])) throw Error(ErrorKind::InvalidConfig, "epsilon levels must decrease strictly");
    }
    if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
    if (!(mu > 0)) throw Error(ErrorKind::InvalidConfig, "mu must be positive");
    if (law_angles < 4) throw Error(ErrorKind::InvalidConfig, "law_angles must be >= 4");
    forcing.validate();
    fine.validate();
    cell.validate();
    macro.validate();
    darcy.validate();
    if (macro.omega.corner != omega.corner || macro.omega.extent != omega.extent)
      throw Error(ErrorKind::InvalidConfig, "macro grid must span Omega");
    for (std::size_t k = 0; k < eps_levels.size(); ++k) {
      Domain2 dom = level_domain(k);
      for (int d = 0; d < 2; ++d)
        if (macro.dims[d] % dom.macro_cells(d))
          throw Error(ErrorKind::GridNotNested, "macro grid must nest the eps*Y lattice at every level");
    }
  }
};

struct LevelRecord {
  double epsilon = 0.0, delta = 0.0, eps_delta = 0.0;
  int subdivision = 0;
  std::array<int, 2> grid_dims{0, 0};
  std::size_t fluid_cells = 0;
  std::string status = "ok";  ///< ok | failed
  std::string error;
  AprioriNorms norms;
  double gap_u = 0.0;        ///< ‖avg u − c·avg u⁰‖ / ‖u⁰‖ over εY-cell averages
  double gap_p = 0.0;        ///< ‖p̃ − p̂‖ / ‖p̂‖ over Ω
  double gap_p_fluid = 0.0;  ///< same restricted to fluid cells, both means removed there
  double rigid_fraction = 0.0;
  double rigid_gradient = 0.0;
  double relation_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  double div_max = 0.0;
  double seconds = 0.0;  ///< wall time, excluded from deterministic exports
};

struct ConvergenceReport {
  std::vector<LevelRecord> levels;
  double slope_gap_u = 0.0, slope_gap_p = 0.0;  ///< least-squares slopes of log gap against log ε
  bool monotone_u = true, monotone_p = true;
  double conversion = 1.0;  ///< |Y*||Z*|/(|Y||Z|)
  std::string law_hash;
  Mat2 linear_K = Mat2::Zero();
  // macro solve
  int macro_iterations = 0;
  bool macro_converged = false;
  double macro_correction = 0.0;
  double macro_residual = 0.0, macro_div_max = 0.0, macro_boundary_flux = 0.0;
  bool macro_all_rigid = false;
  double u0_l2 = 0.0, p_hat_l2 = 0.0;
  double law_seconds = 0.0, macro_seconds = 0.0;

  bool all_ok() const {
    for (const auto& l : levels)
      if (l.status != "ok") return false;
    return true;
  }
  double final_gap_u() const { return levels.empty() ? 0.0 : levels.back().gap_u; }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Relative gap; 0 when both vanish.
inline double relative_gap(double diff, double ref) {
  if (ref > 0.0) return diff / ref;
  return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

inline double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (y[k] > 0.0 && std::isfinite(y[k])) {
      lx.push_back(std::log(x[k]));
      ly.push_back(std::log(y[k]));
    }
  if (lx.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) mx += lx[k], my += ly[k];
  mx /= lx.size();
  my /= ly.size();
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) sxy += (lx[k] - mx) * (ly[k] - my), sxx += (lx[k] - mx) * (lx[k] - mx);
  return sxx > 0 ? sxy / sxx : 0.0;
}

/// Bilinear interpolation of a cell-centred macro field at (x, y), constant beyond the outer centres.
inline double interpolate_cells(const ScalarField& p, const Box2& omega, double x, double y) {
  const auto& g = p.grid;
  double fx = std::clamp((x - omega.corner[0]) / g.spacing[0] - 0.5, 0.0, g.dims[0] - 1.0);
  double fy = std::clamp((y - omega.corner[1]) / g.spacing[1] - 0.5, 0.0, g.dims[1] - 1.0);
  int i = std::min(static_cast<int>(fx), g.dims[0] - 2), j = std::min(static_cast<int>(fy), g.dims[1] - 2);
  double tx = fx - i, ty = fy - j;
  return (1 - ty) * ((1 - tx) * p.at(i, j) + tx * p.at(i + 1, j)) + ty * ((1 - tx) * p.at(i, j + 1) + tx * p.at(i + 1, j + 1));
}

}  // namespace detail

/// Effective law for the study geometry: linear K, plus the polar table when g > 0.
inline EffectiveLaw build_study_law(const StudyConfig& cfg) {
  CellLawEvaluator ev(cfg.geometry, cfg.mu, cfg.g, cfg.strategy, cfg.cell);
  if (cfg.g > 0.0) ev.tabulate(cfg.law_angles);
  return ev.law();
}

/// Macro solve on `cfg.macro` from `law` (linear for g = 0).
inline MacroSolution solve_study_macro(const StudyConfig& cfg, const EffectiveLaw& law) {
  Forcing f = make_forcing(cfg.forcing, cfg.omega);
  if (law.g == 0.0) return solve_linear_darcy(*law.linear_K, f, cfg.macro);
  return solve_nonlinear_darcy(law, f, cfg.macro, cfg.darcy);
}

/// Gap measures of one fine solution against the macro solution.
inline void compare_with_macro(const FlowSolution& sol, const Domain2& dom, const MacroSolution& macro, double conversion,
                               LevelRecord& rec) {
  const std::array<int, 2> n_eps{dom.macro_cells(0), dom.macro_cells(1)};
  // εY-cell averages of the fine velocity (solid cells count as zero)
  auto uc = to_cell_centers(sol.u);
  const int bx = dom.cells_per_eps_cell(0), by = dom.cells_per_eps_cell(1);
  std::array<ScalarField, 2> fine_avg{cell_average(uc[0], bx, by), cell_average(uc[1], bx, by)};
  // the same averages of u⁰
  StaggeredGrid mg = macro.mesh.grid();
  std::array<ScalarField, 2> u0c{ScalarField(mg), ScalarField(mg)};
  for (int j = 0; j < mg.dims[1]; ++j)
    for (int i = 0; i < mg.dims[0]; ++i) {
      Vec2 v = macro.cell_velocity(i, j);
      u0c[0].at(i, j) = v[0];
      u0c[1].at(i, j) = v[1];
    }
  const int mx = mg.dims[0] / n_eps[0], my = mg.dims[1] / n_eps[1];
  std::array<ScalarField, 2> macro_avg{cell_average(u0c[0], mx, my), cell_average(u0c[1], mx, my)};
  double diff = 0.0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < fine_avg[c].values.size(); ++k) {
      double d = fine_avg[c].values[k] - conversion * macro_avg[c].values[k];
      diff += d * d;
    }
  diff = std::sqrt(diff * fine_avg[0].grid.cell_area());
  double u0n = std::sqrt(l2_norm(u0c[0]) * l2_norm(u0c[0]) + l2_norm(u0c[1]) * l2_norm(u0c[1]));
  rec.gap_u = detail::relative_gap(diff, u0n);

  // pressures on the fine grid
  const auto& fg = sol.p_ext.grid;
  ScalarField ph(fg);
  for (int j = 0; j < fg.dims[1]; ++j)
    for (int i = 0; i < fg.dims[0]; ++i)
      ph.at(i, j) = detail::interpolate_cells(macro.p_hat, dom.omega, dom.omega.corner[0] + fg.xc(i), dom.omega.corner[1] + fg.yc(j));
  auto centred = [&](const ScalarField& p, const Mask2* m) {
    ScalarField q = p;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < q.values.size(); ++k)
      if (!m || m->fluid(k)) s += q.values[k], ++n;
    for (double& v : q.values) v -= n ? s / n : 0.0;
    return q;
  };
  auto gap = [&](const Mask2* m) {
    ScalarField a = centred(m ? sol.p_fluid : sol.p_ext, m), b = centred(ph, m);
    ScalarField d = a;
    for (std::size_t k = 0; k < d.values.size(); ++k) d.values[k] -= b.values[k];
    return detail::relative_gap(l2_norm(d, m), l2_norm(b, m));
  };
  rec.gap_p = gap(nullptr);
  rec.gap_p_fluid = gap(&sol.mask);
}

/// Runs every level; a failing level is recorded with its error and the study continues.
inline ConvergenceReport run_convergence_study(const StudyConfig& cfg, const EffectiveLaw* cached_law = nullptr) {
  cfg.validate();
  ConvergenceReport rep;
  auto t0 = std::chrono::steady_clock::now();
  EffectiveLaw law;
  if (cached_law) {
    if (cached_law->geometry_hash != geometry_hash(cfg.geometry))
      throw Error(ErrorKind::InvalidConfig, "cached effective law belongs to a different geometry");
    if (cached_law->g != cfg.g || cached_law->mu != cfg.mu)
      throw Error(ErrorKind::InvalidConfig, "cached effective law has different g or mu");
    law = *cached_law;
  } else {
    law = build_study_law(cfg);
  }
  rep.law_seconds = detail::seconds_since(t0);
  rep.law_hash = law.geometry_hash;
  rep.linear_K = *law.linear_K;
  rep.conversion = law.normalization.conversion();

  t0 = std::chrono::steady_clock::now();
  MacroSolution macro = solve_study_macro(cfg, law);
  rep.macro_seconds = detail::seconds_since(t0);
  rep.macro_iterations = macro.iterations;
  rep.macro_residual = macro.residual;
  rep.macro_converged = macro.converged;
  rep.macro_correction = macro.correction;
  rep.macro_div_max = macro.div_max;
  rep.macro_boundary_flux = macro.boundary_flux;
  rep.macro_all_rigid = macro.all_rigid;
  rep.u0_l2 = l2_norm(macro.u0);
  rep.p_hat_l2 = l2_norm(macro.p_hat);

  Forcing f = make_forcing(cfg.forcing, cfg.omega);
  for (std::size_t k = 0; k < cfg.eps_levels.size(); ++k) {
    LevelRecord rec;
    auto tl = std::chrono::steady_clock::now();
    try {
      Domain2 dom = cfg.level_domain(k);
      rec.epsilon = dom.epsilon;
      rec.delta = dom.delta();
      rec.eps_delta = dom.eps_delta();
      rec.subdivision = dom.geometry.subdivision[0];
      rec.grid_dims = dom.grid_dims();
      VectorField fv = sample_forcing(dom, [&](double x, double y) { return f(x, y); });
      FlowSolution sol = solve_fine(dom, fv, cfg.g, cfg.mu, cfg.fine);
      rec.fluid_cells = sol.mask.count_fluid();
      rec.iterations = sol.state.iterations;
      rec.converged = sol.state.converged;
      rec.div_max = sol.div_max;
      rec.norms = apriori_norms(sol);
      RigidZoneReport rz = rigid_zones(sol);
      std::size_t rigid = 0;
      for (std::size_t q = 0; q < sol.mask.size(); ++q)
        if (sol.mask.fluid(q) && rz.rigid.values[q]) ++rigid;
      rec.rigid_fraction = rec.fluid_cells ? static_cast<double>(rigid) / rec.fluid_cells : 0.0;
      rec.rigid_gradient = rz.rigid_gradient;
      rec.relation_residual = rz.relation_residual;
      compare_with_macro(sol, dom, macro, rep.conversion, rec);
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
    }
    rec.seconds = detail::seconds_since(tl);
    rep.levels.push_back(rec);
  }

  std::vector<double> eps, gu, gp;
  for (const auto& l : rep.levels)
    if (l.status == "ok") eps.push_back(l.epsilon), gu.push_back(l.gap_u), gp.push_back(l.gap_p);
  for (std::size_t k = 1; k < gu.size(); ++k) {
    // exact zeros (f = 0) count as non-increasing
    if (!(gu[k] < gu[k - 1] || (gu[k] == 0.0 && gu[k - 1] == 0.0))) rep.monotone_u = false;
    if (!(gp[k] < gp[k - 1] || (gp[k] == 0.0 && gp[k - 1] == 0.0))) rep.monotone_p = false;
  }
  rep.slope_gap_u = detail::fitted_slope(eps, gu);
  rep.slope_gap_p = detail::fitted_slope(eps, gp);
  return rep;
}

/// Assertions requested by the configuration.
inline bool study_passed(const StudyConfig& cfg, const ConvergenceReport& rep) {
  if (!rep.all_ok()) return false;
  if (cfg.require_monotone && !(rep.monotone_u && rep.monotone_p)) return false;
  if (cfg.max_final_gap_u >= 0 && !(rep.final_gap_u() <= cfg.max_final_gap_u)) return false;
  return true;
}

}  // namespace twoscale
