#pragma once
/// Named invariant suites with measured values and tolerances: geometry, unfolding exactness,
/// two-scale convergence of oscillating products, fields, saddle solver and cell problems.

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twoscale/effective_law.hpp"
#include "twoscale/fine_scale.hpp"
#include "twoscale/study.hpp"
#include "twoscale/unfolding.hpp"

namespace twoscale {

struct PropertyItem {
  std::string suite;
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct PropertyReport {
  std::vector<PropertyItem> items;

  bool passed() const {
    for (const auto& it : items)
      if (!it.passed) return false;
    return true;
  }
  const PropertyItem* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }
  /// Adds an item that passes when value ≤ tolerance.
  void bound(std::string suite, std::string name, double value, double tol, std::string detail = {}) {
    items.push_back({std::move(suite), std::move(name), value, tol, value <= tol, std::move(detail)});
  }
  void flag(std::string suite, std::string name, bool ok, double value, std::string detail = {}) {
    items.push_back({std::move(suite), std::move(name), value, 0.0, ok, std::move(detail)});
  }
  void append(const PropertyReport& o) { items.insert(items.end(), o.items.begin(), o.items.end()); }
};

struct PropertyConfig {
  CellGeometry2 geometry = default_geometry(4);
  double epsilon = 0.25;
  int grid_per_subcell = 4;
  std::uint64_t seed = 1;
  std::vector<std::string> suites{"geometry", "unfolding", "two_scale", "fields", "saddle", "cell"};
  /// Overrides the field grid of the unfolding suite (cells per axis over Ω); a grid that does
  /// not subdivide the εY lattice makes the suite fail with GridNotNested.
  std::array<int, 2> unfold_grid{0, 0};
  std::vector<double> two_scale_levels{0.5, 0.25, 0.125};
  int two_scale_grid_per_subcell = 8;
  int cell_resolution = 8;  ///< Y and Z grid cells per edge for the cell suite
  double g = 0.1;           ///< yield used by the saddle and cell suites

  bool wants(const std::string& s) const { return std::find(suites.begin(), suites.end(), s) != suites.end(); }
};

namespace detail {

inline std::string join_values(const std::vector<double>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + fmt17(v[k]);
  return s;
}

/// Composite 5-point Gauss-Legendre quadrature of fn over [a, b] with `panels` panels.
inline double gauss_1d(const std::function<double(double)>& fn, double a, double b, int panels = 8) {
  static constexpr double x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
  static constexpr double w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                                  0.2369268850561891};
  double h = (b - a) / panels, s = 0.0;
  for (int p = 0; p < panels; ++p) {
    double c = a + (p + 0.5) * h;
    for (int q = 0; q < 5; ++q) s += w[q] * fn(c + 0.5 * h * x[q]);
  }
  return 0.5 * h * s;
}

/// Separable function f(v) = f1(v₁)·f2(v₂).
struct Separable {
  std::function<double(double)> f1, f2;
  double operator()(double a, double b) const { return f1(a) * f2(b); }
  double box(double a0, double a1, double b0, double b1, int panels = 8) const {
    return gauss_1d(f1, a0, a1, panels) * gauss_1d(f2, b0, b1, panels);
  }
};

/// Sum of separable terms.
struct SepSum {
  std::vector<Separable> terms;
  double operator()(double a, double b) const {
    double s = 0.0;
    for (const auto& t : terms) s += t(a, b);
    return s;
  }
  double box(double a0, double a1, double b0, double b1, int panels = 8) const {
    double s = 0.0;
    for (const auto& t : terms) s += t.box(a0, a1, b0, b1, panels);
    return s;
  }
};

inline Separable sep(std::function<double(double)> a, std::function<double(double)> b) { return {std::move(a), std::move(b)}; }
inline std::function<double(double)> one() { return [](double) { return 1.0; }; }
inline std::function<double(double)> cos2pi() { return [](double t) { return std::cos(2.0 * std::numbers::pi * t); }; }
inline std::function<double(double)> sin2pi() { return [](double t) { return std::sin(2.0 * std::numbers::pi * t); }; }

/// Product of two SepSums (tensor expansion).
inline SepSum times(const SepSum& a, const SepSum& b) {
  SepSum out;
  for (const auto& s : a.terms)
    for (const auto& t : b.terms)
      out.terms.push_back(sep([f = s.f1, g = t.f1](double v) { return f(v) * g(v); },
                              [f = s.f2, g = t.f2](double v) { return f(v) * g(v); }));
  return out;
}

inline double box_l2(const SepSum& f, double a0, double a1, double b0, double b1) {
  return std::sqrt(times(f, f).box(a0, a1, b0, b1, 16));
}

/// Test families: macro polynomials/trigonometric, periodic micro trigonometric.
inline std::vector<SepSum> macro_tests() {
  const double pi = std::numbers::pi;
  auto id = [](double t) { return t; };
  auto sp = [pi](double t) { return std::sin(pi * t); };
  auto cp = [pi](double t) { return std::cos(pi * t); };
  return {SepSum{{sep(one(), one())}}, SepSum{{sep(id, one())}}, SepSum{{sep(one(), id)}},
          SepSum{{sep(id, id)}},       SepSum{{sep(sp, sp)}},     SepSum{{sep(cp, cp)}}};
}

inline std::vector<SepSum> micro_tests() {
  return {SepSum{{sep(one(), one())}},    SepSum{{sep(cos2pi(), one())}}, SepSum{{sep(sin2pi(), one())}},
          SepSum{{sep(one(), cos2pi())}}, SepSum{{sep(one(), sin2pi())}}, SepSum{{sep(sin2pi(), cos2pi())}}};
}

}  // namespace detail

/// Unfolding exactness: linearity, multiplicativity, aligned periodic functions, norm
/// preservation, integral identity, gradient identities, composition and convergence transfer.
inline PropertyReport unfolding_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  const std::string S = "unfolding";
  const double tol = 1e-12;
  Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, cfg.epsilon, cfg.geometry, cfg.grid_per_subcell);
  std::array<int, 2> dims = dom.grid_dims();
  if (cfg.unfold_grid[0] > 0) dims = cfg.unfold_grid;
  StaggeredGrid grid{dims, {1.0 / dims[0], 1.0 / dims[1]}, {false, false}};
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto random_field = [&] {
    ScalarField f(grid);
    for (double& v : f.values) v = U(rng);
    return f;
  };
  try {
    ScalarField f = random_field(), h = random_field();
    UnfoldedField tf = unfold_eps(f, dom), th = unfold_eps(h, dom);
    rep.flag(S, "unfold.grid_nesting", true, 0.0);

    const double a = 0.7, b = -1.3;
    ScalarField lin(grid), prod(grid);
    for (std::size_t k = 0; k < f.values.size(); ++k) {
      lin.values[k] = a * f.values[k] + b * h.values[k];
      prod.values[k] = f.values[k] * h.values[k];
    }
    UnfoldedField tl = unfold_eps(lin, dom), tp = unfold_eps(prod, dom);
    double e_lin = 0.0, e_prod = 0.0;
    for (std::size_t k = 0; k < tf.values.size(); ++k) {
      e_lin = std::max(e_lin, std::abs(tl.values[k] - (a * tf.values[k] + b * th.values[k])));
      e_prod = std::max(e_prod, std::abs(tp.values[k] - tf.values[k] * th.values[k]));
    }
    rep.bound(S, "unfold.linearity", e_lin, tol);
    rep.bound(S, "unfold.multiplicativity", e_prod, tol);

    // φ(x/ε) for a Y-periodic grid function φ
    const int ny0 = tf.y_dims[0], ny1 = tf.y_dims[1];
    std::vector<double> phi(static_cast<std::size_t>(ny0) * ny1);
    for (double& v : phi) v = U(rng);
    ScalarField per(grid);
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) per.at(i, j) = phi[(i % ny0) + static_cast<std::size_t>(ny0) * (j % ny1)];
    UnfoldedField tper = unfold_eps(per, dom);
    double e_per = 0.0;
    for (int ky = 0; ky < tper.macro_dims[1]; ++ky)
      for (int kx = 0; kx < tper.macro_dims[0]; ++kx)
        for (int yy = 0; yy < ny1; ++yy)
          for (int yx = 0; yx < ny0; ++yx)
            e_per = std::max(e_per, std::abs(tper.at1(kx, ky, yx, yy) - phi[yx + static_cast<std::size_t>(ny0) * yy]));
    rep.bound(S, "unfold.aligned_periodic", e_per, tol);

    UnfoldedField sq = tf;
    for (double& v : sq.values) v *= v;
    double nf = l2_norm(f);
    double e_norm = std::abs(integrate(sq) / dom.geometry.y_cell.volume() - nf * nf) / (nf * nf);
    rep.bound(S, "unfold.norm_preservation", e_norm, tol);

    double l1 = 0.0;
    for (double v : f.values) l1 += std::abs(v);
    l1 *= grid.cell_area();
    rep.bound(S, "unfold.integral_identity", check_integral_identity(f, dom) / l1, tol);

    ScalarField smooth = ScalarField::sample(grid, [](double x, double y) {
      return std::sin(2.0 * std::numbers::pi * x) * std::sin(2.0 * std::numbers::pi * y);
    });
    GradientIdentityReport gi = check_gradient_identities(smooth, dom);
    rep.bound(S, "unfold.gradient_identity_y", gi.gap_y, tol);
    rep.bound(S, "unfold.gradient_identity_z", gi.gap_z, tol);

    // T_δ(T_ε(x₁)) = ε[x₁/ε] + εδ[y₁/δ] + εδz₁
    ScalarField x1 = ScalarField::sample(grid, [](double x, double) { return x; });
    UnfoldedField t2 = unfold_delta(unfold_eps(x1, dom), dom.geometry);
    double e_comp = 0.0;
    const double ed = dom.eps_delta();
    for (int ky = 0; ky < t2.macro_dims[1]; ++ky)
      for (int kx = 0; kx < t2.macro_dims[0]; ++kx)
        for (int ly = 0; ly < t2.sub_dims[1]; ++ly)
          for (int lx = 0; lx < t2.sub_dims[0]; ++lx)
            for (int zy = 0; zy < t2.z_dims[1]; ++zy)
              for (int zx = 0; zx < t2.z_dims[0]; ++zx) {
                double expect = dom.epsilon * dom.geometry.y_cell.lengths[0] * kx +
                                ed * dom.geometry.z_cell.lengths[0] * lx + ed * t2.z_point(zx, zy)[0];
                e_comp = std::max(e_comp, std::abs(t2.at2(kx, ky, lx, ly, zx, zy) - expect));
              }
    rep.bound(S, "unfold.composition", e_comp, tol);
  } catch (const Error& e) {
    rep.flag(S, "unfold.grid_nesting", false, 0.0, to_string(e.kind()));
    return rep;
  }

  // f_ε = f + ε·osc(x/ε): ‖T_ε(f_ε) − f‖ over Ω×Y decays like ε
  std::vector<double> eps_list{0.5, 0.25, 0.125}, gaps;
  const double pi = std::numbers::pi;
  auto fx = [pi](double x, double y) { return std::sin(pi * x) * std::cos(pi * y); };
  for (double e : eps_list) {
    Domain2 d(Box2{{0.0, 0.0}, {1.0, 1.0}}, e, default_geometry(4), 4);
    StaggeredGrid gr = StaggeredGrid::from_mask(Mask2(d.grid_dims(), d.spacing()));
    ScalarField fe = ScalarField::sample(gr, [&](double x, double y) {
      return fx(x, y) + e * std::cos(2.0 * pi * x / e) * std::sin(2.0 * pi * y / e);
    });
    UnfoldedField t = unfold_eps(fe, d);
    const double cx = e * t.y_lengths[0], cy = e * t.y_lengths[1];
    double s = 0.0;
    for (int ky = 0; ky < t.macro_dims[1]; ++ky)
      for (int kx = 0; kx < t.macro_dims[0]; ++kx)
        for (int yy = 0; yy < t.y_dims[1]; ++yy)
          for (int yx = 0; yx < t.y_dims[0]; ++yx) {
            double v = t.at1(kx, ky, yx, yy);
            double cell = detail::gauss_1d([&](double x) {
              return detail::gauss_1d([&](double y) { return (v - fx(x, y)) * (v - fx(x, y)); }, ky * cy, (ky + 1) * cy, 1);
            }, kx * cx, (kx + 1) * cx, 1);
            s += cell * t.y_lengths[0] * t.y_lengths[1] / t.micro_count();
          }
    gaps.push_back(std::sqrt(s));
  }
  double slope = std::log(gaps[0] / gaps[2]) / std::log(eps_list[0] / eps_list[2]);
  PropertyItem p4{S, "unfold.convergence_transfer_rate", slope, 0.0, slope >= 0.8 && slope <= 1.2,
                  "gaps " + detail::join_values(gaps) + "; slope in [0.8, 1.2]"};
  rep.items.push_back(p4);
  return rep;
}

/// Gap sequences of the two-scale convergence suite over ε levels.
struct TwoScaleGaps {
  std::vector<double> epsilon;
  std::array<std::vector<double>, 4> gaps;  ///< T_δT_ε, T_ε, weak mean, scaled gradient
  std::vector<double> perforated_yz;        ///< weak limit with 1/(|Y||Z|) over Y×Z
  std::vector<double> perforated_star;      ///< weak limit with 1/(|Y*||Z*|) over Y*×Z*
};

/// Φ = a(x)b(x/ε)c(x/(εδ)) with δ halving together with ε. Gaps are weak: the largest
/// normalized pairing |⟨T − L, ψ⟩|/(‖L‖‖ψ‖) over a fixed family of smooth test functions, with
/// periodic micro test functions. The scaled-gradient limit uses the forward difference of c on the
/// micro grid.
inline TwoScaleGaps two_scale_gaps(const std::vector<double>& levels, int gps, const CellGeometry2& base) {
  using detail::SepSum;
  using detail::sep;
  const double pi = std::numbers::pi;
  const SepSum a{{sep([pi](double t) { return std::sin(pi * t); }, [pi](double t) { return std::sin(pi * t); })}};
  const SepSum b{{sep(detail::one(), detail::one()),
                  sep([](double t) { return 0.5 * std::sin(2.0 * std::numbers::pi * t); }, detail::cos2pi())}};
  const SepSum c{{sep(detail::one(), detail::one()),
                  sep([](double t) { return 0.5 * std::cos(2.0 * std::numbers::pi * t); }, detail::sin2pi())}};
  const auto P = detail::macro_tests();
  const auto Q = detail::micro_tests();
  const auto& R = Q;
  const double Ly0 = base.y_cell.lengths[0], Ly1 = base.y_cell.lengths[1];
  const double Lz0 = base.z_cell.lengths[0], Lz1 = base.z_cell.lengths[1];
  auto yfun = [&](const SepSum& f) {  // periodic functions written on the unit cell
    return [f, Ly0, Ly1](double y0, double y1) { return f(y0 / Ly0, y1 / Ly1); };
  };
  (void)yfun;

  TwoScaleGaps out;
  out.epsilon = levels;
  // exact limit pairings
  auto ip = [](const SepSum& f, const SepSum& g, double x0, double x1, double y0, double y1) {
    return detail::times(f, g).box(x0, x1, y0, y1, 16);
  };
  const double norm_a = detail::box_l2(a, 0, 1, 0, 1);
  const double norm_b = detail::box_l2(b, 0, Ly0, 0, Ly1);
  const double norm_c = detail::box_l2(c, 0, Lz0, 0, Lz1);
  const double mean_b = b.box(0, Ly0, 0, Ly1) / (Ly0 * Ly1);
  const double mean_c = c.box(0, Lz0, 0, Lz1) / (Lz0 * Lz1);
  std::vector<double> norm_p, norm_q;
  for (const auto& p : P) norm_p.push_back(detail::box_l2(p, 0, 1, 0, 1));
  for (const auto& q : Q) norm_q.push_back(detail::box_l2(q, 0, 1, 0, 1));
  // fluid parts of the reference cells
  auto solid_integral = [](const SepSum& f, const RectCell2& cell) {
    double s = 0.0;
    for (const auto& o : cell.obstacles) s += f.box(o.corner[0], o.hi(0), o.corner[1], o.hi(1), 16);
    return s;
  };
  const double b_fluid = b.box(0, Ly0, 0, Ly1, 16) - solid_integral(b, base.y_cell);
  const double c_fluid = c.box(0, Lz0, 0, Lz1, 16) - solid_integral(c, base.z_cell);
  const double y_star = base.y_cell.volume() - base.y_cell.solid_volume();
  const double z_star = base.z_cell.volume() - base.z_cell.solid_volume();

  for (double eps : levels) {
    CellGeometry2 geo = base;
    const double r = levels.front() / eps;
    for (int d = 0; d < 2; ++d) geo.subdivision[d] = static_cast<int>(std::lround(base.subdivision[d] * r));
    Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, eps, geo, gps);
    const double ed = dom.eps_delta();
    Mask2 mask = build_domain_mask(dom, false);
    StaggeredGrid grid = StaggeredGrid::from_mask(mask);
    auto phi_at = [&](double x, double y) {
      return a(x, y) * b(x / eps - std::floor(x / (eps * Ly0)) * Ly0, y / eps - std::floor(y / (eps * Ly1)) * Ly1) *
             c(x / ed - std::floor(x / (ed * Lz0)) * Lz0, y / ed - std::floor(y / (ed * Lz1)) * Lz1);
    };
    ScalarField phi = ScalarField::sample(grid, phi_at);
    UnfoldedField t1 = unfold_eps(phi, dom);
    UnfoldedField t2 = unfold_delta(t1, dom.geometry);
    const int nk = static_cast<int>(t1.macro_count());
    const double cx = eps * Ly0, cy = eps * Ly1;
    // macro test integrals per ε-cell
    std::vector<std::vector<double>> Pk(P.size(), std::vector<double>(nk));
    for (std::size_t ip_ = 0; ip_ < P.size(); ++ip_)
      for (int ky = 0; ky < t1.macro_dims[1]; ++ky)
        for (int kx = 0; kx < t1.macro_dims[0]; ++kx)
          Pk[ip_][kx + t1.macro_dims[0] * ky] = P[ip_].box(kx * cx, (kx + 1) * cx, ky * cy, (ky + 1) * cy, 2);

    // gap 1 and 4: level-2 pairings Σ_k P_k Σ_l Q_l Σ_z w_z T r(z)
    const int ns = static_cast<int>(t2.sub_count()), nz = static_cast<int>(t2.z_count());
    const double sw0 = Ly0 / t2.sub_dims[0], sw1 = Ly1 / t2.sub_dims[1];
    std::vector<std::vector<double>> Ql(Q.size(), std::vector<double>(ns));
    for (std::size_t iq = 0; iq < Q.size(); ++iq)
      for (int ly = 0; ly < t2.sub_dims[1]; ++ly)
        for (int lx = 0; lx < t2.sub_dims[0]; ++lx)
          Ql[iq][lx + t2.sub_dims[0] * ly] = Q[iq].box(lx * sw0 / Ly0, (lx + 1) * sw0 / Ly0, ly * sw1 / Ly1, (ly + 1) * sw1 / Ly1, 2) * Ly0 * Ly1;
    const double wz = Lz0 * Lz1 / nz;
    std::vector<std::vector<double>> rz(R.size(), std::vector<double>(nz));
    for (std::size_t ir = 0; ir < R.size(); ++ir)
      for (int zy = 0; zy < t2.z_dims[1]; ++zy)
        for (int zx = 0; zx < t2.z_dims[0]; ++zx) {
          auto z = t2.z_point(zx, zy);
          rz[ir][zx + t2.z_dims[0] * zy] = R[ir](z[0] / Lz0, z[1] / Lz1);
        }
    auto level2_gap = [&](const UnfoldedField& T, const std::function<double(std::size_t)>& limit_z, double limit_norm) {
      // S[k][l][r] = Σ_z w_z T r
      std::vector<double> S(static_cast<std::size_t>(nk) * ns * R.size(), 0.0);
      for (int k = 0; k < nk; ++k)
        for (int l = 0; l < ns; ++l) {
          const double* v = &T.values[static_cast<std::size_t>(k) * T.micro_count() + static_cast<std::size_t>(l) * nz];
          for (std::size_t ir = 0; ir < R.size(); ++ir) {
            double s = 0.0;
            for (int z = 0; z < nz; ++z) s += v[z] * rz[ir][z];
            S[(static_cast<std::size_t>(k) * ns + l) * R.size() + ir] = s * wz;
          }
        }
      double worst = 0.0;
      for (std::size_t ip_ = 0; ip_ < P.size(); ++ip_) {
        double lp = ip(a, P[ip_], 0, 1, 0, 1);
        for (std::size_t iq = 0; iq < Q.size(); ++iq) {
          double lq = ip(b, Q[iq], 0, Ly0, 0, Ly1);
          for (std::size_t ir = 0; ir < R.size(); ++ir) {
            double t = 0.0;
            for (int k = 0; k < nk; ++k)
              for (int l = 0; l < ns; ++l) t += Pk[ip_][k] * Ql[iq][l] * S[(static_cast<std::size_t>(k) * ns + l) * R.size() + ir];
            double lim = lp * lq * limit_z(ir);
            double nr = std::sqrt(wz * std::inner_product(rz[ir].begin(), rz[ir].end(), rz[ir].begin(), 0.0));
            worst = std::max(worst, std::abs(t - lim) / (limit_norm * norm_p[ip_] * norm_q[iq] * nr));
          }
        }
      }
      return worst;
    };
    // discrete micro quantities of c on the z grid
    std::vector<double> cz(nz);
    for (int zy = 0; zy < t2.z_dims[1]; ++zy)
      for (int zx = 0; zx < t2.z_dims[0]; ++zx) {
        auto z = t2.z_point(zx, zy);
        cz[zx + t2.z_dims[0] * zy] = c(z[0], z[1]);
      }
    double cz_norm = std::sqrt(wz * std::inner_product(cz.begin(), cz.end(), cz.begin(), 0.0));
    auto cr = [&](std::size_t ir) { return wz * std::inner_product(cz.begin(), cz.end(), rz[ir].begin(), 0.0); };
    out.gaps[0].push_back(level2_gap(t2, cr, norm_a * norm_b * cz_norm));

    // gap 4: εδ T_δT_ε(∇Φ) against a b D_z c, D_z the forward difference on the z grid
    double g4 = 0.0;
    for (int d = 0; d < 2; ++d) {
      ScalarField dphi(grid);
      for (int j = 0; j < grid.dims[1]; ++j)
        for (int i = 0; i < grid.dims[0]; ++i) {
          int ii = i + (d == 0), jj = j + (d == 1);
          if (ii >= grid.dims[0] || jj >= grid.dims[1]) continue;
          dphi.at(i, j) = ed * (phi.at(ii, jj) - phi.at(i, j)) / grid.spacing[d];
        }
      UnfoldedField tg = unfold_delta(unfold_eps(dphi, dom), dom.geometry);
      const double hz = (d == 0 ? Lz0 / t2.z_dims[0] : Lz1 / t2.z_dims[1]);
      std::vector<double> dc(nz);
      for (int zy = 0; zy < t2.z_dims[1]; ++zy)
        for (int zx = 0; zx < t2.z_dims[0]; ++zx) {
          auto z = t2.z_point(zx, zy);
          auto zn = z;
          zn[d] += hz;
          dc[zx + t2.z_dims[0] * zy] = (c(zn[0], zn[1]) - c(z[0], z[1])) / hz;
        }
      double dn = std::sqrt(wz * std::inner_product(dc.begin(), dc.end(), dc.begin(), 0.0));
      auto dr = [&](std::size_t ir) { return wz * std::inner_product(dc.begin(), dc.end(), rz[ir].begin(), 0.0); };
      g4 = std::max(g4, level2_gap(tg, dr, norm_a * norm_b * dn));
    }
    out.gaps[3].push_back(g4);

    // gap 2: T_ε Φ against a b mean(c), midpoint in y on the fine lattice
    {
      const int ny = static_cast<int>(t1.micro_count());
      const double wy = Ly0 * Ly1 / ny;
      double worst = 0.0;
      for (std::size_t iq = 0; iq < Q.size(); ++iq) {
        std::vector<double> qy(ny);
        for (int yy = 0; yy < t1.y_dims[1]; ++yy)
          for (int yx = 0; yx < t1.y_dims[0]; ++yx) {
            auto y = t1.y_point(yx, yy);
            qy[yx + t1.y_dims[0] * yy] = Q[iq](y[0] / Ly0, y[1] / Ly1);
          }
        std::vector<double> Sk(nk);
        for (int k = 0; k < nk; ++k) {
          const double* v = &t1.values[static_cast<std::size_t>(k) * ny];
          double s = 0.0;
          for (int m = 0; m < ny; ++m) s += v[m] * qy[m];
          Sk[k] = s * wy;
        }
        double lq = ip(b, Q[iq], 0, Ly0, 0, Ly1) * mean_c;
        for (std::size_t ip_ = 0; ip_ < P.size(); ++ip_) {
          double t = 0.0;
          for (int k = 0; k < nk; ++k) t += Pk[ip_][k] * Sk[k];
          double lim = ip(a, P[ip_], 0, 1, 0, 1) * lq;
          worst = std::max(worst, std::abs(t - lim) / (norm_a * norm_b * std::abs(mean_c) * norm_p[ip_] * norm_q[iq]));
        }
      }
      out.gaps[1].push_back(worst);
    }

    // gap 3 and the perforated normalizations: pairings over Ω with macro tests and coarse-block indicators
    {
      std::vector<SepSum> tests = P;
      std::vector<std::array<double, 4>> blocks{{0, 0.5, 0, 0.5}, {0.5, 1, 0, 0.5}, {0, 0.5, 0.5, 1}, {0.5, 1, 0.5, 1}};
      auto pair_field = [&](const std::function<double(std::size_t)>& val, const SepSum& psi) {
        double s = 0.0;
        for (int j = 0; j < grid.dims[1]; ++j)
          for (int i = 0; i < grid.dims[0]; ++i) s += val(i + static_cast<std::size_t>(grid.dims[0]) * j) * psi(grid.xc(i), grid.yc(j));
        return s * grid.cell_area();
      };
      auto block_pair = [&](const std::function<double(std::size_t)>& val, const std::array<double, 4>& B) {
        double s = 0.0;
        for (int j = 0; j < grid.dims[1]; ++j)
          for (int i = 0; i < grid.dims[0]; ++i) {
            double x = grid.xc(i), y = grid.yc(j);
            if (x >= B[0] && x < B[1] && y >= B[2] && y < B[3]) s += val(i + static_cast<std::size_t>(grid.dims[0]) * j);
          }
        return s * grid.cell_area();
      };
      auto weak_gap = [&](const std::function<double(std::size_t)>& val, double coef) {
        double ln = std::abs(coef) * norm_a, worst = 0.0;
        for (std::size_t ip_ = 0; ip_ < P.size(); ++ip_) {
          double lim = coef * ip(a, P[ip_], 0, 1, 0, 1);
          worst = std::max(worst, std::abs(pair_field(val, P[ip_]) - lim) / (ln * norm_p[ip_]));
        }
        for (const auto& B : blocks) {
          double lim = coef * a.box(B[0], B[1], B[2], B[3], 16);
          double nb = std::sqrt((B[1] - B[0]) * (B[3] - B[2]));
          worst = std::max(worst, std::abs(block_pair(val, B) - lim) / (ln * nb));
        }
        return worst;
      };
      auto full = [&](std::size_t k) { return phi.values[k]; };
      out.gaps[2].push_back(weak_gap(full, mean_b * mean_c));
      auto perforated = [&](std::size_t k) { return mask.fluid(k) ? phi.values[k] : 0.0; };
      out.perforated_yz.push_back(weak_gap(perforated, b_fluid * c_fluid / (base.y_cell.volume() * base.z_cell.volume())));
      out.perforated_star.push_back(weak_gap(perforated, b_fluid * c_fluid / (y_star * z_star)));
    }
  }
  return out;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] < v[k - 1])) return false;
  return !v.empty();
}

inline double final_over_initial(const std::vector<double>& v) {
  return v.empty() || v.front() == 0.0 ? 0.0 : v.back() / v.front();
}

/// Each of the four gaps must decrease strictly over the levels; the value column carries the
/// final/initial ratio. The perforated weak limit records which normalization the data follow.
inline PropertyReport two_scale_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  const std::string S = "two_scale";
  TwoScaleGaps g = two_scale_gaps(cfg.two_scale_levels, cfg.two_scale_grid_per_subcell, cfg.geometry);
  const char* names[4] = {"two_scale.double_unfolding", "two_scale.single_unfolding", "two_scale.weak_mean",
                          "two_scale.scaled_gradient"};
  for (int q = 0; q < 4; ++q)
    rep.items.push_back({S, names[q], final_over_initial(g.gaps[q]), 0.0, strictly_decreasing(g.gaps[q]),
                         "gaps " + detail::join_values(g.gaps[q]) + "; value is final/initial"});
  auto judge = [](const std::vector<double>& v, double&) { return strictly_decreasing(v) && final_over_initial(v) <= 0.1; };
  double ryz = 0.0, rst = 0.0;
  bool yz_ok = judge(g.perforated_yz, ryz), st_ok = judge(g.perforated_star, rst);
  std::string which = yz_ok && !st_ok ? "1/(|Y||Z|) over Y×Z" : (st_ok && !yz_ok ? "1/(|Y*||Z*|) over Y*×Z*" : "undecided");
  rep.items.push_back({S, "two_scale.perforated_normalization", g.perforated_yz.back(), 0.1, yz_ok != st_ok,
                       "matches " + which + "; |Y||Z| gaps " + detail::join_values(g.perforated_yz) + "; |Y*||Z*| gaps " +
                           detail::join_values(g.perforated_star)});
  return rep;
}

inline PropertyReport geometry_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  GeometryReport gr = validate_geometry(cfg.geometry);
  for (const auto& it : gr.items) rep.flag("geometry", "geometry." + it.name, it.passed, it.passed ? 0.0 : 1.0, it.detail);
  if (gr.passed()) {
    Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, cfg.epsilon, cfg.geometry, cfg.grid_per_subcell);
    Mask2 m = build_domain_mask(dom, false);
    rep.flag("geometry", "geometry.fluid_connected", is_connected(m), static_cast<double>(count_fluid_components(m)));
  }
  return rep;
}

/// Discrete divergence of a stream-function field vanishes; gradient of a linear field is exact.
inline PropertyReport fields_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  const int n = 32;
  StaggeredGrid g{{n, n}, {1.0 / n, 1.0 / n}, {false, false}};
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<double> psi(static_cast<std::size_t>(n + 1) * (n + 1));
  for (double& v : psi) v = U(rng);
  auto P = [&](int i, int j) { return psi[i + static_cast<std::size_t>(n + 1) * j]; };
  VectorField u(g);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= n; ++i) u.at(0, i, j) = (P(i, j + 1) - P(i, j)) / g.spacing[1];
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i < n; ++i) u.at(1, i, j) = -(P(i + 1, j) - P(i, j)) / g.spacing[0];
  ScalarField d = divergence(u);
  double dmax = 0.0, umax = 0.0;
  for (double v : d.values) dmax = std::max(dmax, std::abs(v));
  for (const auto& c : u.comp)
    for (double v : c) umax = std::max(umax, std::abs(v));
  rep.bound("fields", "fields.stream_function_divergence", dmax * g.spacing[0] / umax, 1e-12);

  ScalarField lin = ScalarField::sample(g, [](double x, double y) { return 2.0 * x - 3.0 * y; });
  VectorField gl = gradient(lin);
  double e = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 1; i < n; ++i) e = std::max(e, std::abs(gl.at(0, i, j) - 2.0));
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < n; ++i) e = std::max(e, std::abs(gl.at(1, i, j) + 3.0));
  rep.bound("fields", "fields.linear_gradient", e, 1e-12);
  return rep;
}

/// Bingham with g = 0 against Stokes, zero forcing at rest, divergence control.
inline PropertyReport saddle_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  const std::string S = "saddle";
  Domain2 dom(Box2{{0.0, 0.0}, {1.0, 1.0}}, 0.5, default_geometry(4), 4);
  Mask2 mask = build_domain_mask(dom);
  VectorField f = sample_forcing(dom, [](double x, double y) { return Vec2(Vec2(1.0 + x, 0.0) + swirl_forcing(x, y)); });
  const double ed = dom.eps_delta(), mu_eff = 2.0 * ed * ed;
  SolverConfig sc;
  BinghamState b = BinghamSolver(mask, Boundary::dirichlet0(), mu_eff, sc).solve(f, 0.0);
  StokesResult st = solve_stokes(mask, f, mu_eff, Boundary::dirichlet0());
  double diff = 0.0, ref = 0.0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < st.u.comp[c].size(); ++k) {
      diff = std::max(diff, std::abs(b.u.comp[c][k] - st.u.comp[c][k]));
      ref = std::max(ref, std::abs(st.u.comp[c][k]));
    }
  rep.bound(S, "saddle.zero_yield_matches_stokes", diff / ref, 1e-8);
  MacOperator op(mask, Boundary::dirichlet0());
  rep.bound(S, "saddle.divergence", op.max_divergence(op.to_torus(b.u)) * mask.spacing[0] / ref, sc.tol_div);
  VectorField zero(f.grid);
  BinghamState rest = BinghamSolver(mask, Boundary::dirichlet0(), mu_eff, sc).solve(zero, cfg.g * ed);
  double rmax = 0.0;
  for (const auto& c : rest.u.comp)
    for (double v : c) rmax = std::max(rmax, std::abs(v));
  rep.bound(S, "saddle.zero_forcing_at_rest", rmax, 0.0);
  return rep;
}

/// Linear permeability symmetric, positive definite, diagonal under reflection symmetry; 𝒦(0) = 0.
inline PropertyReport cell_suite(const PropertyConfig& cfg) {
  PropertyReport rep;
  const std::string S = "cell";
  CellConfig cc;
  cc.y_resolution = cfg.cell_resolution;
  cc.z_resolution = cfg.cell_resolution;
  LinearCellResult lin = solve_linear_cell(cfg.geometry, 1.0, cc);
  const Mat2& K = lin.K;
  double kn = K.norm();
  rep.bound(S, "cell.K_symmetric", (K - K.transpose()).norm() / kn, 1e-6);
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (K + K.transpose()));
  double lmin = es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff();
  rep.flag(S, "cell.K_positive_definite", lmin > 0.0, lmin, "smallest/largest eigenvalue");
  Mat2 refl;
  refl << -1.0, 0.0, 0.0, 1.0;
  bool reflective = false;
  for (const Mat2& s : detail::cell_symmetries(cfg.geometry)) reflective = reflective || (s - refl).norm() < 1e-12;
  if (reflective)
    rep.bound(S, "cell.K_diagonal", std::abs(K(0, 1)) / std::max(std::abs(K(0, 0)), std::abs(K(1, 1))), 1e-6);
  CellLawEvaluator ev(cfg.geometry, 1.0, cfg.g, CellStrategy::TwoLevel, cc);
  Vec2 k0 = ev.eval_K(Vec2::Zero());
  rep.bound(S, "cell.law_at_zero", k0.norm(), 0.0);
  return rep;
}

inline PropertyReport run_property_suites(const PropertyConfig& cfg) {
  PropertyReport rep;
  if (cfg.wants("geometry")) rep.append(geometry_suite(cfg));
  if (cfg.wants("unfolding")) rep.append(unfolding_suite(cfg));
  if (cfg.wants("two_scale")) rep.append(two_scale_suite(cfg));
  if (cfg.wants("fields")) rep.append(fields_suite(cfg));
  if (cfg.wants("saddle")) rep.append(saddle_suite(cfg));
  if (cfg.wants("cell")) rep.append(cell_suite(cfg));
  return rep;
}

}  // namespace twoscale
