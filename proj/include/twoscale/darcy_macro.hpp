#pragma once
/// Macroscopic Darcy problems on a box with no-flux walls: linear u = K(f - ∇p) and the
/// nonlinear law u = 𝒦(f - ∇p). Cell-centred pressures, face fluxes, exact discrete conservation.

#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>

#include <cmath>
#include <functional>
#include <vector>

#include "twoscale/effective_law.hpp"

namespace twoscale {

using Forcing = std::function<Vec2(double, double)>;
using LawFn = std::function<Vec2(const Vec2&)>;

struct MacroGrid {
  Box2 omega{{0.0, 0.0}, {1.0, 1.0}};
  std::array<int, 2> dims{32, 32};

  std::array<double, 2> spacing() const { return {omega.extent[0] / dims[0], omega.extent[1] / dims[1]}; }
  StaggeredGrid grid() const { return StaggeredGrid{dims, spacing(), {false, false}}; }
  void validate() const {
    if (dims[0] < 2 || dims[1] < 2) throw Error(ErrorKind::ResolutionTooCoarse, "macro grid needs >= 2 cells per axis");
    if (!(omega.extent[0] > 0 && omega.extent[1] > 0)) throw Error(ErrorKind::InvalidGeometry, "empty macro box");
  }
};

struct DarcyConfig {
  double tol = 1e-10;       ///< max |div u| relative to max |div(K f)| (or K|f|/h when that vanishes)
  int max_iter = 2000;
  double damping = 0.5;     ///< backtracking factor of the line search (full step tried first)
  double floor = 1e-3;      ///< lower bound of the normal slope relative to the linear one
  bool throw_on_failure = true;

  void validate() const {
    if (!(tol > 0) || max_iter < 1) throw Error(ErrorKind::InvalidConfig, "darcy tolerance / iterations");
    if (!(damping > 0 && damping <= 1)) throw Error(ErrorKind::InvalidConfig, "darcy damping in (0,1]");
    if (!(floor > 0 && floor <= 1)) throw Error(ErrorKind::InvalidConfig, "darcy floor in (0,1]");
  }
};

struct MacroSolution {
  MacroGrid mesh;
  ScalarField p_hat;  ///< mean zero
  VectorField u0;     ///< face fluxes; wall faces are zero
  int iterations = 0;
  double residual = 0.0;  ///< relative max |div u0|
  std::vector<double> residual_history;
  bool converged = false;
  bool all_rigid = false;
  double div_max = 0.0;          ///< absolute max |div u0|
  double boundary_flux = 0.0;    ///< max |ν·u0| on the walls
  double correction = 0.0;       ///< conservative reconstruction: max flux change / max flux

  /// Cell-centred velocity from the two adjacent faces per axis.
  Vec2 cell_velocity(int i, int j) const {
    return {0.5 * (u0.at(0, i, j) + u0.at(0, i + 1, j)), 0.5 * (u0.at(1, i, j) + u0.at(1, i, j + 1))};
  }
};

namespace detail {

/// Discrete operators: face gradients (normal and transverse), wall mask and cell divergence.
struct DarcyOperators {
  int nx, ny;
  double hx, hy;
  Eigen::Index nfx, nfy, ncell;
  SpMat normal, transverse, div;  ///< rows: x-faces then y-faces
  Vec interior;                   ///< 1 on interior faces, 0 on walls

  explicit DarcyOperators(const MacroGrid& m) : nx(m.dims[0]), ny(m.dims[1]) {
    auto h = m.spacing();
    hx = h[0];
    hy = h[1];
    nfx = static_cast<Eigen::Index>(nx + 1) * ny;
    nfy = static_cast<Eigen::Index>(nx) * (ny + 1);
    ncell = static_cast<Eigen::Index>(nx) * ny;
    interior = Vec::Zero(nfx + nfy);
    std::vector<Eigen::Triplet<double>> tn, tt, td;
    auto cell = [&](int i, int j) { return static_cast<Eigen::Index>(i) + static_cast<Eigen::Index>(nx) * j; };
    auto fx = [&](int i, int j) { return static_cast<Eigen::Index>(i) + static_cast<Eigen::Index>(nx + 1) * j; };
    auto fy = [&](int i, int j) { return nfx + i + static_cast<Eigen::Index>(nx) * j; };
    // cell-centred partial derivative along axis d, one-sided at walls
    auto central = [&](std::vector<Eigen::Triplet<double>>& t, Eigen::Index row, int i, int j, int d, double w) {
      int lo = d == 0 ? i - 1 : j - 1, hi = d == 0 ? i + 1 : j + 1, n = d == 0 ? nx : ny;
      double h = d == 0 ? hx : hy;
      int a = std::max(lo, 0), b = std::min(hi, n - 1);
      double span = (b - a) * h;
      auto at = [&](int k) { return d == 0 ? cell(k, j) : cell(i, k); };
      t.emplace_back(row, at(b), w / span);
      t.emplace_back(row, at(a), -w / span);
    };
    for (int j = 0; j < ny; ++j)
      for (int i = 1; i < nx; ++i) {
        Eigen::Index r = fx(i, j);
        interior[r] = 1.0;
        tn.emplace_back(r, cell(i, j), 1.0 / hx);
        tn.emplace_back(r, cell(i - 1, j), -1.0 / hx);
        central(tt, r, i - 1, j, 1, 0.5);
        central(tt, r, i, j, 1, 0.5);
      }
    for (int j = 1; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        Eigen::Index r = fy(i, j);
        interior[r] = 1.0;
        tn.emplace_back(r, cell(i, j), 1.0 / hy);
        tn.emplace_back(r, cell(i, j - 1), -1.0 / hy);
        central(tt, r, i, j - 1, 0, 0.5);
        central(tt, r, i, j, 0, 0.5);
      }
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        Eigen::Index c = cell(i, j);
        td.emplace_back(c, fx(i + 1, j), 1.0 / hx);
        td.emplace_back(c, fx(i, j), -1.0 / hx);
        td.emplace_back(c, fy(i, j + 1), 1.0 / hy);
        td.emplace_back(c, fy(i, j), -1.0 / hy);
      }
    normal.resize(nfx + nfy, ncell);
    normal.setFromTriplets(tn.begin(), tn.end());
    transverse.resize(nfx + nfy, ncell);
    transverse.setFromTriplets(tt.begin(), tt.end());
    div.resize(ncell, nfx + nfy);
    div.setFromTriplets(td.begin(), td.end());
  }

  /// Both components of ∇p at every face: (normal, transverse) mapped to (x, y).
  void face_gradient(const Vec& p, Vec& gx, Vec& gy) const {
    Vec n = normal * p, t = transverse * p;
    gx.resize(nfx + nfy);
    gy.resize(nfx + nfy);
    gx.head(nfx) = n.head(nfx);
    gy.head(nfx) = t.head(nfx);
    gx.tail(nfy) = t.tail(nfy);
    gy.tail(nfy) = n.tail(nfy);
  }

  /// Face-wise linear flux operator: row f is c_n ∂_ν p + c_t ∂_τ p on interior faces.
  SpMat flux_matrix(const Vec& cn, const Vec& ct) const {
    Vec a = cn.cwiseProduct(interior), b = ct.cwiseProduct(interior);
    SpMat m = a.asDiagonal() * normal;
    if (b.cwiseAbs().maxCoeff() > 0.0) m += b.asDiagonal() * transverse;
    return m;
  }
  SpMat flux_matrix(const Mat2& K) const {
    Vec cn(nfx + nfy), ct(nfx + nfy);
    cn.head(nfx).setConstant(K(0, 0));
    ct.head(nfx).setConstant(K(0, 1));
    cn.tail(nfy).setConstant(K(1, 1));
    ct.tail(nfy).setConstant(K(1, 0));
    return flux_matrix(cn, ct);
  }

  /// Solves div(M p) = rhs with one pinned cell and two refinement sweeps, then removes the mean.
  Vec solve(const SpMat& flux, const Vec& rhs) const {
    SpMat A = div * flux;
    Vec b = rhs;
    A.prune([](Eigen::Index r, Eigen::Index, double) { return r != 0; });
    A.coeffRef(0, 0) = 1.0;
    b[0] = 0.0;
    A.makeCompressed();
    Eigen::SparseLU<SpMat> lu(A);
    if (lu.info() != Eigen::Success) throw Error(ErrorKind::SingularK, "macro pressure system is singular");
    Vec p = lu.solve(b);
    for (int sweep = 0; sweep < 2; ++sweep) p += lu.solve(Vec(b - A * p));
    return p.array() - p.mean();
  }
};

inline void require_spd(const Mat2& K) {
  double scale = K.cwiseAbs().maxCoeff();
  if (!(scale > 0) || !K.allFinite()) throw Error(ErrorKind::SingularK, "permeability is zero or not finite");
  if (std::abs(K(0, 1) - K(1, 0)) > 1e-8 * scale) throw Error(ErrorKind::SingularK, "permeability is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (K + K.transpose()));
  if (!(es.eigenvalues().minCoeff() > 1e-14 * scale)) throw Error(ErrorKind::SingularK, "permeability is not positive definite");
}

inline void sample_faces(const DarcyOperators& ops, const MacroGrid& m, const Forcing& f, Vec& fx, Vec& fy) {
  StaggeredGrid g = m.grid();
  fx = Vec::Zero(ops.nfx + ops.nfy);
  fy = fx;
  Eigen::Index r = 0;
  for (int c = 0; c < 2; ++c) {
    auto fd = g.face_dims(c);
    for (int j = 0; j < fd[1]; ++j)
      for (int i = 0; i < fd[0]; ++i, ++r) {
        auto p = g.face_point(c, i, j);
        Vec2 v = f(p[0] + m.omega.corner[0], p[1] + m.omega.corner[1]);
        fx[r] = v[0];
        fy[r] = v[1];
      }
  }
}

inline MacroSolution package(const DarcyOperators& ops, const MacroGrid& m, const Vec& p, const Vec& flux) {
  MacroSolution s;
  s.mesh = m;
  StaggeredGrid g = m.grid();
  s.p_hat = ScalarField(g);
  for (Eigen::Index k = 0; k < ops.ncell; ++k) s.p_hat.values[k] = p[k];
  s.u0 = VectorField(g);
  for (Eigen::Index k = 0; k < ops.nfx; ++k) s.u0.comp[0][k] = flux[k];
  for (Eigen::Index k = 0; k < ops.nfy; ++k) s.u0.comp[1][k] = flux[ops.nfx + k];
  s.div_max = (ops.div * flux).cwiseAbs().maxCoeff();
  s.boundary_flux = (flux.array() * (1.0 - ops.interior.array())).abs().maxCoeff();
  s.all_rigid = flux.cwiseAbs().maxCoeff() == 0.0;
  return s;
}

/// Normal flux of the law on every interior face and, on request, its derivatives with respect to
/// the normal and transverse components of λ (central differences).
inline Vec face_flux(const DarcyOperators& ops, const LawFn& law, const Vec& lx, const Vec& ly, double step,
                     Vec* dn = nullptr, Vec* dt = nullptr) {
  const Eigen::Index nf = ops.nfx + ops.nfy;
  Vec flux = Vec::Zero(nf);
  if (dn) *dn = Vec::Zero(nf);
  if (dt) *dt = Vec::Zero(nf);
  for (Eigen::Index r = 0; r < nf; ++r) {
    if (ops.interior[r] == 0.0) continue;
    const int n = r < ops.nfx ? 0 : 1, t = 1 - n;
    Vec2 lam(lx[r], ly[r]);
    flux[r] = law(lam)[n];
    if (!dn) continue;
    double h = step * std::max(1.0, lam.norm());
    for (int d : {n, t}) {
      Vec2 a = lam, b = lam;
      a[d] += h;
      b[d] -= h;
      double v = (law(a)[n] - law(b)[n]) / (2.0 * h);
      (d == n ? (*dn)[r] : (*dt)[r]) = v;
    }
  }
  return flux;
}

}  // namespace detail

inline MacroSolution solve_linear_darcy(const Mat2& K, const Forcing& f, const MacroGrid& mesh) {
  mesh.validate();
  detail::require_spd(K);
  detail::DarcyOperators ops(mesh);
  Vec fx, fy;
  detail::sample_faces(ops, mesh, f, fx, fy);
  SpMat M = ops.flux_matrix(K);
  Vec kf(ops.nfx + ops.nfy);
  kf.head(ops.nfx) = (K(0, 0) * fx.head(ops.nfx) + K(0, 1) * fy.head(ops.nfx)).cwiseProduct(ops.interior.head(ops.nfx));
  kf.tail(ops.nfy) = (K(1, 0) * fx.tail(ops.nfy) + K(1, 1) * fy.tail(ops.nfy)).cwiseProduct(ops.interior.tail(ops.nfy));
  Vec p = ops.solve(M, ops.div * kf);
  Vec flux = kf - M * p;
  MacroSolution s = detail::package(ops, mesh, p, flux);
  double scale = (ops.div * kf).cwiseAbs().maxCoeff();
  if (!(scale > 0)) scale = std::max(kf.cwiseAbs().maxCoeff() / std::min(ops.hx, ops.hy), 1e-300);
  s.residual = s.div_max / scale;
  s.residual_history = {s.residual};
  s.converged = true;
  return s;
}

/// Damped Picard iteration: each step solves the problem linearized with face-wise derivatives of
/// the law (normal slope floored at a fraction of the linear one) and backtracks until the
/// residual decreases. The returned flux is made exactly conservative by a final linear
/// correction; `residual` is the nonlinear residual before it.
inline MacroSolution solve_nonlinear_darcy(const LawFn& law, const Mat2& K_lin, const Forcing& f,
                                           const MacroGrid& mesh, const DarcyConfig& cfg = {},
                                           const Vec* p_start = nullptr) {
  mesh.validate();
  cfg.validate();
  detail::require_spd(K_lin);
  detail::DarcyOperators ops(mesh);
  Vec fx, fy;
  detail::sample_faces(ops, mesh, f, fx, fy);

  Vec kf(ops.nfx + ops.nfy);
  kf.head(ops.nfx) = (K_lin(0, 0) * fx.head(ops.nfx) + K_lin(0, 1) * fy.head(ops.nfx)).cwiseProduct(ops.interior.head(ops.nfx));
  kf.tail(ops.nfy) = (K_lin(1, 0) * fx.tail(ops.nfy) + K_lin(1, 1) * fy.tail(ops.nfy)).cwiseProduct(ops.interior.tail(ops.nfy));
  double scale = (ops.div * kf).cwiseAbs().maxCoeff();
  if (!(scale > 0)) scale = std::max(kf.cwiseAbs().maxCoeff() / std::min(ops.hx, ops.hy), 1e-300);

  Vec p = p_start ? *p_start : Vec::Zero(ops.ncell);
  if (p.size() != ops.ncell) throw Error(ErrorKind::ShapeMismatch, "initial macro pressure size");
  const double step = 1e-6 * std::max(std::abs(fx.maxCoeff()), std::abs(fy.maxCoeff())) + 1e-12;
  Vec gx, gy, dn, dt;
  auto evaluate = [&](const Vec& q, bool jac) {
    ops.face_gradient(q, gx, gy);
    return detail::face_flux(ops, law, fx - gx, fy - gy, step, jac ? &dn : nullptr, jac ? &dt : nullptr);
  };
  Vec flux = evaluate(p, true);
  Vec r = ops.div * flux;
  double res = r.cwiseAbs().maxCoeff() / scale;
  std::vector<double> history{res};
  const SpMat lin = ops.flux_matrix(K_lin);
  Vec kn(ops.nfx + ops.nfy);
  kn.head(ops.nfx).setConstant(K_lin(0, 0));
  kn.tail(ops.nfy).setConstant(K_lin(1, 1));
  int it = 0;
  while (res > cfg.tol && it < cfg.max_iter) {
    ++it;
    bool accepted = false;
    // linearized flux of the law, falling back to the linear permeability if the line search fails
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      SpMat J = attempt == 0 ? ops.flux_matrix(dn.cwiseMax(cfg.floor * kn), dt) : lin;
      Vec dp = ops.solve(J, r);
      for (double theta = 1.0; theta >= 1e-6; theta *= cfg.damping) {
        Vec trial = p + theta * dp;
        Vec tflux = evaluate(trial, false);
        Vec tr = ops.div * tflux;
        double tres = tr.cwiseAbs().maxCoeff() / scale;
        if (tres < res) {
          p = trial;
          r = tr;
          res = tres;
          flux = evaluate(p, true);
          accepted = true;
          break;
        }
      }
    }
    history.push_back(res);
    if (!accepted) break;
  }
  // conservative reconstruction: remove the remaining divergence with one linear-permeability solve
  Vec phi = ops.solve(lin, ops.div * flux);
  Vec dflux = lin * phi;
  double fmax = flux.cwiseAbs().maxCoeff();
  flux -= dflux;
  p += phi;
  MacroSolution s = detail::package(ops, mesh, Vec(p.array() - p.mean()), flux);
  s.correction = fmax > 0.0 ? dflux.cwiseAbs().maxCoeff() / fmax : 0.0;
  s.iterations = it;
  s.residual = res;
  s.residual_history = std::move(history);
  s.converged = res <= cfg.tol;
  if (!s.converged && cfg.throw_on_failure)
    throw NonConvergence("nonlinear Darcy iteration", static_cast<std::size_t>(it), res);
  return s;
}

/// Nonlinear Darcy with a tabulated or g = 0 effective law.
inline MacroSolution solve_nonlinear_darcy(const EffectiveLaw& law, const Forcing& f, const MacroGrid& mesh,
                                           const DarcyConfig& cfg = {}) {
  if (!law.linear_K) throw Error(ErrorKind::InvalidConfig, "effective law has no linear permeability");
  if (law.g > 0.0 && !law.has_polar()) throw Error(ErrorKind::InvalidConfig, "effective law has no polar table");
  return solve_nonlinear_darcy([&](const Vec2& l) { return law.evaluate(l); }, *law.linear_K, f, mesh, cfg);
}

}  // namespace twoscale
