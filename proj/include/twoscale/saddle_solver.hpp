#pragma once
/// Stokes and Bingham solvers on masked staggered grids.
///
/// Bingham: augmented Lagrangian with w ≈ ∇u and multiplier m,
///   L(u,w,m) = (mu/2)|w|² + g|w| - (f,u) + (m, ∇u - w) + (r/2)|∇u - w|²,
/// minimised alternately over divergence-free u and pointwise over w, then m += r(∇u - w).
/// At a fixed point m is the total deviatoric stress: |m| ≤ g in rigid cells and
/// m = (mu + g/|∇u|)∇u where the fluid flows.

#include <Eigen/Dense>

#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <random>

#include "twoscale/mac_operator.hpp"

namespace twoscale {

struct SolverConfig {
  double tol_div = 1e-10;       ///< max|div u| relative to the Newtonian max|u|/h
  double tol_vi = 1e-7;         ///< |(f,u) - a(u,u) - j(u)| relative to the Newtonian energy
  double tol_coupling = 1e-7;   ///< |∇u - w| and |Δw| relative to the Newtonian gradient norm
  int max_outer = 20000;
  double r = 0.0;               ///< augmentation; 0 selects mu_eff
  double linear_tol = 1e-10;    ///< relative residual of each direct solve after refinement
  int linear_max_iter = 5;      ///< refinement sweeps allowed per solve
  double relaxation = 1.0;      ///< over-relaxation of ∇u in the w and m updates, in (0,2)
  bool accelerate = true;        ///< false: plain iteration; else Anderson or Nesterov with restart
  double restart_factor = 0.999;
  int anderson_memory = 5;       ///< > 0: safeguarded Anderson mixing instead of extrapolation
  VelocityBackend backend = VelocityBackend::Auto;
  bool throw_on_failure = true;
  bool record_energy = false;

  void validate() const {
    if (!(tol_div > 0 && tol_vi > 0 && tol_coupling > 0 && linear_tol > 0))
      throw Error(ErrorKind::InvalidConfig, "tolerances must be positive");
    if (anderson_memory < 0) throw Error(ErrorKind::InvalidConfig, "anderson_memory must be >= 0");
    if (max_outer < 1 || linear_max_iter < 0) throw Error(ErrorKind::InvalidConfig, "iteration limits");
    if (r < 0) throw Error(ErrorKind::InvalidConfig, "augmentation r must be positive");
    if (!(relaxation > 0 && relaxation < 2)) throw Error(ErrorKind::InvalidConfig, "relaxation in (0,2)");
  }
};

struct StokesResult {
  VectorField u;
  ScalarField p;
  double momentum_residual = 0.0;  ///< max |mu GᵀG u + ∇p - f| on active faces over max|f|
  double div_residual = 0.0;       ///< max |div u|
};

/// Auxiliary and multiplier variables on the full discretization (including wall frame cells).
struct AlVariables {
  Vec w, m;
};

struct BinghamState {
  VectorField u;
  ScalarField p;
  TensorField w;  ///< auxiliary gradient on the user cells
  TensorField m;  ///< multiplier on the user cells
  AlVariables full;
  int iterations = 0;
  bool converged = false;
  double coupling_residual = 0.0;
  double div_residual = 0.0;
  double vi_residual = 0.0;
  std::vector<double> energy_history;
  Boundary bc;
};

namespace detail {

inline void check_finite(const VectorField& f) {
  for (const auto& c : f.comp)
    for (double v : c)
      if (!std::isfinite(v)) throw Error(ErrorKind::InvalidConfig, "forcing is not finite");
}

inline void require_connected(const Mask2& mask, Boundary bc) {
  if (mask.count_fluid() == 0) throw Error(ErrorKind::DisconnectedFluid, "no fluid cells");
  if (count_fluid_components(mask, bc.periodic) != 1)
    throw Error(ErrorKind::DisconnectedFluid, "fluid region is not connected");
}

/// Pointwise shrinkage w = max(0, 1 - g/|s|) s / (mu + r).
inline void shrink(Vec& w, const Vec& s, double g, double denom) {
  const Eigen::Index n = s.size() / 4;
  for (Eigen::Index k = 0; k < n; ++k) {
    auto sk = s.segment<4>(4 * k);
    double ns = sk.norm();
    double f = ns > g ? (1.0 - g / ns) / denom : 0.0;
    w.segment<4>(4 * k) = f * sk;
  }
}


struct AlOutcome {
  Vec u, gu, w, m;
  int iterations = 0;
  bool converged = false;
  double coupling = 0.0, vi = 0.0, div = 0.0;
  std::vector<double> energy;
};

/// Augmented-Lagrangian loop over an abstract discretization. `Ops` provides
/// grad(u), grad_t(t), solve(rhs) (divergence-free minimiser of (r/2)|Gu|² - <rhs,u>),
/// pairing(f,u), area(), frobenius_sum(t), max_divergence(u), length_scale().
template <class Ops>
AlOutcome run_augmented_lagrangian(const Ops& ops, const Vec& ft, double g, double mu, double r,
                                   const SolverConfig& cfg, const AlVariables* start) {
  const Eigen::Index nt = ops.tensor_size();
  Vec w = Vec::Zero(nt), m = Vec::Zero(nt);
  if (start) {
    if (start->w.size() != nt || start->m.size() != nt)
      throw Error(ErrorKind::ShapeMismatch, "warm start has the wrong size");
    w = start->w;
    m = start->m;
  }
  const double rho = cfg.relaxation;
  AlOutcome out;
  // Scales of the Newtonian problem with viscosity mu (first iterate from zero, rescaled).
  Vec u_newton = ops.solve(ft);
  const double gscale = ops.grad(u_newton).norm();
  const double escale = std::abs(ops.pairing(ft, u_newton)) * r / mu;
  const double uscale = u_newton.cwiseAbs().maxCoeff() * r / mu / ops.length_scale();
  out.u = Vec::Zero(u_newton.size());
  out.gu = Vec::Zero(nt);
  Vec s(nt);
  bool ok = false, rigid = false;
  double dual = 0.0;
  if (gscale == 0.0) {
    // f is a discrete gradient: the fluid stays at rest for every yield value.
    ok = true;
    m.setZero();
    w.setZero();
  }
  // Iterate fed to the next step: extrapolated (Nesterov), mixed (Anderson) or plain.
  Vec w_hat = w, m_hat = m, w_new(nt), m_new(nt);
  double alpha = 1.0, c_prev = std::numeric_limits<double>::infinity();
  // Anderson state on x = (√r w, m/√r); plain steps never increase |F(x) - x| in this scaling.
  const double sr = std::sqrt(r);
  std::deque<Vec> dX, dG;
  Eigen::MatrixXd gram;  // dG[i]·dG[j], kept in step with the history
  Vec x_prev, g_prev, fb_w, fb_m;
  bool have_prev = false, aa_trial = false;
  double aa_norm = 0.0;
  int it = 0;
  while (!ok && it < cfg.max_outer) {
    ++it;
    Vec rhs = ft + ops.grad_t(r * w_hat - m_hat);
    out.u = ops.solve(rhs);
    out.gu = ops.grad(out.u);
    Vec gr = rho * out.gu + (1.0 - rho) * w_hat;
    s = m_hat + r * gr;
    shrink(w_new, s, g, mu + r);
    m_new = m_hat + r * (gr - w_new);

    if (cfg.accelerate && cfg.anderson_memory > 0) {
      Vec x(2 * nt), gk(2 * nt);
      x << sr * w_hat, m_hat / sr;
      gk << sr * w_new - x.head(nt), m_new / sr - x.tail(nt);
      const double gn = gk.norm();
      if (aa_trial && gn > aa_norm) {
        // Rejected mixing: continue from the plain step of the previous iterate.
        w_hat = fb_w;
        m_hat = fb_m;
        dX.clear();
        dG.clear();
        gram.resize(0, 0);
        have_prev = aa_trial = false;
        continue;
      }
      if (have_prev) {
        if (static_cast<int>(dX.size()) == cfg.anderson_memory) {
          dX.pop_front();
          dG.pop_front();
          const Eigen::Index k = gram.rows() - 1;
          gram = Eigen::MatrixXd(gram.bottomRightCorner(k, k));
        }
        dX.push_back(x - x_prev);
        dG.push_back(gk - g_prev);
        const Eigen::Index k = static_cast<Eigen::Index>(dG.size());
        gram.conservativeResize(k, k);
        for (Eigen::Index i = 0; i < k; ++i) gram(i, k - 1) = gram(k - 1, i) = dG[i].dot(dG.back());
      }
      x_prev = x;
      g_prev = gk;
      have_prev = true;
      fb_w = w_new;
      fb_m = m_new;
      if (!dG.empty()) {
        const int k = static_cast<int>(dG.size());
        Eigen::MatrixXd A = gram;
        Eigen::VectorXd b(k);
        for (int i = 0; i < k; ++i) b[i] = dG[i].dot(gk);
        A.diagonal().array() += 1e-12 * A.trace() + std::numeric_limits<double>::min();
        Eigen::VectorXd gamma = A.ldlt().solve(b);
        Vec xn = x + gk;
        for (int i = 0; i < k; ++i) xn -= gamma[i] * (dX[i] + dG[i]);
        w_hat = xn.head(nt) / sr;
        m_hat = xn.tail(nt) * sr;
        aa_trial = true;
        aa_norm = gn;
      } else {
        w_hat = w_new;
        m_hat = m_new;
        aa_trial = false;
      }
      dual = gk.head(nt).norm() / sr / gscale;
    } else if (cfg.accelerate) {
      dual = (w_new - w_hat).norm() / gscale;
      double c = (m_new - m_hat).squaredNorm() / r + r * (w_new - w_hat).squaredNorm();
      if (c < cfg.restart_factor * c_prev) {
        double alpha_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * alpha * alpha));
        double beta = (alpha - 1.0) / alpha_next;
        w_hat = w_new + beta * (w_new - w);
        m_hat = m_new + beta * (m_new - m);
        alpha = alpha_next;
        c_prev = c;
      } else {
        w_hat = w_new;
        m_hat = m_new;
        alpha = 1.0;
        c_prev = c / cfg.restart_factor;
      }
    } else {
      dual = (w_new - w_hat).norm() / gscale;
      w_hat = w_new;
      m_hat = m_new;
    }
    w = w_new;
    m = m_new;
    out.coupling = (out.gu - w).norm() / gscale;
    double fu = ops.pairing(ft, out.u);
    double auu = mu * ops.area() * out.gu.squaredNorm();
    double ju = g * ops.area() * ops.frobenius_sum(out.gu);
    out.vi = std::abs(fu - auu - ju) / escale;
    out.div = ops.max_divergence(out.u) / uscale;
    if (cfg.record_energy) out.energy.push_back(0.5 * auu + ju - fu);
    ok = out.coupling <= cfg.tol_coupling && dual <= cfg.tol_coupling && out.vi <= cfg.tol_vi &&
         out.div <= cfg.tol_div;
    rigid = (w.array() == 0.0).all();
    // Flows far below the Newtonian scale are resolved relative to their own size, so that
    // transients near the yield limit settle either to exact rest or to a resolved small flow.
    // Below 1e-12 of that scale the remaining flow is round-off left by the shrinkage near |s| = g.
    const double wn = w.norm();
    if (ok && !rigid && wn <= 1e-12 * gscale) {
      rigid = true;
      w.setZero();
    } else if (ok && !rigid && wn < 1e-3 * gscale)
      ok = (out.gu - w).norm() <= cfg.tol_coupling * wn && dual * gscale <= cfg.tol_coupling * wn;
  }
  if (ok && rigid && gscale > 0.0) {
    // Converged with w = Gu = 0 everywhere: the discrete fixed point is the rest state.
    out.u.setZero();
    out.gu.setZero();
  }
  if (!ok && cfg.throw_on_failure)
    throw NonConvergence("augmented Lagrangian", static_cast<std::size_t>(it),
                         std::max({out.coupling, dual, out.vi, out.div}));
  out.coupling = std::max(out.coupling, dual);
  out.iterations = it;
  out.converged = ok;
  out.w = std::move(w);
  out.m = std::move(m);
  return out;
}

/// Adapter exposing a masked MAC grid and its projector to the generic loop.
struct MacAlOps {
  const MacOperator& op;
  const VelocityProjector& proj;

  Eigen::Index tensor_size() const { return 4 * op.cells(); }
  Vec grad(const Vec& u) const { return op.G() * u; }
  Vec grad_t(const Vec& t) const { return op.G().transpose() * t; }
  Vec solve(const Vec& rhs) const { return proj.solve(rhs); }
  double pairing(const Vec& f, const Vec& u) const { return op.pairing(f, u); }
  double area() const { return op.area(); }
  double frobenius_sum(const Vec& t) const { return op.frobenius_sum(t); }
  double max_divergence(const Vec& u) const { return op.max_divergence(u); }
  double length_scale() const { return std::min(op.spacing(0), op.spacing(1)); }
};

}  // namespace detail

class StokesSolver {
 public:
  StokesSolver(const Mask2& mask, Boundary bc, double mu_eff, SolverConfig cfg = {})
      : op_(mask, bc), mu_(mu_eff), cfg_(cfg) {
    cfg_.validate();
    if (!(mu_eff > 0)) throw Error(ErrorKind::InvalidConfig, "mu_eff must be positive");
    detail::require_connected(mask, bc);
    proj_ = make_projector(op_, mu_, cfg_.backend, cfg_.linear_tol, cfg_.linear_max_iter);
    pres_ = std::make_unique<PressureRecovery>(op_);
  }

  const MacOperator& op() const { return op_; }

  StokesResult solve(const VectorField& f) const {
    detail::check_finite(f);
    Vec ft = op_.restrict_active(op_.to_torus(f));
    Vec u = proj_->solve(ft);
    Vec R = ft - mu_ * (op_.G().transpose() * (op_.G() * u));
    Vec p = pres_->recover(R);
    StokesResult out{op_.to_user(u), op_.scalar_to_user(p), 0.0, op_.max_divergence(u)};
    Vec res = R - op_.grad(p);
    double fs = ft.cwiseAbs().maxCoeff();
    out.momentum_residual = fs > 0 ? op_.restrict_active(res).cwiseAbs().maxCoeff() / fs : 0.0;
    double us = u.cwiseAbs().maxCoeff() / std::min(op_.spacing(0), op_.spacing(1));
    if (us > 0 && out.div_residual > cfg_.tol_div * us)
      throw NonConvergence("Stokes divergence", 1, out.div_residual / us);
    return out;
  }

 private:
  MacOperator op_;
  double mu_;
  SolverConfig cfg_;
  std::unique_ptr<VelocityProjector> proj_;
  std::unique_ptr<PressureRecovery> pres_;
};

inline StokesResult solve_stokes(const Mask2& mask, const VectorField& f, double mu_eff, Boundary bc,
                                 const SolverConfig& cfg = {}) {
  return StokesSolver(mask, bc, mu_eff, cfg).solve(f);
}

/// Reusable Bingham solver: the velocity factorization depends only on mask, bc and r.
class BinghamSolver {
 public:
  BinghamSolver(const Mask2& mask, Boundary bc, double mu_eff, SolverConfig cfg = {})
      : op_(mask, bc), mu_(mu_eff), cfg_(cfg) {
    cfg_.validate();
    if (!(mu_eff > 0)) throw Error(ErrorKind::InvalidConfig, "mu_eff must be positive");
    detail::require_connected(mask, bc);
    r_ = cfg_.r > 0 ? cfg_.r : mu_eff;
    proj_ = make_projector(op_, r_, cfg_.backend, cfg_.linear_tol, cfg_.linear_max_iter);
    pres_ = std::make_unique<PressureRecovery>(op_);
  }

  const MacOperator& op() const { return op_; }
  double augmentation() const { return r_; }

  BinghamState solve(const VectorField& f, double g_eff, const AlVariables* start = nullptr) const {
    if (g_eff < 0) throw Error(ErrorKind::NegativeYield, "g_eff must be non-negative");
    detail::check_finite(f);
    Vec ft = op_.restrict_active(op_.to_torus(f));
    detail::MacAlOps ops{op_, *proj_};
    auto out = detail::run_augmented_lagrangian(ops, ft, g_eff, mu_, r_, cfg_, start);
    const SpMat& G = op_.G();
    BinghamState st;
    st.bc = op_.boundary();
    st.iterations = out.iterations;
    st.converged = out.converged;
    st.coupling_residual = out.coupling;
    st.vi_residual = out.vi;
    st.div_residual = out.div;
    st.energy_history = std::move(out.energy);
    Vec R = ft - G.transpose() * out.m - r_ * (G.transpose() * (out.gu - out.w));
    Vec p = pres_->recover(R);
    st.u = op_.to_user(out.u);
    st.p = op_.scalar_to_user(p);
    st.w = op_.tensor_to_user(out.w);
    st.m = op_.tensor_to_user(out.m);
    st.full = AlVariables{out.w, out.m};
    return st;
  }

 private:
  MacOperator op_;
  double mu_, r_ = 0.0;
  SolverConfig cfg_;
  std::unique_ptr<VelocityProjector> proj_;
  std::unique_ptr<PressureRecovery> pres_;
};

inline BinghamState solve_bingham(const Mask2& mask, const VectorField& f, double g_eff, double mu_eff,
                                  Boundary bc, const SolverConfig& cfg = {}) {
  if (g_eff < 0) throw Error(ErrorKind::NegativeYield, "g_eff must be non-negative");
  return BinghamSolver(mask, bc, mu_eff, cfg).solve(f, g_eff);
}

/// J(v) = a(v,v)/2 + j(v) - (f,v).
inline double bingham_energy(const MacOperator& op, const VectorField& v, const VectorField& f,
                             double g_eff, double mu_eff) {
  Vec vt = op.to_torus(v), ft = op.to_torus(f);
  return 0.5 * op.a(vt, vt, mu_eff) + op.j(vt, g_eff) - op.pairing(ft, vt);
}

/// Full discrete velocity gradient on the user cells, as seen by the solver.
inline TensorField solver_gradient(const MacOperator& op, const VectorField& u) {
  return op.tensor_to_user(op.G() * op.to_torus(u));
}

/// max over probes of max(0, (f, v-u) - a(u, v-u) - j(v) + j(u)), absolute units.
inline double residual_vi(const MacOperator& op, const VectorField& u, const VectorField& f,
                          double g_eff, double mu_eff, const std::vector<VectorField>& probes) {
  Vec ut = op.to_torus(u), ft = op.to_torus(f);
  const double hmin = std::min(op.spacing(0), op.spacing(1));
  double worst = 0.0;
  for (const auto& v : probes) {
    Vec vt = op.to_torus(v);
    double vmax = vt.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < vt.size(); ++k)
      if (!op.face_active(k) && std::abs(vt[k]) > 1e-12 * std::max(vmax, 1e-300))
        throw Error(ErrorKind::InadmissibleProbe, "probe does not vanish on solid faces");
    // User-level faces beyond the torus (none) and the wall rows are covered above.
    if (vmax > 0 && op.max_divergence(vt) > 1e-8 * vmax / hmin)
      throw Error(ErrorKind::InadmissibleProbe, "probe is not divergence-free");
    Vec d = vt - ut;
    double r = op.pairing(ft, d) - op.a(ut, d, mu_eff) - op.j(vt, g_eff) + op.j(ut, g_eff);
    worst = std::max(worst, r);
  }
  return worst;
}

inline double residual_vi(const BinghamState& st, const VectorField& f, double g_eff, double mu_eff,
                          const std::vector<VectorField>& probes) {
  if (!st.u.mask) throw Error(ErrorKind::InvalidConfig, "state carries no mask");
  MacOperator op(*st.u.mask, st.bc);
  return residual_vi(op, st.u, f, g_eff, mu_eff, probes);
}

/// Random admissible divergence-free field: a Stokes solve driven by white-noise forcing.
inline VectorField random_admissible_field(const StokesSolver& solver, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  VectorField f(solver.op().grid());
  for (auto& c : f.comp)
    for (auto& v : c) v = N(rng);
  return solver.solve(f).u;
}

}  // namespace twoscale
