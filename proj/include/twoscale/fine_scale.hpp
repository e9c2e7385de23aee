#pragma once
/// Direct simulation on Ω_εδ with viscosity 2μ(εδ)² and yield gεδ, plus diagnostics:
/// pressure extension into the obstacles, a-priori norms, the Poincaré constant of the
/// perforated domain and the rigid-zone consistency report.

#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>

#include "twoscale/saddle_solver.hpp"

namespace twoscale {

struct FlowSolution {
  Mask2 mask;
  VectorField u;        ///< zero on solid faces and on ∂Ω
  ScalarField p_fluid;  ///< mean zero over fluid cells, zero on solid cells
  ScalarField p_ext;    ///< extension to all of Ω, mean zero over Ω
  double epsilon = 0.0, delta = 0.0;
  double mu_eff = 0.0, g_eff = 0.0;
  BinghamState state;
  double div_max = 0.0;  ///< max |div u| over Ω
};

struct AprioriNorms {
  double u_l2 = 0.0;            ///< ‖u‖
  double scaled_grad_l2 = 0.0;  ///< εδ‖∇u‖
  double p_l2 = 0.0;            ///< ‖p̃‖
};

/// Solid components (4-connected, no wrap) take the mean pressure of the fluid cells adjacent to
/// them; then the mean over Ω is removed.
inline ScalarField extend_pressure(const Mask2& mask, const ScalarField& p_fluid) {
  if (mask.size() != p_fluid.values.size()) throw Error(ErrorKind::ShapeMismatch, "pressure/mask size");
  const int nx = mask.dims[0], ny = mask.dims[1];
  ScalarField out = p_fluid;
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> stack, comp;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (mask.fluid(s) || label[s] >= 0) continue;
    comp.clear();
    label[s] = 1;
    stack.push_back(s);
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> touched;
    while (!stack.empty()) {
      std::size_t k = stack.back();
      stack.pop_back();
      comp.push_back(k);
      auto idx = mask.unindex(k);
      const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
      for (int q = 0; q < 4; ++q) {
        int i = idx[0] + di[q], j = idx[1] + dj[q];
        if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
        std::size_t n = mask.index({i, j});
        if (mask.fluid(n)) {
          // each adjacent fluid cell counted once
          if (label[n] != 2) {
            label[n] = 2;
            touched.push_back(n);
            sum += p_fluid.values[n];
            ++count;
          }
        } else if (label[n] < 0) {
          label[n] = 1;
          stack.push_back(n);
        }
      }
    }
    for (std::size_t n : touched) label[n] = -1;
    double v = count ? sum / count : 0.0;
    for (std::size_t k : comp) out.values[k] = v;
  }
  double mean = 0.0;
  for (double v : out.values) mean += v;
  mean /= static_cast<double>(out.values.size());
  for (double& v : out.values) v -= mean;
  return out;
}

inline FlowSolution solve_fine(const Domain2& dom, const VectorField& f, double g, double mu,
                               const SolverConfig& cfg = {}) {
  if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
  if (!(mu > 0)) throw Error(ErrorKind::InvalidConfig, "mu must be positive");
  FlowSolution sol;
  sol.mask = build_domain_mask(dom);
  sol.epsilon = dom.epsilon;
  sol.delta = dom.delta();
  const double ed = dom.eps_delta();
  sol.mu_eff = 2.0 * mu * ed * ed;
  sol.g_eff = g * ed;
  BinghamSolver solver(sol.mask, Boundary::dirichlet0(), sol.mu_eff, cfg);
  sol.state = solver.solve(f, sol.g_eff);
  sol.u = sol.state.u;
  sol.p_fluid = sol.state.p;
  sol.p_ext = extend_pressure(sol.mask, sol.p_fluid);
  sol.div_max = solver.op().max_divergence(solver.op().to_torus(sol.u));
  return sol;
}

/// Samples a forcing on the fine grid of `dom`.
template <class F>
VectorField sample_forcing(const Domain2& dom, F&& fn) {
  Mask2 m(dom.grid_dims(), dom.spacing());
  StaggeredGrid grid = StaggeredGrid::from_mask(m);
  VectorField f = VectorField::sample(grid, [&](double x, double y) {
    return fn(x + dom.omega.corner[0], y + dom.omega.corner[1]);
  });
  return f;
}

inline AprioriNorms apriori_norms(const FlowSolution& sol) {
  MacOperator op(sol.mask, Boundary::dirichlet0());
  Vec ut = op.to_torus(sol.u);
  AprioriNorms n;
  n.u_l2 = l2_norm(sol.u);
  n.scaled_grad_l2 = sol.epsilon * sol.delta * std::sqrt(op.area()) * (op.G() * ut).norm();
  n.p_l2 = l2_norm(sol.p_ext);
  return n;
}

/// C_P = 1/√λ_min of the cell-centred Dirichlet Laplacian on the fluid cells (Dirichlet on ∂Ω
/// and on every fluid/solid interface), by inverse iteration on the Rayleigh quotient.
inline double poincare_constant(const Mask2& mask, double rel_tol = 1e-9, int max_iter = 5000) {
  const int nx = mask.dims[0], ny = mask.dims[1];
  std::vector<Eigen::Index> row(mask.size(), -1);
  Eigen::Index n = 0;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask.fluid(k)) row[k] = n++;
  if (n == 0) throw Error(ErrorKind::DisconnectedFluid, "no fluid cells");
  std::vector<Eigen::Triplet<double>> tr;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (row[k] < 0) continue;
    auto idx = mask.unindex(k);
    double diag = 0.0;
    for (int d = 0; d < 2; ++d) {
      double w = 1.0 / (mask.spacing[d] * mask.spacing[d]);
      for (int step : {-1, 1}) {
        auto nb = idx;
        nb[d] += step;
        int lim = d == 0 ? nx : ny;
        if (nb[d] < 0 || nb[d] >= lim || !mask.fluid(nb)) {
          diag += 2.0 * w;  // zero value on the shared face
        } else {
          diag += w;
          tr.emplace_back(row[k], row[mask.index(nb)], -w);
        }
      }
    }
    tr.emplace_back(row[k], row[k], diag);
  }
  SpMat A(n, n);
  A.setFromTriplets(tr.begin(), tr.end());
  Eigen::SimplicialLLT<SpMat> llt(A);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::NonConvergence, "Dirichlet Laplacian factorisation");
  Vec x = Vec::Ones(n);
  double lambda = (x.dot(A * x)) / x.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    x = llt.solve(x);
    x /= x.norm();
    double next = x.dot(A * x);
    if (std::abs(next - lambda) <= rel_tol * next) return 1.0 / std::sqrt(next);
    lambda = next;
  }
  throw NonConvergence("inverse iteration for the Poincaré constant", static_cast<std::size_t>(max_iter), lambda);
}

inline double poincare_constant(const Domain2& dom) { return poincare_constant(build_domain_mask(dom)); }

/// Threshold-law consistency on the solver's own variables: the multiplier m plays the deviatoric
/// stress and ∇u the rate of strain (both with the Frobenius norm).
struct RigidZoneReport {
  Mask2 rigid;                     ///< user cells with |m| < g(1 - margin)
  std::size_t rigid_cells = 0;
  std::size_t flowing_cells = 0;
  double rigid_gradient = 0.0;     ///< max |∇u| over rigid cells / max |∇u| overall
  double relation_residual = 0.0;  ///< max |∇u - (1/mu)(1 - g/|m|)₊ m| elsewhere / max |∇u|
  double max_gradient = 0.0;

  bool passed(double rigid_tol, double relation_tol) const {
    return rigid_gradient <= rigid_tol && relation_residual <= relation_tol;
  }
};

inline RigidZoneReport rigid_zones(const Mask2& mask, const Boundary& bc, const VectorField& u,
                                   const AlVariables& full, double g_eff, double mu_eff, double margin = 1e-3) {
  if (full.m.size() == 0) throw Error(ErrorKind::MissingMultiplier, "rigid-zone report needs the multiplier");
  MacOperator op(mask, bc);
  if (full.m.size() != 4 * op.cells()) throw Error(ErrorKind::ShapeMismatch, "multiplier size");
  Vec gu = op.G() * op.to_torus(u);
  RigidZoneReport rep;
  rep.rigid = Mask2(mask.dims, mask.spacing, false);
  const Eigen::Index n = op.cells();
  for (Eigen::Index k = 0; k < n; ++k) rep.max_gradient = std::max(rep.max_gradient, gu.segment<4>(4 * k).norm());
  const double scale = rep.max_gradient > 0.0 ? rep.max_gradient : 1.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Vector4d m = full.m.segment<4>(4 * k), d = gu.segment<4>(4 * k);
    double mn = m.norm();
    if (mn < g_eff * (1.0 - margin)) {
      ++rep.rigid_cells;
      rep.rigid_gradient = std::max(rep.rigid_gradient, d.norm() / scale);
      if (op.user_cell(k)) rep.rigid.values[rep.rigid.index({op.ci(k), op.cj(k)})] = 1;
    } else {
      ++rep.flowing_cells;
      double f = mn > 0.0 ? std::max(0.0, 1.0 - g_eff / mn) / mu_eff : 1.0 / mu_eff;
      rep.relation_residual = std::max(rep.relation_residual, (d - f * m).norm() / scale);
    }
  }
  return rep;
}

inline RigidZoneReport rigid_zones(const FlowSolution& sol, double margin = 1e-3) {
  return rigid_zones(sol.mask, Boundary::dirichlet0(), sol.u, sol.state.full, sol.g_eff, sol.mu_eff, margin);
}

}  // namespace twoscale
