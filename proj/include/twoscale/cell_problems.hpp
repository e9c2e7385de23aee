#pragma once
/// Cell problems on Y* × Z* for the effective linear permeability and the nonlinear Darcy map.
///
/// At every Y* grid cell y there is a Z-periodic flow χ(y,·) on Z*, vanishing on ∂Z_s and
/// divergence-free in z. The Z-averages U(y) = ∫_{Z*} χ(y,z) dz must be divergence-free in y,
/// Y-periodic and tangent to ∂Y_s; a multiplier q on Y* enforces this. The viscous coefficient of
/// the limit problem is 2μ, the yield coefficient g and the forcing a constant vector λ.
///
/// div_y is discretised collocated: the flux through a Y face is the mean of the two adjacent
/// cell values, and zero across faces that touch Y_s.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>

#include "twoscale/saddle_solver.hpp"

namespace twoscale {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Fluid mask of a reference cell with n grid cells per edge; obstacle edges must lie on grid lines.
inline Mask2 rect_cell_mask(const RectCell2& cell, int n) {
  if (n < 4) throw Error(ErrorKind::ResolutionTooCoarse, "cell resolution must be >= 4");
  Mask2 m({n, n}, {cell.lengths[0] / n, cell.lengths[1] / n});
  for (const auto& b : cell.obstacles) detail::carve_box(m, b, {0.0, 0.0});
  return m;
}

struct CellConfig {
  int y_resolution = 8;  ///< grid cells per Y edge
  int z_resolution = 8;  ///< grid cells per Z edge
  SolverConfig solver;   ///< augmented-Lagrangian settings for the Bingham solves
  // two-level outer iteration
  int outer_max = 5000;
  double outer_tol = 1e-6;
  double outer_relax = 1.0;
  // polar table used by the two-level strategy for the Z-level law
  int theta_nodes = 72;
  double threshold_tol = 1e-4;  ///< relative bracket width of the thresholds that anchor polar tables

  void validate() const {
    if (y_resolution < 4 || z_resolution < 4)
      throw Error(ErrorKind::ResolutionTooCoarse, "cell resolutions must be >= 4");
    if (outer_max < 1 || !(outer_tol > 0) || !(outer_relax > 0 && outer_relax <= 1.0))
      throw Error(ErrorKind::InvalidConfig, "two-level outer iteration settings");
    if (theta_nodes < 4) throw Error(ErrorKind::InvalidConfig, "theta_nodes must be >= 4");
    if (!(threshold_tol > 0 && threshold_tol <= 0.1)) throw Error(ErrorKind::InvalidConfig, "threshold_tol in (0, 0.1]");
    solver.validate();
  }
};

enum class CellStrategy { Product, TwoLevel };

inline const char* to_string(CellStrategy s) { return s == CellStrategy::Product ? "product" : "two_level"; }

inline CellStrategy parse_strategy(const std::string& s) {
  if (s == "product") return CellStrategy::Product;
  if (s == "two_level") return CellStrategy::TwoLevel;
  throw Error(ErrorKind::InvalidConfig, "unknown cell strategy '" + s + "'");
}

namespace detail {

inline void require_cell_geometry(const CellGeometry2& g) {
  require_valid(g);
  if (g.z_cell.obstacles.empty())
    throw Error(ErrorKind::InvalidGeometry, "cell problems need a nonempty Z_s (no-slip surface)");
}

/// Symmetric pseudo-inverse through an eigen-decomposition; drops modes below rel_tol·λ_max.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rel_tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const auto& ev = es.eigenvalues();
  double top = ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev[i]) > rel_tol * top) inv[i] = 1.0 / ev[i];
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Z-level discretisation: periodic MAC grid on Z*, unit forcings and the z-integral L.
class ZCell {
 public:
  ZCell(const RectCell2& z_cell, int resolution)
      : mask_(rect_cell_mask(z_cell, resolution)), op_(mask_, Boundary::periodic_box()) {
    if (count_fluid_components(mask_, {true, true}) != 1)
      throw Error(ErrorKind::DisconnectedFluid, "Z* is not connected");
    for (int k = 0; k < 2; ++k) {
      unit_[k] = Vec::Zero(op_.faces());
      for (Eigen::Index f = k * op_.cells(); f < (k + 1) * op_.cells(); ++f)
        if (op_.face_active(f)) unit_[k][f] = 1.0;
    }
    fluid_volume_ = mask_.count_fluid() * mask_.cell_volume();
  }

  const Mask2& mask() const { return mask_; }
  const MacOperator& op() const { return op_; }
  const Vec& unit(int k) const { return unit_[k]; }
  double fluid_volume() const { return fluid_volume_; }

  /// ∫_{Z*} χ dz for a face vector (each face carries the cell area).
  Vec2 integral(const Eigen::Ref<const Vec>& chi) const {
    const Eigen::Index n = op_.cells();
    return Vec2(chi.segment(0, n).sum(), chi.segment(n, n).sum()) * op_.area();
  }

 private:
  Mask2 mask_;
  MacOperator op_;
  std::array<Vec, 2> unit_;
  double fluid_volume_ = 0.0;
};

/// Collocated Y-level divergence on the Y* cells.
class YCell {
 public:
  YCell(const RectCell2& y_cell, int resolution) : mask_(rect_cell_mask(y_cell, resolution)) {
    if (count_fluid_components(mask_, {true, true}) != 1)
      throw Error(ErrorKind::DisconnectedFluid, "Y* is not connected");
    const int n0 = mask_.dims[0], n1 = mask_.dims[1];
    index_.assign(mask_.size(), -1);
    for (std::size_t k = 0; k < mask_.size(); ++k)
      if (mask_.fluid(k)) {
        index_[k] = static_cast<Eigen::Index>(cells_.size());
        cells_.push_back(k);
      }
    const Eigen::Index nc = static_cast<Eigen::Index>(cells_.size());
    std::vector<Eigen::Triplet<double>> tr;
    for (Eigen::Index c = 0; c < nc; ++c) {
      auto idx = mask_.unindex(cells_[c]);
      for (int d = 0; d < 2; ++d) {
        double ih = 1.0 / mask_.spacing[d];
        for (int step : {-1, 1}) {
          auto nb = idx;
          int dim = d == 0 ? n0 : n1;
          nb[d] = (nb[d] + step + dim) % dim;
          Eigen::Index cn = index_[mask_.index(nb)];
          if (cn < 0) continue;  // no flux through ∂Y_s
          // face flux ½(U_c + U_n), outward sign `step`
          tr.emplace_back(c, 2 * c + d, 0.5 * step * ih);
          tr.emplace_back(c, 2 * cn + d, 0.5 * step * ih);
        }
      }
    }
    B_.resize(nc, 2 * nc);
    B_.setFromTriplets(tr.begin(), tr.end());
    fluid_volume_ = mask_.count_fluid() * mask_.cell_volume();
  }

  const Mask2& mask() const { return mask_; }
  Eigen::Index count() const { return static_cast<Eigen::Index>(cells_.size()); }
  std::size_t cell_index(Eigen::Index c) const { return cells_[c]; }
  /// B maps interleaved (U_c0, U_c1) pairs to cell divergences.
  const SpMat& B() const { return B_; }
  double cell_area() const { return mask_.cell_volume(); }
  double fluid_volume() const { return fluid_volume_; }

  /// M = B (Kr ⊗ I) Bᵀ for a 2×2 block Kr.
  Eigen::MatrixXd coupling_matrix(const Mat2& Kr) const {
    const Eigen::Index nc = count();
    SpMat KI(2 * nc, 2 * nc);
    std::vector<Eigen::Triplet<double>> tr;
    for (Eigen::Index c = 0; c < nc; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) tr.emplace_back(2 * c + a, 2 * c + b, Kr(a, b));
    KI.setFromTriplets(tr.begin(), tr.end());
    return Eigen::MatrixXd(B_ * KI * SpMat(B_.transpose()));
  }

 private:
  Mask2 mask_;
  std::vector<std::size_t> cells_;
  std::vector<Eigen::Index> index_;
  SpMat B_;
  double fluid_volume_ = 0.0;
};

struct CellSolution {
  Vec2 lambda = Vec2::Zero();
  Vec2 flux = Vec2::Zero();  ///< 𝒦(λ) = (1/(|Y*||Z*|)) ∫∫ χ
  Eigen::MatrixXd chi;       ///< product strategy: Z face vectors, one column per Y* cell
  Eigen::MatrixXd pi;        ///< z-pressure per Y* cell (product strategy)
  Vec q;                     ///< multiplier on the Y* cells
  Eigen::MatrixXd averages;  ///< U(y) = ∫_{Z*} χ dz, 2 × #Y* cells
  double div_z = 0.0;        ///< max |div_z χ| over the product grid
  double div_y = 0.0;        ///< max |div_y U| over Y*
  int iterations = 0;
  bool converged = true;
  CellStrategy strategy = CellStrategy::Product;
};

/// Full Y* × Z* discretisation with both multipliers. The divergence-free step is solved exactly:
/// per Y* cell a periodic Z Stokes solve, then q from the Y-level coupling system.
class ProductCell {
 public:
  ProductCell(const CellGeometry2& geom, double mu, double r, const CellConfig& cfg)
      : z_(geom.z_cell, cfg.z_resolution), y_(geom.y_cell, cfg.y_resolution), mu2_(2.0 * mu), r_(r) {
    detail::require_cell_geometry(geom);
    if (!(mu > 0)) throw Error(ErrorKind::InvalidConfig, "mu must be positive");
    proj_ = std::make_unique<KktProjector>(z_.op(), r_, cfg.solver.linear_tol, cfg.solver.linear_max_iter);
    for (int k = 0; k < 2; ++k) zeta_[k] = proj_->solve(z_.unit(k));
    for (int k = 0; k < 2; ++k) Kr_.col(k) = z_.integral(zeta_[k]);
    Kr_ = 0.5 * (Kr_ + Kr_.transpose()).eval();
    Mq_pinv_ = detail::pseudo_inverse(y_.coupling_matrix(Kr_));
    pres_ = std::make_unique<PressureRecovery>(z_.op());
  }

  const ZCell& z() const { return z_; }
  const YCell& y() const { return y_; }
  double viscosity() const { return mu2_; }
  double augmentation() const { return r_; }
  /// ∫_{Z*} of the Z response to unit forcing with viscosity r.
  const Mat2& response() const { return Kr_; }
  Eigen::Index face_count() const { return z_.op().faces(); }
  Eigen::Index columns() const { return y_.count(); }

  /// Uniform forcing λ in every Y* cell, stacked column-major.
  Vec forcing(const Vec2& lambda) const {
    Vec col = lambda[0] * z_.unit(0) + lambda[1] * z_.unit(1);
    Vec out(face_count() * columns());
    for (Eigen::Index c = 0; c < columns(); ++c) out.segment(c * face_count(), face_count()) = col;
    return out;
  }

  /// Divergence-free minimiser of (r/2)|∇_z χ|² - <rhs, χ> subject to div_y U = 0.
  /// Also returns the multiplier q through `q_out` when given.
  Vec solve(const Vec& rhs, Vec* q_out = nullptr) const {
    const Eigen::Index nf = face_count(), nc = columns();
    Eigen::MatrixXd X(nf, nc);
    Eigen::MatrixXd U(2, nc);
    for (Eigen::Index c = 0; c < nc; ++c) {
      X.col(c) = proj_->solve(rhs.segment(c * nf, nf));
      U.col(c) = z_.integral(X.col(c));
    }
    Vec q = Mq_pinv_ * (y_.B() * Eigen::Map<const Vec>(U.data(), 2 * nc));
    Vec bq = y_.B().transpose() * q;
    for (Eigen::Index c = 0; c < nc; ++c)
      X.col(c) -= bq[2 * c] * zeta_[0] + bq[2 * c + 1] * zeta_[1];
    if (q_out) *q_out = q;
    return Eigen::Map<const Vec>(X.data(), nf * nc);
  }

  Eigen::MatrixXd averages(const Vec& chi) const {
    const Eigen::Index nf = face_count(), nc = columns();
    Eigen::MatrixXd U(2, nc);
    for (Eigen::Index c = 0; c < nc; ++c) U.col(c) = z_.integral(chi.segment(c * nf, nf));
    return U;
  }

  Vec2 flux(const Vec& chi) const {
    Vec2 s = averages(chi).rowwise().sum() * y_.cell_area();
    return s / (y_.fluid_volume() * z_.fluid_volume());
  }

  double max_div_y(const Eigen::MatrixXd& U) const {
    Vec d = y_.B() * Eigen::Map<const Vec>(U.data(), U.size());
    return d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
  }

  /// Face pressure residual -> z-pressure per Y* cell.
  Eigen::MatrixXd pressures(const Vec& R) const {
    const Eigen::Index nf = face_count(), nc = columns();
    Eigen::MatrixXd P(z_.op().cells(), nc);
    for (Eigen::Index c = 0; c < nc; ++c) P.col(c) = pres_->recover(R.segment(c * nf, nf));
    return P;
  }

  const PressureRecovery& pressure_recovery() const { return *pres_; }

 private:
  ZCell z_;
  YCell y_;
  double mu2_, r_;
  std::unique_ptr<KktProjector> proj_;
  std::array<Vec, 2> zeta_;
  Mat2 Kr_ = Mat2::Zero();
  Eigen::MatrixXd Mq_pinv_;
  std::unique_ptr<PressureRecovery> pres_;
};

namespace detail {

/// Block-diagonal Z gradient on the stacked product vector.
struct ProductAlOps {
  const ProductCell& cell;

  Eigen::Index nf() const { return cell.face_count(); }
  Eigen::Index nc() const { return cell.columns(); }
  const MacOperator& op() const { return cell.z().op(); }
  Eigen::Index tensor_size() const { return 4 * op().cells() * nc(); }
  Vec grad(const Vec& u) const {
    Eigen::Map<const Eigen::MatrixXd> U(u.data(), nf(), nc());
    Eigen::MatrixXd T = op().G() * U;
    return Eigen::Map<const Vec>(T.data(), T.size());
  }
  Vec grad_t(const Vec& t) const {
    Eigen::Map<const Eigen::MatrixXd> T(t.data(), 4 * op().cells(), nc());
    Eigen::MatrixXd U = op().G().transpose() * T;
    return Eigen::Map<const Vec>(U.data(), U.size());
  }
  Vec solve(const Vec& rhs) const { return cell.solve(rhs); }
  double area() const { return op().area() * cell.y().cell_area(); }
  double pairing(const Vec& f, const Vec& u) const { return area() * f.dot(u); }
  double frobenius_sum(const Vec& t) const {
    double s = 0.0;
    for (Eigen::Index k = 0; k + 4 <= t.size(); k += 4) s += t.segment<4>(k).norm();
    return s;
  }
  double max_divergence(const Vec& u) const {
    double m = 0.0;
    for (Eigen::Index c = 0; c < nc(); ++c) m = std::max(m, op().max_divergence(u.segment(c * nf(), nf())));
    return m;
  }
  double length_scale() const { return std::min(op().spacing(0), op().spacing(1)); }
};

inline double max_div_z(const ProductCell& cell, const Vec& chi) {
  ProductAlOps ops{cell};
  return ops.max_divergence(chi);
}

}  // namespace detail

/// Linear cell problems χ_i (forcing e_i) and K_ij = (1/(|Y*||Z*|)) ∫∫ (χ_j)_i.
struct LinearCellResult {
  Mat2 K = Mat2::Zero();
  std::array<CellSolution, 2> chi;
};

inline CellSolution finish_linear(const ProductCell& cell, const Vec2& lambda) {
  CellSolution s;
  s.lambda = lambda;
  Vec F = cell.forcing(lambda);
  Vec q;
  Vec chi = cell.solve(F, &q);
  s.chi = Eigen::Map<const Eigen::MatrixXd>(chi.data(), cell.face_count(), cell.columns());
  s.q = q;
  s.averages = cell.averages(chi);
  s.flux = cell.flux(chi);
  s.div_z = detail::max_div_z(cell, chi);
  s.div_y = cell.max_div_y(s.averages);
  // z-pressure: residual of r GᵀG χ + ∇π = F - (Bᵀq) e
  const auto& op = cell.z().op();
  Vec bq = cell.y().B().transpose() * q;
  Vec R(chi.size());
  for (Eigen::Index c = 0; c < cell.columns(); ++c) {
    auto seg = chi.segment(c * cell.face_count(), cell.face_count());
    R.segment(c * cell.face_count(), cell.face_count()) =
        F.segment(c * cell.face_count(), cell.face_count()) - bq[2 * c] * cell.z().unit(0) -
        bq[2 * c + 1] * cell.z().unit(1) - cell.augmentation() * (op.G().transpose() * (op.G() * seg));
  }
  s.pi = cell.pressures(R);
  return s;
}

inline LinearCellResult solve_linear_cell(const CellGeometry2& geom, double mu, const CellConfig& cfg = {}) {
  cfg.validate();
  ProductCell cell(geom, mu, 2.0 * mu, cfg);
  LinearCellResult out;
  for (int i = 0; i < 2; ++i) {
    out.chi[i] = finish_linear(cell, Vec2::Unit(i));
    out.K.col(i) = out.chi[i].flux;
  }
  return out;
}

/// Product-strategy Bingham cell solver; the factorisations are reused across λ.
class ProductCellSolver {
 public:
  ProductCellSolver(const CellGeometry2& geom, double mu, const CellConfig& cfg)
      : cfg_(cfg), mu2_(2.0 * mu) {
    cfg_.validate();
    double r = cfg_.solver.r > 0 ? cfg_.solver.r : mu2_;
    cell_ = std::make_unique<ProductCell>(geom, mu, r, cfg_);
  }

  const ProductCell& cell() const { return *cell_; }

  /// `strict = false` returns the last iterate instead of throwing on non-convergence.
  CellSolution solve(const Vec2& lambda, double g, const AlVariables* start = nullptr, bool strict = true) const {
    if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
    CellSolution s;
    s.strategy = CellStrategy::Product;
    s.lambda = lambda;
    const auto& cell = *cell_;
    Vec F = cell.forcing(lambda);
    detail::ProductAlOps ops{cell};
    SolverConfig sc = cfg_.solver;
    if (!strict) sc.throw_on_failure = false;
    auto out = detail::run_augmented_lagrangian(ops, F, g, mu2_, cell.augmentation(), sc, start);
    s.iterations = out.iterations;
    s.converged = out.converged;
    s.chi = Eigen::Map<const Eigen::MatrixXd>(out.u.data(), cell.face_count(), cell.columns());
    s.averages = cell.averages(out.u);
    s.flux = cell.flux(out.u);
    s.div_z = ops.max_divergence(out.u);
    s.div_y = cell.max_div_y(s.averages);
    // Multipliers from one more divergence-free step at the final (w, m).
    Vec rhs = F + ops.grad_t(cell.augmentation() * out.w - out.m);
    Vec q;
    Vec chi_last = cell.solve(rhs, &q);
    s.q = q;
    Vec bq = cell.y().B().transpose() * q;
    Vec R = rhs - cell.augmentation() * ops.grad_t(ops.grad(chi_last));
    for (Eigen::Index c = 0; c < cell.columns(); ++c)
      R.segment(c * cell.face_count(), cell.face_count()) -=
          bq[2 * c] * cell.z().unit(0) + bq[2 * c + 1] * cell.z().unit(1);
    s.pi = cell.pressures(R);
    last_ = AlVariables{std::move(out.w), std::move(out.m)};
    return s;
  }

  /// (w, m) of the most recent solve, usable as a warm start.
  const AlVariables& last_variables() const { return last_; }

  /// Directional VI residual max over probes of max(0, (λ,Φ-χ) - a(χ,Φ-χ) - j(Φ) + j(χ)).
  double residual_vi(const CellSolution& s, double g, const std::vector<Vec>& probes) const {
    const auto& cell = *cell_;
    detail::ProductAlOps ops{cell};
    Vec F = cell.forcing(s.lambda);
    Vec chi = Eigen::Map<const Vec>(s.chi.data(), s.chi.size());
    Vec gchi = ops.grad(chi);
    double jchi = g * ops.area() * ops.frobenius_sum(gchi);
    double worst = 0.0;
    for (const auto& phi : probes) {
      if (phi.size() != chi.size()) throw Error(ErrorKind::InadmissibleProbe, "probe size");
      double scale = std::max(phi.cwiseAbs().maxCoeff(), 1e-300);
      for (Eigen::Index c = 0; c < cell.columns(); ++c)
        for (Eigen::Index f = 0; f < cell.face_count(); ++f)
          if (!cell.z().op().face_active(f) && std::abs(phi[c * cell.face_count() + f]) > 1e-12 * scale)
            throw Error(ErrorKind::InadmissibleProbe, "probe does not vanish on ∂Z_s");
      if (ops.max_divergence(phi) > 1e-8 * scale / ops.length_scale())
        throw Error(ErrorKind::InadmissibleProbe, "probe is not divergence-free in z");
      if (cell.max_div_y(cell.averages(phi)) > 1e-8 * scale * cell.z().fluid_volume() / cell.y().mask().spacing[0])
        throw Error(ErrorKind::InadmissibleProbe, "probe average is not divergence-free in y");
      Vec d = phi - chi;
      Vec gphi = ops.grad(phi);
      double r = ops.pairing(F, d) - mu2_ * ops.area() * gchi.dot(gphi - gchi) -
                 g * ops.area() * ops.frobenius_sum(gphi) + jchi;
      worst = std::max(worst, r);
    }
    return worst;
  }

  /// Random element of the admissible set: the linear response to white-noise forcing.
  Vec random_admissible(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    Vec f(cell_->face_count() * cell_->columns());
    for (Eigen::Index k = 0; k < f.size(); ++k) {
      Eigen::Index face = k % cell_->face_count();
      f[k] = cell_->z().op().face_active(face) ? N(rng) : 0.0;
    }
    return cell_->solve(f);
  }

 private:
  CellConfig cfg_;
  double mu2_;
  std::unique_ptr<ProductCell> cell_;
  mutable AlVariables last_;
};

}  // namespace twoscale
