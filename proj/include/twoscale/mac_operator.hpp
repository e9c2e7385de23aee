#pragma once
/// Sparse MAC operators on a masked grid and the divergence-free velocity solves built on them.
///
/// A non-periodic axis is embedded in a periodic "torus" with one extra solid layer at the high
/// end, so user face (i,j) maps to torus face (i,j) and the wall links live in the frame cells.
/// The cell gradient G stacks, per torus cell k, the four forward differences
/// (d0 u0, d1 u0, d0 u1, d1 u1) at entries 4k..4k+3. A face is active iff both adjacent cells
/// are fluid; inactive faces carry zero velocity. Walls therefore impose tangential no-slip half a
/// cell beyond the wall, which is first-order accurate.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <memory>
#include <numeric>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/fields.hpp"
#include "twoscale/geometry.hpp"

namespace twoscale {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

/// Boundary treatment per axis: periodic or homogeneous Dirichlet.
struct Boundary {
  std::array<bool, 2> periodic{false, false};

  static Boundary periodic_box() { return Boundary{{true, true}}; }
  static Boundary dirichlet0() { return Boundary{{false, false}}; }
  bool any_periodic() const { return periodic[0] || periodic[1]; }
  bool operator==(const Boundary& o) const { return periodic == o.periodic; }
};

class MacOperator {
 public:
  MacOperator(const Mask2& mask, Boundary bc)
      : mask_(std::make_shared<const Mask2>(mask)), bc_(bc) {
    grid_ = StaggeredGrid{mask.dims, mask.spacing, bc.periodic};
    nx_ = mask.dims[0];
    ny_ = mask.dims[1];
    tx_ = nx_ + (bc.periodic[0] ? 0 : 1);
    ty_ = ny_ + (bc.periodic[1] ? 0 : 1);
    n_ = static_cast<Eigen::Index>(tx_) * ty_;
    h_ = mask.spacing;
    fluid_.assign(n_, 0);
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) fluid_[cell(i, j)] = mask.fluid({i, j}) ? 1 : 0;
    active_.assign(2 * n_, 0);
    for (int c = 0; c < 2; ++c)
      for (Eigen::Index k = 0; k < n_; ++k)
        active_[c * n_ + k] = fluid_[k] && fluid_[shift(k, c, -1)];
    build_gradient();
  }

  const StaggeredGrid& grid() const { return grid_; }
  const Mask2& mask() const { return *mask_; }
  std::shared_ptr<const Mask2> mask_ptr() const { return mask_; }
  const Boundary& boundary() const { return bc_; }
  Eigen::Index cells() const { return n_; }
  Eigen::Index faces() const { return 2 * n_; }
  int torus_dim(int d) const { return d == 0 ? tx_ : ty_; }
  double spacing(int d) const { return h_[d]; }
  double area() const { return h_[0] * h_[1]; }

  Eigen::Index cell(int i, int j) const { return i + static_cast<Eigen::Index>(tx_) * j; }
  int ci(Eigen::Index k) const { return static_cast<int>(k % tx_); }
  int cj(Eigen::Index k) const { return static_cast<int>(k / tx_); }
  Eigen::Index shift(Eigen::Index k, int axis, int step) const {
    int i = ci(k), j = cj(k);
    if (axis == 0) i = (i + step + tx_) % tx_;
    else j = (j + step + ty_) % ty_;
    return cell(i, j);
  }
  bool cell_fluid(Eigen::Index k) const { return fluid_[k] != 0; }
  bool user_cell(Eigen::Index k) const { return ci(k) < nx_ && cj(k) < ny_; }
  bool face_active(Eigen::Index f) const { return active_[f] != 0; }
  const std::vector<std::uint8_t>& active() const { return active_; }
  Eigen::Index active_count() const {
    return std::accumulate(active_.begin(), active_.end(), Eigen::Index{0});
  }
  const SpMat& G() const { return G_; }

  Vec to_torus(const VectorField& u) const {
    detail::require_same(u.grid, grid_, "field grid does not match operator grid");
    Vec out = Vec::Zero(2 * n_);
    for (int c = 0; c < 2; ++c) {
      auto fd = grid_.face_dims(c);
      for (int j = 0; j < fd[1]; ++j)
        for (int i = 0; i < fd[0]; ++i) out[c * n_ + cell(i, j)] = u.at(c, i, j);
    }
    return out;
  }

  VectorField to_user(const Vec& t) const {
    VectorField u(grid_);
    for (int c = 0; c < 2; ++c) {
      auto fd = grid_.face_dims(c);
      for (int j = 0; j < fd[1]; ++j)
        for (int i = 0; i < fd[0]; ++i) u.at(c, i, j) = t[c * n_ + cell(i, j)];
    }
    u.mask = mask_;
    u.zero_extended = true;
    return u;
  }

  /// Zeroes the inactive faces.
  Vec restrict_active(Vec v) const {
    for (Eigen::Index f = 0; f < 2 * n_; ++f)
      if (!active_[f]) v[f] = 0.0;
    return v;
  }

  TensorField tensor_to_user(const Vec& t4) const {
    TensorField t(grid_);
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) {
        std::size_t ku = i + static_cast<std::size_t>(nx_) * j;
        Eigen::Index k = cell(i, j);
        for (int q = 0; q < 4; ++q) t.comp[q][ku] = t4[4 * k + q];
      }
    return t;
  }

  ScalarField scalar_to_user(const Vec& s) const {
    ScalarField out(grid_);
    for (int j = 0; j < ny_; ++j)
      for (int i = 0; i < nx_; ++i) out.at(i, j) = s[cell(i, j)];
    return out;
  }

  /// a(u,v) = mu ∫ ∇u:∇v.
  double a(const Vec& u, const Vec& v, double mu) const {
    return mu * area() * (G_ * u).dot(G_ * v);
  }
  /// j(v) = g ∫ |∇v| with the Frobenius norm, summed over every torus cell.
  double j(const Vec& v, double g) const { return g * area() * frobenius_sum(G_ * v); }
  double pairing(const Vec& f, const Vec& v) const { return area() * restrict_active(f).dot(v); }

  double frobenius_sum(const Vec& t4) const {
    double s = 0.0;
    for (Eigen::Index k = 0; k < n_; ++k) s += t4.segment<4>(4 * k).norm();
    return s;
  }

  /// Max over cells of |div u| for a torus face vector.
  double max_divergence(const Vec& u) const {
    double m = 0.0;
    for (Eigen::Index k = 0; k < n_; ++k) {
      double d = (u[shift(k, 0, 1)] - u[k]) / h_[0] + (u[n_ + shift(k, 1, 1)] - u[n_ + k]) / h_[1];
      m = std::max(m, std::abs(d));
    }
    return m;
  }

  /// Face gradient of a cell scalar restricted to active faces.
  Vec grad(const Vec& p) const {
    Vec out = Vec::Zero(2 * n_);
    for (int c = 0; c < 2; ++c)
      for (Eigen::Index k = 0; k < n_; ++k)
        if (active_[c * n_ + k]) out[c * n_ + k] = (p[k] - p[shift(k, c, -1)]) / h_[c];
    return out;
  }

  /// True when the whole torus is fluid and periodic, so constant velocities are admissible.
  bool has_constant_modes() const {
    if (!bc_.periodic[0] || !bc_.periodic[1]) return false;
    for (auto f : fluid_)
      if (!f) return false;
    return true;
  }

 private:
  void build_gradient() {
    std::vector<Eigen::Triplet<double>> tr;
    tr.reserve(8 * n_);
    for (Eigen::Index k = 0; k < n_; ++k)
      for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 2; ++b) {
          Eigen::Index row = 4 * k + 2 * c + b;
          double ih = 1.0 / h_[b];
          Eigen::Index f0 = c * n_ + k, f1 = c * n_ + shift(k, b, 1);
          if (active_[f1]) tr.emplace_back(row, f1, ih);
          if (active_[f0]) tr.emplace_back(row, f0, -ih);
        }
    G_.resize(4 * n_, 2 * n_);
    G_.setFromTriplets(tr.begin(), tr.end());
  }

  std::shared_ptr<const Mask2> mask_;
  Boundary bc_;
  StaggeredGrid grid_;
  int nx_ = 0, ny_ = 0, tx_ = 0, ty_ = 0;
  Eigen::Index n_ = 0;
  std::array<double, 2> h_{};
  std::vector<std::uint8_t> fluid_, active_;
  SpMat G_;
};

enum class VelocityBackend { Auto, Kkt, StreamFunction };

/// Solves min over admissible divergence-free u of (alpha/2)|Gu|² - <rhs,u>.
class VelocityProjector {
 public:
  virtual ~VelocityProjector() = default;
  virtual Vec solve(const Vec& rhs) const = 0;
};

namespace detail {

template <class Solver>
Vec refine(const Solver& s, const SpMat& A, const Vec& b, double tol, int max_iter, const char* what) {
  Vec x = s.solve(b);
  double bn = b.norm();
  if (bn == 0.0) return x;
  for (int it = 0;; ++it) {
    Vec r = b - A * x;
    double rel = r.norm() / bn;
    if (rel <= tol) break;
    if (it >= max_iter) throw NonConvergence(what, static_cast<std::size_t>(it), rel);
    x += s.solve(r);
  }
  return x;
}

}  // namespace detail

/// Monolithic saddle-point system on active faces and fluid cells, factored once with sparse LU.
class KktProjector : public VelocityProjector {
 public:
  KktProjector(const MacOperator& op, double alpha, double tol = 1e-10, int max_refine = 5)
      : op_(op), tol_(tol), max_refine_(max_refine) {
    const Eigen::Index n = op.cells();
    face_col_.assign(2 * n, -1);
    cell_row_.assign(n, -1);
    Eigen::Index next = 0;
    for (Eigen::Index f = 0; f < 2 * n; ++f)
      if (op.face_active(f)) face_col_[f] = next++;
    nu_ = next;
    for (Eigen::Index k = 0; k < n; ++k)
      if (op.cell_fluid(k)) cell_row_[k] = next++;
    Eigen::Index mean_p = next++;
    modes_ = op.has_constant_modes();
    Eigen::Index mean_u = modes_ ? next : -1;
    if (modes_) next += 2;
    size_ = next;

    SpMat P(2 * n, nu_);
    {
      std::vector<Eigen::Triplet<double>> tr;
      for (Eigen::Index f = 0; f < 2 * n; ++f)
        if (face_col_[f] >= 0) tr.emplace_back(f, face_col_[f], 1.0);
      P.setFromTriplets(tr.begin(), tr.end());
    }
    SpMat GP = op.G() * P;
    SpMat A = alpha * SpMat(GP.transpose() * GP);

    std::vector<Eigen::Triplet<double>> tr;
    tr.reserve(A.nonZeros() + 8 * n);
    for (int o = 0; o < A.outerSize(); ++o)
      for (SpMat::InnerIterator it(A, o); it; ++it) tr.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::Index row = cell_row_[k];
      if (row < 0) continue;
      for (int c = 0; c < 2; ++c) {
        double ih = 1.0 / op.spacing(c);
        Eigen::Index fhi = face_col_[c * n + op.shift(k, c, 1)], flo = face_col_[c * n + k];
        // -div u entries, mirrored to give the -D^T p = grad p block
        if (fhi >= 0) {
          tr.emplace_back(row, fhi, -ih);
          tr.emplace_back(fhi, row, -ih);
        }
        if (flo >= 0) {
          tr.emplace_back(row, flo, ih);
          tr.emplace_back(flo, row, ih);
        }
      }
      tr.emplace_back(row, mean_p, 1.0);
      tr.emplace_back(mean_p, row, 1.0);
    }
    if (modes_)
      for (Eigen::Index f = 0; f < 2 * n; ++f) {
        Eigen::Index col = face_col_[f];
        if (col < 0) continue;
        Eigen::Index m = mean_u + (f >= n ? 1 : 0);
        tr.emplace_back(m, col, 1.0);
        tr.emplace_back(col, m, 1.0);
      }
    K_.resize(size_, size_);
    K_.setFromTriplets(tr.begin(), tr.end());
    K_.makeCompressed();
    lu_.analyzePattern(K_);
    lu_.factorize(K_);
    if (lu_.info() != Eigen::Success)
      throw Error(ErrorKind::NonConvergence, "KKT factorization failed: " + lu_.lastErrorMessage());
  }

  Vec solve(const Vec& rhs) const override {
    Vec b = Vec::Zero(size_);
    for (Eigen::Index f = 0; f < rhs.size(); ++f)
      if (face_col_[f] >= 0) b[face_col_[f]] = rhs[f];
    Vec x = detail::refine(lu_, K_, b, tol_, max_refine_, "KKT solve");
    Vec u = Vec::Zero(rhs.size());
    for (Eigen::Index f = 0; f < rhs.size(); ++f)
      if (face_col_[f] >= 0) u[f] = x[face_col_[f]];
    return u;
  }

 private:
  const MacOperator& op_;
  double tol_;
  int max_refine_;
  std::vector<Eigen::Index> face_col_, cell_row_;
  Eigen::Index nu_ = 0, size_ = 0;
  bool modes_ = false;
  SpMat K_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
};

/// Discrete stream function on cell corners for Dirichlet boxes: u = C ψ is divergence-free by
/// construction, corners joined by an inactive face share one unknown and the outer frame is ψ = 0.
/// The reduced operator Cᵀ GᵀG C is SPD and factored with a sparse Cholesky.
class StreamProjector : public VelocityProjector {
 public:
  StreamProjector(const MacOperator& op, double alpha, double tol = 1e-10, int max_refine = 5)
      : tol_(tol), max_refine_(max_refine) {
    if (op.boundary().any_periodic())
      throw Error(ErrorKind::InvalidConfig, "stream-function backend needs Dirichlet boundaries");
    const Eigen::Index n = op.cells();
    std::vector<Eigen::Index> parent(n);
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
    auto find = [&](Eigen::Index a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    // u0 at face k joins corners k and k+e1; u1 joins k and k+e0.
    auto ends = [&](int c, Eigen::Index k) {
      return std::pair<Eigen::Index, Eigen::Index>{k, op.shift(k, c == 0 ? 1 : 0, 1)};
    };
    for (int c = 0; c < 2; ++c)
      for (Eigen::Index k = 0; k < n; ++k)
        if (!op.face_active(c * n + k)) {
          auto [a, b] = ends(c, k);
          a = find(a);
          b = find(b);
          if (a != b) parent[a] = b;
        }
    Eigen::Index frame = find(op.cell(op.torus_dim(0) - 1, op.torus_dim(1) - 1));
    std::vector<Eigen::Index> col(n, -1);
    Eigen::Index nv = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::Index r = find(k);
      if (r == frame) continue;
      if (col[r] < 0) col[r] = nv++;
    }
    std::vector<Eigen::Triplet<double>> tr;
    for (int c = 0; c < 2; ++c)
      for (Eigen::Index k = 0; k < n; ++k) {
        if (!op.face_active(c * n + k)) continue;
        auto [a, b] = ends(c, k);
        Eigen::Index ca = col[find(a)], cb = col[find(b)];
        // u0 = (ψ(k+e1) - ψ(k))/h1, u1 = -(ψ(k+e0) - ψ(k))/h0
        double s = c == 0 ? 1.0 / op.spacing(1) : -1.0 / op.spacing(0);
        if (cb >= 0) tr.emplace_back(c * n + k, cb, s);
        if (ca >= 0) tr.emplace_back(c * n + k, ca, -s);
      }
    C_.resize(2 * n, nv);
    C_.setFromTriplets(tr.begin(), tr.end());
    C_.prune(0.0);
    SpMat GC = op.G() * C_;
    A_ = alpha * SpMat(GC.transpose() * GC);
    llt_.compute(A_);
    if (llt_.info() != Eigen::Success)
      throw Error(ErrorKind::NonConvergence, "stream-function factorization failed");
  }

  Vec solve(const Vec& rhs) const override {
    Vec b = C_.transpose() * rhs;
    Vec psi = detail::refine(llt_, A_, b, tol_, max_refine_, "stream-function solve");
    return C_ * psi;
  }

  Eigen::Index unknowns() const { return C_.cols(); }

 private:
  double tol_;
  int max_refine_;
  SpMat C_, A_;
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
};

inline std::unique_ptr<VelocityProjector> make_projector(const MacOperator& op, double alpha,
                                                         VelocityBackend backend, double tol = 1e-10,
                                                         int max_refine = 5) {
  if (backend == VelocityBackend::Auto)
    backend = op.boundary().any_periodic() ? VelocityBackend::Kkt : VelocityBackend::StreamFunction;
  if (backend == VelocityBackend::Kkt) return std::make_unique<KktProjector>(op, alpha, tol, max_refine);
  return std::make_unique<StreamProjector>(op, alpha, tol, max_refine);
}

/// Least-squares pressure from a face residual R ≈ ∇p on the active faces; mean zero on fluid.
class PressureRecovery {
 public:
  explicit PressureRecovery(const MacOperator& op) : op_(op) {
    const Eigen::Index n = op.cells();
    row_.assign(n, -1);
    Eigen::Index m = 0;
    for (Eigen::Index k = 0; k < n; ++k)
      if (op.cell_fluid(k)) row_[k] = m++;
    std::vector<Eigen::Triplet<double>> tr;
    for (int c = 0; c < 2; ++c) {
      double w = 1.0 / (op.spacing(c) * op.spacing(c));
      for (Eigen::Index k = 0; k < n; ++k) {
        if (!op.face_active(c * n + k)) continue;
        Eigen::Index a = row_[k], b = row_[op.shift(k, c, -1)];
        tr.emplace_back(a, a, w);
        tr.emplace_back(b, b, w);
        tr.emplace_back(a, b, -w);
        tr.emplace_back(b, a, -w);
      }
    }
    if (m > 0) tr.emplace_back(0, 0, 1.0);
    L_.resize(m, m);
    L_.setFromTriplets(tr.begin(), tr.end());
    llt_.compute(L_);
    if (llt_.info() != Eigen::Success)
      throw Error(ErrorKind::DisconnectedFluid, "pressure Laplacian is singular");
    count_ = m;
  }

  /// Returns the torus cell vector p (zero on solid cells).
  Vec recover(const Vec& R) const {
    const Eigen::Index n = op_.cells();
    Vec b = Vec::Zero(count_);
    for (int c = 0; c < 2; ++c) {
      double ih = 1.0 / op_.spacing(c);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (!op_.face_active(c * n + k)) continue;
        b[row_[k]] += ih * R[c * n + k];
        b[row_[op_.shift(k, c, -1)]] -= ih * R[c * n + k];
      }
    }
    Vec x = llt_.solve(b);
    double mean = count_ ? x.mean() : 0.0;
    Vec p = Vec::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k)
      if (row_[k] >= 0) p[k] = x[row_[k]] - mean;
    return p;
  }

 private:
  const MacOperator& op_;
  std::vector<Eigen::Index> row_;
  Eigen::Index count_ = 0;
  SpMat L_;
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
};

}  // namespace twoscale
