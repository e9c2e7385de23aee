#pragma once
/// MAC-staggered field containers and the discrete calculus on them.
///
/// Layout: cell (i,j) has flat index i + nx*j. Component c of a vector field lives on the
/// faces normal to axis c; along a non-periodic axis there is one extra face layer.
/// Tensors are stored per cell as (d0 u0, d1 u0, d0 u1, d1 u1).

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/geometry.hpp"

namespace twoscale {

struct StaggeredGrid {
  std::array<int, 2> dims{2, 2};
  std::array<double, 2> spacing{1.0, 1.0};
  std::array<bool, 2> periodic{false, false};

  static StaggeredGrid from_mask(const Mask2& m, std::array<bool, 2> per = {false, false}) {
    return StaggeredGrid{m.dims, m.spacing, per};
  }

  std::size_t cells() const { return static_cast<std::size_t>(dims[0]) * dims[1]; }
  double cell_area() const { return spacing[0] * spacing[1]; }
  /// Face-array extents for component c.
  std::array<int, 2> face_dims(int c) const {
    std::array<int, 2> d = dims;
    if (!periodic[c]) d[c] += 1;
    return d;
  }
  std::size_t faces(int c) const {
    auto d = face_dims(c);
    return static_cast<std::size_t>(d[0]) * d[1];
  }
  double xc(int i) const { return (i + 0.5) * spacing[0]; }
  double yc(int j) const { return (j + 0.5) * spacing[1]; }
  /// Coordinates of face (i,j) of component c.
  std::array<double, 2> face_point(int c, int i, int j) const {
    if (c == 0) return {i * spacing[0], (j + 0.5) * spacing[1]};
    return {(i + 0.5) * spacing[0], j * spacing[1]};
  }
  bool operator==(const StaggeredGrid& o) const {
    return dims == o.dims && spacing == o.spacing && periodic == o.periodic;
  }
};

struct ScalarField {
  StaggeredGrid grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(const StaggeredGrid& g, double fill = 0.0) : grid(g), values(g.cells(), fill) {}

  double& at(int i, int j) { return values[i + grid.dims[0] * static_cast<std::size_t>(j)]; }
  double at(int i, int j) const { return values[i + grid.dims[0] * static_cast<std::size_t>(j)]; }
  template <class F>
  static ScalarField sample(const StaggeredGrid& g, F&& fn) {
    ScalarField s(g);
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) s.at(i, j) = fn(g.xc(i), g.yc(j));
    return s;
  }
};

struct VectorField {
  StaggeredGrid grid;
  std::array<std::vector<double>, 2> comp;
  std::shared_ptr<const Mask2> mask;  ///< optional fluid mask on the cells
  bool zero_extended = false;         ///< values vanish on solid faces

  VectorField() = default;
  explicit VectorField(const StaggeredGrid& g) : grid(g) {
    comp[0].assign(g.faces(0), 0.0);
    comp[1].assign(g.faces(1), 0.0);
  }

  std::size_t fidx(int c, int i, int j) const {
    return i + static_cast<std::size_t>(grid.face_dims(c)[0]) * j;
  }
  double& at(int c, int i, int j) { return comp[c][fidx(c, i, j)]; }
  double at(int c, int i, int j) const { return comp[c][fidx(c, i, j)]; }

  /// Samples fn(x,y) -> {u0,u1} at the face centers.
  template <class F>
  static VectorField sample(const StaggeredGrid& g, F&& fn) {
    VectorField v(g);
    for (int c = 0; c < 2; ++c) {
      auto fd = g.face_dims(c);
      for (int j = 0; j < fd[1]; ++j)
        for (int i = 0; i < fd[0]; ++i) {
          auto p = g.face_point(c, i, j);
          v.at(c, i, j) = fn(p[0], p[1])[c];
        }
    }
    return v;
  }
};

struct TensorField {
  StaggeredGrid grid;
  std::array<std::vector<double>, 4> comp;  ///< (00, 01, 10, 11) with entry (a,b) = d_b u_a

  TensorField() = default;
  explicit TensorField(const StaggeredGrid& g) : grid(g) {
    for (auto& c : comp) c.assign(g.cells(), 0.0);
  }
  double norm_at(std::size_t k) const {
    double s = 0.0;
    for (const auto& c : comp) s += c[k] * c[k];
    return std::sqrt(s);
  }
};

namespace detail {

inline void require_same(const StaggeredGrid& a, const StaggeredGrid& b, const char* what) {
  if (!(a == b)) throw Error(ErrorKind::ShapeMismatch, what);
}

inline void require_shape(const VectorField& u) {
  for (int c = 0; c < 2; ++c)
    if (u.comp[c].size() != u.grid.faces(c))
      throw Error(ErrorKind::ShapeMismatch, "vector component size does not match grid");
}

/// Face value of component c at (i,j) with periodic wrap; zero outside a non-periodic grid.
inline double face_or_zero(const VectorField& u, int c, int i, int j) {
  const auto& g = u.grid;
  auto fd = g.face_dims(c);
  if (g.periodic[0]) i = (i % fd[0] + fd[0]) % fd[0];
  if (g.periodic[1]) j = (j % fd[1] + fd[1]) % fd[1];
  if (i < 0 || j < 0 || i >= fd[0] || j >= fd[1]) return 0.0;
  return u.at(c, i, j);
}

}  // namespace detail

/// Conservative divergence at cell centers.
inline ScalarField divergence(const VectorField& u) {
  detail::require_shape(u);
  const auto& g = u.grid;
  ScalarField d(g);
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i)
      d.at(i, j) = (detail::face_or_zero(u, 0, i + 1, j) - u.at(0, i, j)) / g.spacing[0] +
                   (detail::face_or_zero(u, 1, i, j + 1) - u.at(1, i, j)) / g.spacing[1];
  return d;
}

/// Face gradient of a cell-centered scalar; zero on non-periodic boundary faces.
inline VectorField gradient(const ScalarField& p) {
  const auto& g = p.grid;
  if (p.values.size() != g.cells()) throw Error(ErrorKind::ShapeMismatch, "scalar size");
  VectorField v(g);
  for (int c = 0; c < 2; ++c) {
    auto fd = g.face_dims(c);
    for (int j = 0; j < fd[1]; ++j)
      for (int i = 0; i < fd[0]; ++i) {
        int ic = c == 0 ? i : j;  // index along axis c
        int n = g.dims[c];
        if (!g.periodic[c] && (ic == 0 || ic == n)) continue;
        int im = c == 0 ? (i - 1 + n) % n : i;
        int jm = c == 1 ? (j - 1 + n) % n : j;
        int ip = c == 0 ? i % n : i;
        int jp = c == 1 ? j % n : j;
        v.at(c, i, j) = (p.at(ip, jp) - p.at(im, jm)) / g.spacing[c];
      }
  }
  return v;
}

/// Full velocity gradient grouped per cell: forward differences, wrapped on periodic axes and
/// one-sided (backward) at the last cell of a non-periodic axis for the tangential derivative.
inline TensorField gradient_tensor(const VectorField& u) {
  detail::require_shape(u);
  const auto& g = u.grid;
  TensorField t(g);
  const int nx = g.dims[0], ny = g.dims[1];
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      std::size_t k = i + static_cast<std::size_t>(nx) * j;
      for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 2; ++b) {
          // derivative of component c along axis b
          int i0 = i, j0 = j, i1 = i + (b == 0), j1 = j + (b == 1);
          bool normal = (b == c);
          if (!normal && !g.periodic[b]) {
            int last = g.dims[b] - 1;
            if ((b == 0 ? i : j) == last) {
              if (b == 0) { i0 = i - 1; i1 = i; } else { j0 = j - 1; j1 = j; }
            }
          }
          double v1 = detail::face_or_zero(u, c, i1, j1);
          double v0 = detail::face_or_zero(u, c, i0, j0);
          t.comp[2 * c + b][k] = (v1 - v0) / g.spacing[b];
        }
    }
  return t;
}

/// Symmetric part D(u) = (∇u + ∇uᵀ)/2.
inline TensorField strain(const VectorField& u) {
  TensorField t = gradient_tensor(u);
  for (std::size_t k = 0; k < t.comp[0].size(); ++k) {
    double off = 0.5 * (t.comp[1][k] + t.comp[2][k]);
    t.comp[1][k] = off;
    t.comp[2][k] = off;
  }
  return t;
}

/// T_II = ½ Σ T_ab T_ab.
inline ScalarField second_invariant(const TensorField& t) {
  ScalarField s(t.grid);
  for (std::size_t k = 0; k < s.values.size(); ++k) {
    double acc = 0.0;
    for (const auto& c : t.comp) acc += c[k] * c[k];
    s.values[k] = 0.5 * acc;
  }
  return s;
}

struct StressDiagnostics {
  TensorField deviatoric;
  ScalarField second_invariant;
  ScalarField strain_invariant;
  std::vector<std::uint8_t> rigid;  ///< 1 where D_II is below the rigid tolerance
};

/// Bingham deviatoric stress σ^D = g D/√D_II + mu D where the strain is resolvable.
/// Below the rigid tolerance σ^D comes from the multiplier: σ^D = √2 sym(m), so that
/// √σ_II = |sym(m)| never exceeds the yield value when |m| ≤ g.
inline StressDiagnostics stress(const VectorField& u, double g_eff, double mu_eff,
                                const TensorField* multiplier = nullptr, double rigid_tol = 1e-12) {
  StressDiagnostics out;
  TensorField d = strain(u);
  out.strain_invariant = second_invariant(d);
  out.deviatoric = TensorField(u.grid);
  out.rigid.assign(u.grid.cells(), 0);
  double scale = 0.0;
  for (double v : out.strain_invariant.values) scale = std::max(scale, v);
  double thr = rigid_tol * std::max(scale, 1e-300);
  if (scale == 0.0) thr = 0.0;
  for (std::size_t k = 0; k < u.grid.cells(); ++k) {
    double dii = out.strain_invariant.values[k];
    if (dii > thr && dii > 0.0) {
      double f = g_eff / std::sqrt(dii) + mu_eff;
      for (int c = 0; c < 4; ++c) out.deviatoric.comp[c][k] = f * d.comp[c][k];
    } else {
      out.rigid[k] = 1;
      if (!multiplier)
        throw Error(ErrorKind::MissingMultiplier, "rigid cells present but no multiplier given");
      const auto& m = *multiplier;
      double off = 0.5 * (m.comp[1][k] + m.comp[2][k]);
      const double s2 = std::sqrt(2.0);
      out.deviatoric.comp[0][k] = s2 * m.comp[0][k];
      out.deviatoric.comp[1][k] = s2 * off;
      out.deviatoric.comp[2][k] = s2 * off;
      out.deviatoric.comp[3][k] = s2 * m.comp[3][k];
    }
  }
  out.second_invariant = second_invariant(out.deviatoric);
  return out;
}

/// Midpoint quadrature over the fluid cells of `mask` (all cells if null).
inline double integrate(const ScalarField& f, const Mask2* mask = nullptr) {
  if (mask && mask->size() != f.values.size()) throw Error(ErrorKind::ShapeMismatch, "mask size");
  double s = 0.0;
  for (std::size_t k = 0; k < f.values.size(); ++k)
    if (!mask || mask->fluid(k)) s += f.values[k];
  return s * f.grid.cell_area();
}

inline double l2_norm(const ScalarField& f, const Mask2* mask = nullptr) {
  if (mask && mask->size() != f.values.size()) throw Error(ErrorKind::ShapeMismatch, "mask size");
  double s = 0.0;
  for (std::size_t k = 0; k < f.values.size(); ++k)
    if (!mask || mask->fluid(k)) s += f.values[k] * f.values[k];
  return std::sqrt(s * f.grid.cell_area());
}

/// L2 norm of a face field, each face carrying the cell area as weight.
inline double l2_norm(const VectorField& u) {
  double s = 0.0;
  for (const auto& c : u.comp)
    for (double v : c) s += v * v;
  return std::sqrt(s * u.grid.cell_area());
}

inline double l2_norm(const TensorField& t) {
  double s = 0.0;
  for (const auto& c : t.comp)
    for (double v : c) s += v * v;
  return std::sqrt(s * t.grid.cell_area());
}

inline double inner(const VectorField& a, const VectorField& b) {
  detail::require_same(a.grid, b.grid, "inner: grids differ");
  double s = 0.0;
  for (int c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < a.comp[c].size(); ++k) s += a.comp[c][k] * b.comp[c][k];
  return s * a.grid.cell_area();
}

inline double inner(const ScalarField& a, const ScalarField& b) {
  detail::require_same(a.grid, b.grid, "inner: grids differ");
  double s = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) s += a.values[k] * b.values[k];
  return s * a.grid.cell_area();
}

/// Averages over blocks of bx×by cells (e.g. εY or εδZ cells). Exact when the blocks tile the grid.
inline ScalarField cell_average(const ScalarField& f, int bx, int by) {
  const auto& g = f.grid;
  if (bx < 1 || by < 1 || g.dims[0] % bx || g.dims[1] % by)
    throw Error(ErrorKind::ShapeMismatch, "cell_average: blocks do not tile the grid");
  StaggeredGrid cg{{g.dims[0] / bx, g.dims[1] / by}, {g.spacing[0] * bx, g.spacing[1] * by}, g.periodic};
  ScalarField out(cg);
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i) out.at(i / bx, j / by) += f.at(i, j);
  for (double& v : out.values) v /= static_cast<double>(bx) * by;
  return out;
}

/// Block averages of a face field; each block owns the faces at the low side of its cells.
/// Returns one value per block and component (cell-centered coarse fields).
inline std::array<ScalarField, 2> cell_average(const VectorField& u, int bx, int by) {
  const auto& g = u.grid;
  if (bx < 1 || by < 1 || g.dims[0] % bx || g.dims[1] % by)
    throw Error(ErrorKind::ShapeMismatch, "cell_average: blocks do not tile the grid");
  StaggeredGrid cg{{g.dims[0] / bx, g.dims[1] / by}, {g.spacing[0] * bx, g.spacing[1] * by}, g.periodic};
  std::array<ScalarField, 2> out{ScalarField(cg), ScalarField(cg)};
  for (int c = 0; c < 2; ++c) {
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) out[c].at(i / bx, j / by) += u.at(c, i, j);
    for (double& v : out[c].values) v /= static_cast<double>(bx) * by;
  }
  return out;
}

/// Cell-centered interpolation of a face field (average of the two faces normal to each axis).
inline std::array<ScalarField, 2> to_cell_centers(const VectorField& u) {
  const auto& g = u.grid;
  std::array<ScalarField, 2> out{ScalarField(g), ScalarField(g)};
  for (int j = 0; j < g.dims[1]; ++j)
    for (int i = 0; i < g.dims[0]; ++i) {
      out[0].at(i, j) = 0.5 * (u.at(0, i, j) + detail::face_or_zero(u, 0, i + 1, j));
      out[1].at(i, j) = 0.5 * (u.at(1, i, j) + detail::face_or_zero(u, 1, i, j + 1));
    }
  return out;
}

}  // namespace twoscale
