#pragma once
/// Discrete unfolding operators T_eps, T_delta and their composition, as exact index
/// relabelings on nested grids.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "twoscale/errors.hpp"
#include "twoscale/fields.hpp"
#include "twoscale/geometry.hpp"

namespace twoscale {

/// Field over Ω×Y (level 1) or Ω×Y×Z (level 2), piecewise constant in x per ε-cell.
///
/// Level 1 micro index: y = yx + y_dims[0]*yy.
/// Level 2 micro index: z-point fastest, then δ-subcell: (zx + z_dims[0]*zy) + z_count*(lx + sub_dims[0]*ly).
struct UnfoldedField {
  int level = 1;
  std::array<int, 2> macro_dims{};   ///< ε-cells per axis (partial cells belong to Λ_ε)
  std::array<int, 2> y_dims{};       ///< micro points per axis over Y
  std::array<int, 2> sub_dims{1, 1}; ///< δ-subcells per axis (level 2)
  std::array<int, 2> z_dims{};       ///< micro points per axis over Z (level 2)
  std::array<double, 2> y_lengths{}; ///< reference Y cell
  std::array<double, 2> z_lengths{}; ///< reference Z cell (level 2)
  std::array<double, 2> offset{0.5, 0.5};  ///< sample position inside a micro cell, in units of its width
  double epsilon = 1.0;
  double delta = 1.0;
  std::vector<std::uint8_t> lambda_region;  ///< per macro cell, 1 on Λ_ε
  std::vector<double> values;

  std::size_t macro_count() const { return static_cast<std::size_t>(macro_dims[0]) * macro_dims[1]; }
  std::size_t micro_count() const { return static_cast<std::size_t>(y_dims[0]) * y_dims[1]; }
  std::size_t z_count() const { return static_cast<std::size_t>(z_dims[0]) * z_dims[1]; }
  std::size_t sub_count() const { return static_cast<std::size_t>(sub_dims[0]) * sub_dims[1]; }

  /// Micro position (y) of level-1 micro index (yx,yy).
  std::array<double, 2> y_point(int yx, int yy) const {
    return {(yx + offset[0]) * y_lengths[0] / y_dims[0], (yy + offset[1]) * y_lengths[1] / y_dims[1]};
  }
  /// Micro position (z) of a level-2 z index.
  std::array<double, 2> z_point(int zx, int zy) const {
    return {(zx + offset[0]) * z_lengths[0] / z_dims[0], (zy + offset[1]) * z_lengths[1] / z_dims[1]};
  }

  double& at1(int kx, int ky, int yx, int yy) {
    return values[(kx + static_cast<std::size_t>(macro_dims[0]) * ky) * micro_count() + yx +
                  static_cast<std::size_t>(y_dims[0]) * yy];
  }
  double at1(int kx, int ky, int yx, int yy) const {
    return const_cast<UnfoldedField*>(this)->at1(kx, ky, yx, yy);
  }
  std::size_t index2(int kx, int ky, int lx, int ly, int zx, int zy) const {
    return (kx + static_cast<std::size_t>(macro_dims[0]) * ky) * micro_count() +
           (zx + static_cast<std::size_t>(z_dims[0]) * zy) +
           z_count() * (lx + static_cast<std::size_t>(sub_dims[0]) * ly);
  }
  double& at2(int kx, int ky, int lx, int ly, int zx, int zy) {
    return values[index2(kx, ky, lx, ly, zx, zy)];
  }
  double at2(int kx, int ky, int lx, int ly, int zx, int zy) const {
    return values[index2(kx, ky, lx, ly, zx, zy)];
  }
};

namespace detail {

inline int nested_ratio(double coarse, double fine) {
  double r = coarse / fine;
  if (!near_integer(r, 1e-9) || std::lround(r) < 1)
    throw Error(ErrorKind::GridNotNested, "grid step does not subdivide the cell lattice");
  return static_cast<int>(std::lround(r));
}

/// Global grid index carried by level-1 micro point (k, y) along each axis.
inline std::array<int, 2> global_index1(const UnfoldedField& v, int kx, int ky, int yx, int yy) {
  return {kx * v.y_dims[0] + yx, ky * v.y_dims[1] + yy};
}

/// Unfolds a flat array defined on an (n0 × n1) lattice with step h (x-fastest).
inline UnfoldedField unfold_array(const std::vector<double>& data, std::array<int, 2> n,
                                  std::array<double, 2> h, double eps, std::array<double, 2> y_len,
                                  std::array<double, 2> offset) {
  UnfoldedField u;
  u.level = 1;
  u.epsilon = eps;
  u.y_lengths = y_len;
  u.offset = offset;
  for (int d = 0; d < 2; ++d) {
    u.y_dims[d] = nested_ratio(eps * y_len[d], h[d]);
    u.macro_dims[d] = (n[d] + u.y_dims[d] - 1) / u.y_dims[d];
  }
  u.lambda_region.assign(u.macro_count(), 0);
  u.values.assign(u.macro_count() * u.micro_count(), 0.0);
  for (int ky = 0; ky < u.macro_dims[1]; ++ky)
    for (int kx = 0; kx < u.macro_dims[0]; ++kx) {
      bool partial = (kx + 1) * u.y_dims[0] > n[0] || (ky + 1) * u.y_dims[1] > n[1];
      if (partial) {
        u.lambda_region[kx + static_cast<std::size_t>(u.macro_dims[0]) * ky] = 1;
        continue;  // T_eps vanishes on Λ_eps
      }
      for (int yy = 0; yy < u.y_dims[1]; ++yy)
        for (int yx = 0; yx < u.y_dims[0]; ++yx) {
          auto gi = global_index1(u, kx, ky, yx, yy);
          u.at1(kx, ky, yx, yy) = data[gi[0] + static_cast<std::size_t>(n[0]) * gi[1]];
        }
    }
  return u;
}

}  // namespace detail

/// T_eps(f)(x,y) = f(eps[x/eps]_Y + eps y) for a cell-centered scalar field.
inline UnfoldedField unfold_eps(const ScalarField& f, double eps, std::array<double, 2> y_lengths) {
  return detail::unfold_array(f.values, f.grid.dims, f.grid.spacing, eps, y_lengths, {0.5, 0.5});
}

inline UnfoldedField unfold_eps(const ScalarField& f, const Domain2& dom) {
  return unfold_eps(f, dom.epsilon, dom.geometry.y_cell.lengths);
}

/// Component-wise unfolding of a face field over the low-side face lattice of each cell.
inline std::array<UnfoldedField, 2> unfold_eps(const VectorField& u, double eps,
                                               std::array<double, 2> y_lengths) {
  std::array<UnfoldedField, 2> out;
  const auto& g = u.grid;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> data(g.cells());
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) data[i + static_cast<std::size_t>(g.dims[0]) * j] = u.at(c, i, j);
    std::array<double, 2> off{0.5, 0.5};
    off[c] = 0.0;
    out[c] = detail::unfold_array(data, g.dims, g.spacing, eps, y_lengths, off);
  }
  return out;
}

inline std::array<UnfoldedField, 2> unfold_eps(const VectorField& u, const Domain2& dom) {
  return unfold_eps(u, dom.epsilon, dom.geometry.y_cell.lengths);
}

/// T_delta(v)(x,y,z) = v(x, delta[y/delta]_Z + delta z): relabels the Y micro grid into
/// δ-subcells × Z micro points.
inline UnfoldedField unfold_delta(const UnfoldedField& v, std::array<int, 2> subdivision,
                                  std::array<double, 2> z_lengths) {
  if (v.level != 1) throw Error(ErrorKind::GridNotNested, "unfold_delta expects a level-1 field");
  UnfoldedField w = v;
  w.level = 2;
  w.sub_dims = subdivision;
  w.z_lengths = z_lengths;
  for (int d = 0; d < 2; ++d) {
    if (subdivision[d] < 1 || v.y_dims[d] % subdivision[d])
      throw Error(ErrorKind::GridNotNested, "micro grid does not nest the delta Z lattice");
    w.z_dims[d] = v.y_dims[d] / subdivision[d];
  }
  w.delta = v.y_lengths[0] / (subdivision[0] * z_lengths[0]);
  for (int ky = 0; ky < v.macro_dims[1]; ++ky)
    for (int kx = 0; kx < v.macro_dims[0]; ++kx)
      for (int yy = 0; yy < v.y_dims[1]; ++yy)
        for (int yx = 0; yx < v.y_dims[0]; ++yx)
          w.at2(kx, ky, yx / w.z_dims[0], yy / w.z_dims[1], yx % w.z_dims[0], yy % w.z_dims[1]) =
              v.at1(kx, ky, yx, yy);
  return w;
}

inline UnfoldedField unfold_delta(const UnfoldedField& v, const CellGeometry2& g) {
  return unfold_delta(v, g.subdivision, g.z_cell.lengths);
}

/// M_Y: average over Y (level 1) or over Y×Z (level 2), one value per ε-cell.
inline ScalarField mean_Y(const UnfoldedField& v) {
  StaggeredGrid g{v.macro_dims, {v.epsilon * v.y_lengths[0], v.epsilon * v.y_lengths[1]}, {false, false}};
  ScalarField out(g);
  const std::size_t mc = v.micro_count();
  for (std::size_t k = 0; k < v.macro_count(); ++k) {
    double s = 0.0;
    for (std::size_t m = 0; m < mc; ++m) s += v.values[k * mc + m];
    out.values[k] = s / static_cast<double>(mc);
  }
  return out;
}

/// M_Z of a level-2 field: a level-1 field with one micro point per δ-subcell.
inline UnfoldedField mean_Z(const UnfoldedField& v) {
  if (v.level != 2) throw Error(ErrorKind::GridNotNested, "mean_Z expects a level-2 field");
  UnfoldedField w;
  w.level = 1;
  w.macro_dims = v.macro_dims;
  w.y_dims = v.sub_dims;
  w.y_lengths = v.y_lengths;
  w.epsilon = v.epsilon;
  w.lambda_region = v.lambda_region;
  w.values.assign(w.macro_count() * w.micro_count(), 0.0);
  const std::size_t zc = v.z_count();
  for (std::size_t k = 0; k < v.macro_count(); ++k)
    for (std::size_t l = 0; l < v.sub_count(); ++l) {
      double s = 0.0;
      for (std::size_t z = 0; z < zc; ++z) s += v.values[k * v.micro_count() + l * zc + z];
      w.values[k * w.micro_count() + l] = s / static_cast<double>(zc);
    }
  return w;
}

/// ∫ over Ω×Y (level 1) or Ω×Y×Z (level 2) by midpoint quadrature.
inline double integrate(const UnfoldedField& v) {
  double cell = v.epsilon * v.epsilon * v.y_lengths[0] * v.y_lengths[1];
  double micro = v.y_lengths[0] * v.y_lengths[1] / static_cast<double>(v.micro_count());
  double w = cell * micro;
  if (v.level == 2) w *= v.z_lengths[0] * v.z_lengths[1];  // Y×Z: micro weight covers δ²|Z|·h_z²/δ²
  double s = 0.0;
  for (double x : v.values) s += x;
  return s * w;
}

/// |∫_Ω f − (1/(|Y||Z|)) ∫_{Ω×Y×Z} T_δ(T_ε(f))|.
inline double check_integral_identity(const ScalarField& f, const Domain2& dom) {
  auto t = unfold_delta(unfold_eps(f, dom), dom.geometry);
  double yz = dom.geometry.y_cell.volume() * dom.geometry.z_cell.volume();
  return std::abs(integrate(f) - integrate(t) / yz);
}

namespace detail {

/// Forward difference of an unfolded field along axis d of its finest micro variable, taking
/// the neighbour across subcell/macro-cell boundaries. Entries whose neighbour leaves the
/// unfolded range are flagged invalid.
inline void unfolded_forward_difference(const UnfoldedField& v, int d, std::vector<double>& out,
                                        std::vector<std::uint8_t>& valid) {
  out.assign(v.values.size(), 0.0);
  valid.assign(v.values.size(), 0);
  if (v.level == 1) {
    double h = v.y_lengths[d] / v.y_dims[d];
    for (int ky = 0; ky < v.macro_dims[1]; ++ky)
      for (int kx = 0; kx < v.macro_dims[0]; ++kx)
        for (int yy = 0; yy < v.y_dims[1]; ++yy)
          for (int yx = 0; yx < v.y_dims[0]; ++yx) {
            std::array<int, 4> n{kx, ky, yx, yy};
            n[2 + d] += 1;
            if (n[2 + d] == v.y_dims[d]) { n[2 + d] = 0; n[d] += 1; }
            if (n[d] >= v.macro_dims[d]) continue;
            std::size_t self = (kx + static_cast<std::size_t>(v.macro_dims[0]) * ky) * v.micro_count() +
                               yx + static_cast<std::size_t>(v.y_dims[0]) * yy;
            out[self] = (v.at1(n[0], n[1], n[2], n[3]) - v.values[self]) / h;
            valid[self] = 1;
          }
    return;
  }
  double h = v.z_lengths[d] / v.z_dims[d];
  for (int ky = 0; ky < v.macro_dims[1]; ++ky)
    for (int kx = 0; kx < v.macro_dims[0]; ++kx)
      for (int ly = 0; ly < v.sub_dims[1]; ++ly)
        for (int lx = 0; lx < v.sub_dims[0]; ++lx)
          for (int zy = 0; zy < v.z_dims[1]; ++zy)
            for (int zx = 0; zx < v.z_dims[0]; ++zx) {
              std::array<int, 6> n{kx, ky, lx, ly, zx, zy};
              n[4 + d] += 1;
              if (n[4 + d] == v.z_dims[d]) { n[4 + d] = 0; n[2 + d] += 1; }
              if (n[2 + d] == v.sub_dims[d]) { n[2 + d] = 0; n[d] += 1; }
              if (n[d] >= v.macro_dims[d]) continue;
              std::size_t self = v.index2(kx, ky, lx, ly, zx, zy);
              out[self] = (v.at2(n[0], n[1], n[2], n[3], n[4], n[5]) - v.values[self]) / h;
              valid[self] = 1;
            }
}

}  // namespace detail

struct GradientIdentityReport {
  double gap_y = 0.0;  ///< max |∇_y T_ε Φ − ε T_ε(∇Φ)|
  double gap_z = 0.0;  ///< max |∇_z T_δ T_ε Φ − εδ T_δ T_ε(∇Φ)|
  std::size_t compared = 0;
};

/// Compares both unfolded gradient identities with forward differences on nested grids.
inline GradientIdentityReport check_gradient_identities(const ScalarField& phi, const Domain2& dom) {
  const auto& g = phi.grid;
  GradientIdentityReport rep;
  auto t1 = unfold_eps(phi, dom);
  auto t2 = unfold_delta(t1, dom.geometry);
  for (int d = 0; d < 2; ++d) {
    // Forward difference of Φ on the Ω grid, attached to the lower cell; last layer undefined.
    ScalarField dphi(g);
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        int ii = i + (d == 0), jj = j + (d == 1);
        if (ii >= g.dims[0] || jj >= g.dims[1]) continue;
        dphi.at(i, j) = (phi.at(ii, jj) - phi.at(i, j)) / g.spacing[d];
      }
    auto u1 = unfold_eps(dphi, dom);
    auto u2 = unfold_delta(u1, dom.geometry);
    std::vector<double> diff;
    std::vector<std::uint8_t> valid;
    detail::unfolded_forward_difference(t1, d, diff, valid);
    for (std::size_t k = 0; k < diff.size(); ++k)
      if (valid[k]) {
        rep.gap_y = std::max(rep.gap_y, std::abs(diff[k] - dom.epsilon * u1.values[k]));
        ++rep.compared;
      }
    detail::unfolded_forward_difference(t2, d, diff, valid);
    for (std::size_t k = 0; k < diff.size(); ++k)
      if (valid[k]) {
        rep.gap_z = std::max(rep.gap_z, std::abs(diff[k] - dom.eps_delta() * u2.values[k]));
        ++rep.compared;
      }
  }
  return rep;
}

}  // namespace twoscale
