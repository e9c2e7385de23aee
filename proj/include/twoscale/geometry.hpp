#pragma once
/// Periodic cell geometries, the doubly perforated domain and fluid masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace detail {

inline bool near_integer(double x, double tol = 1e-9) {
  return std::abs(x - std::round(x)) <= tol * std::max(1.0, std::abs(x));
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Axis-aligned box given by its lower corner and extents.
template <int Dim>
struct Box {
  std::array<double, Dim> corner{};
  std::array<double, Dim> extent{};

  double hi(int d) const { return corner[d] + extent[d]; }
  double volume() const {
    double v = 1.0;
    for (int d = 0; d < Dim; ++d) v *= extent[d];
    return v;
  }
  bool contains_point(const std::array<double, Dim>& p) const {
    for (int d = 0; d < Dim; ++d)
      if (p[d] < corner[d] || p[d] > hi(d)) return false;
    return true;
  }
};

template <int Dim>
double overlap_volume(const Box<Dim>& a, const Box<Dim>& b) {
  double v = 1.0;
  for (int d = 0; d < Dim; ++d) {
    double lo = std::max(a.corner[d], b.corner[d]);
    double hi = std::min(a.hi(d), b.hi(d));
    if (hi <= lo) return 0.0;
    v *= hi - lo;
  }
  return v;
}

/// Reference cell ]0,lengths[ with solid obstacle boxes in cell coordinates.
template <int Dim>
struct RectCell {
  std::array<double, Dim> lengths{};
  std::vector<Box<Dim>> obstacles;

  double volume() const {
    double v = 1.0;
    for (int d = 0; d < Dim; ++d) v *= lengths[d];
    return v;
  }
  double solid_volume() const {
    double v = 0.0;
    for (const auto& b : obstacles) v += b.volume();
    return v;
  }
  double fluid_volume() const { return volume() - solid_volume(); }
};

/// Two-level geometry: the Y cell, the Z cell and the number of δZ copies tiling Y per axis.
template <int Dim>
struct CellGeometry {
  RectCell<Dim> y_cell;
  RectCell<Dim> z_cell;
  std::array<int, Dim> subdivision{};

  double delta() const { return y_cell.lengths[0] / (subdivision[0] * z_cell.lengths[0]); }

  /// Measure of Y_f, the fluid part of Y after removing Y_s and the δZ_s copies.
  double y_fluid_volume() const {
    double sub_vol = 1.0;
    int n_sub = 1;
    for (int d = 0; d < Dim; ++d) {
      sub_vol *= y_cell.lengths[d] / subdivision[d];
      n_sub *= subdivision[d];
    }
    double solid_subcells = std::round(y_cell.solid_volume() / sub_vol);
    double zs_frac = z_cell.solid_volume() / z_cell.volume();
    return y_cell.volume() - y_cell.solid_volume() - (n_sub - solid_subcells) * sub_vol * zs_frac;
  }
};

/// Boolean grid, true = fluid. Flat storage with axis 0 fastest.
template <int Dim>
struct Mask {
  std::array<int, Dim> dims{};
  std::array<double, Dim> spacing{};
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::array<int, Dim> d, std::array<double, Dim> h, bool fill = true) : dims(d), spacing(h) {
    values.assign(size(), fill ? 1 : 0);
  }

  std::size_t size() const {
    std::size_t n = 1;
    for (int d = 0; d < Dim; ++d) n *= static_cast<std::size_t>(dims[d]);
    return n;
  }
  std::size_t index(const std::array<int, Dim>& idx) const {
    std::size_t k = 0;
    for (int d = Dim - 1; d >= 0; --d) k = k * dims[d] + idx[d];
    return k;
  }
  std::array<int, Dim> unindex(std::size_t k) const {
    std::array<int, Dim> idx{};
    for (int d = 0; d < Dim; ++d) {
      idx[d] = static_cast<int>(k % dims[d]);
      k /= dims[d];
    }
    return idx;
  }
  bool fluid(std::size_t k) const { return values[k] != 0; }
  bool fluid(const std::array<int, Dim>& idx) const { return values[index(idx)] != 0; }
  std::size_t count_fluid() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
  }
  double fluid_fraction() const { return static_cast<double>(count_fluid()) / size(); }
  double cell_volume() const {
    double v = 1.0;
    for (int d = 0; d < Dim; ++d) v *= spacing[d];
    return v;
  }
};

/// Number of 2*Dim-connected fluid components; periodic axes wrap.
template <int Dim>
int count_fluid_components(const Mask<Dim>& mask, std::type_identity_t<std::array<bool, Dim>> periodic = {}) {
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> stack;
  int ncomp = 0;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask.fluid(s) || label[s] >= 0) continue;
    label[s] = ncomp;
    stack.push_back(s);
    while (!stack.empty()) {
      std::size_t k = stack.back();
      stack.pop_back();
      auto idx = mask.unindex(k);
      for (int d = 0; d < Dim; ++d) {
        for (int step : {-1, 1}) {
          auto nb = idx;
          nb[d] += step;
          if (nb[d] < 0 || nb[d] >= mask.dims[d]) {
            if (!periodic[d]) continue;
            nb[d] = (nb[d] + mask.dims[d]) % mask.dims[d];
          }
          std::size_t kn = mask.index(nb);
          if (mask.fluid(kn) && label[kn] < 0) {
            label[kn] = ncomp;
            stack.push_back(kn);
          }
        }
      }
    }
    ++ncomp;
  }
  return ncomp;
}

template <int Dim>
bool is_connected(const Mask<Dim>& mask, std::type_identity_t<std::array<bool, Dim>> periodic = {}) {
  return count_fluid_components(mask, periodic) == 1;
}

/// Pass/fail list produced by validate_geometry.
struct GeometryReport {
  struct Item {
    std::string name;
    bool passed = true;
    std::string detail;
  };
  std::vector<Item> items;

  bool passed() const {
    for (const auto& it : items)
      if (!it.passed) return false;
    return true;
  }
  const Item* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }
};

namespace detail {

template <int Dim>
void check_cell_boxes(const RectCell<Dim>& cell, const std::string& tag, GeometryReport& rep) {
  GeometryReport::Item lengths{tag + ".lengths_positive", true, ""};
  for (int d = 0; d < Dim; ++d)
    if (!(cell.lengths[d] > 0.0)) {
      lengths.passed = false;
      lengths.detail = "axis " + std::to_string(d);
    }
  rep.items.push_back(lengths);

  GeometryReport::Item inside{tag + ".obstacles_inside", true, ""};
  for (std::size_t b = 0; b < cell.obstacles.size() && inside.passed; ++b) {
    const auto& box = cell.obstacles[b];
    for (int d = 0; d < Dim; ++d) {
      bool ok = box.extent[d] > 0.0 && box.corner[d] > 0.0 && box.hi(d) < cell.lengths[d];
      if (!ok) {
        inside.passed = false;
        inside.detail = "box " + std::to_string(b);
        break;
      }
    }
  }
  rep.items.push_back(inside);

  GeometryReport::Item disjoint{tag + ".obstacles_disjoint", true, ""};
  for (std::size_t a = 0; a < cell.obstacles.size() && disjoint.passed; ++a)
    for (std::size_t b = a + 1; b < cell.obstacles.size(); ++b)
      if (overlap_volume(cell.obstacles[a], cell.obstacles[b]) > 0.0) {
        disjoint.passed = false;
        disjoint.detail = "boxes " + std::to_string(a) + " and " + std::to_string(b);
        break;
      }
  rep.items.push_back(disjoint);

  GeometryReport::Item fluid{tag + ".fluid_nonempty", cell.solid_volume() < cell.volume(), ""};
  rep.items.push_back(fluid);
}

template <int Dim>
void for_each_multi_index(const std::type_identity_t<std::array<int, Dim>>& dims,
                          const std::function<void(const std::array<int, Dim>&)>& fn) {
  std::size_t total = 1;
  for (int d = 0; d < Dim; ++d) total *= static_cast<std::size_t>(dims[d]);
  std::array<int, Dim> idx{};
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t r = k;
    for (int d = 0; d < Dim; ++d) {
      idx[d] = static_cast<int>(r % dims[d]);
      r /= dims[d];
    }
    fn(idx);
  }
}

/// Box covering δ-subcell l of Y.
template <int Dim>
Box<Dim> subcell_box(const CellGeometry<Dim>& g, const std::type_identity_t<std::array<int, Dim>>& l) {
  Box<Dim> b;
  for (int d = 0; d < Dim; ++d) {
    double w = g.y_cell.lengths[d] / g.subdivision[d];
    b.corner[d] = l[d] * w;
    b.extent[d] = w;
  }
  return b;
}

template <int Dim>
bool subcell_in_ys(const CellGeometry<Dim>& g, const std::type_identity_t<std::array<int, Dim>>& l) {
  Box<Dim> sb = subcell_box(g, l);
  double covered = 0.0;
  for (const auto& b : g.y_cell.obstacles) covered += overlap_volume(sb, b);
  return covered >= sb.volume() * (1.0 - 1e-9);
}

}  // namespace detail

/// Checks cell-level invariants: box sanity, uniform δ, δ-lattice covering of Y_s,
/// and no overlap between Y_s and the δZ_s copies placed in the remaining subcells.
template <int Dim>
GeometryReport validate_geometry(const CellGeometry<Dim>& g) {
  GeometryReport rep;
  detail::check_cell_boxes(g.y_cell, "y_cell", rep);
  detail::check_cell_boxes(g.z_cell, "z_cell", rep);

  GeometryReport::Item sub{"subdivision_positive", true, ""};
  for (int d = 0; d < Dim; ++d)
    if (g.subdivision[d] < 1) {
      sub.passed = false;
      sub.detail = "axis " + std::to_string(d);
    }
  rep.items.push_back(sub);
  if (!sub.passed || !rep.find("y_cell.lengths_positive")->passed ||
      !rep.find("z_cell.lengths_positive")->passed)
    return rep;

  GeometryReport::Item delta{"delta_uniform", true, ""};
  double d0 = g.delta();
  for (int d = 1; d < Dim; ++d) {
    double dd = g.y_cell.lengths[d] / (g.subdivision[d] * g.z_cell.lengths[d]);
    if (std::abs(dd - d0) > 1e-12 * d0) {
      delta.passed = false;
      delta.detail = "axis " + std::to_string(d) + " implies delta " + detail::fmt17(dd) +
                     " vs " + detail::fmt17(d0);
    }
  }
  rep.items.push_back(delta);

  GeometryReport::Item cover{"ys_covered_by_subcells", true, ""};
  for (std::size_t b = 0; b < g.y_cell.obstacles.size() && cover.passed; ++b) {
    const auto& box = g.y_cell.obstacles[b];
    for (int d = 0; d < Dim; ++d) {
      double w = g.y_cell.lengths[d] / g.subdivision[d];
      if (!detail::near_integer(box.corner[d] / w) || !detail::near_integer(box.hi(d) / w)) {
        cover.passed = false;
        cover.detail = "box " + std::to_string(b) + " not aligned to the subcell lattice on axis " +
                       std::to_string(d);
        break;
      }
    }
  }
  rep.items.push_back(cover);

  GeometryReport::Item inter{"ys_disjoint_from_zs_copies", true, ""};
  detail::for_each_multi_index<Dim>(g.subdivision, [&](const std::array<int, Dim>& l) {
    if (!inter.passed || detail::subcell_in_ys(g, l)) return;
    Box<Dim> sb = detail::subcell_box(g, l);
    double dl = g.delta();
    for (const auto& zs : g.z_cell.obstacles) {
      Box<Dim> copy;
      for (int d = 0; d < Dim; ++d) {
        copy.corner[d] = sb.corner[d] + dl * zs.corner[d];
        copy.extent[d] = dl * zs.extent[d];
      }
      for (std::size_t b = 0; b < g.y_cell.obstacles.size(); ++b)
        if (overlap_volume(copy, g.y_cell.obstacles[b]) > 0.0) {
          inter.passed = false;
          inter.detail = "box " + std::to_string(b) + " intersects a Z_s copy";
          return;
        }
    }
  });
  rep.items.push_back(inter);
  return rep;
}

template <int Dim>
void require_valid(const CellGeometry<Dim>& g) {
  auto rep = validate_geometry(g);
  for (const auto& it : rep.items)
    if (!it.passed) throw Error(ErrorKind::InvalidGeometry, it.name + " " + it.detail);
}

namespace detail {

/// Marks cells of `mask` whose centers fall inside `box` (shifted by `offset`) as solid.
/// Throws ResolutionTooCoarse when a box edge is off the grid lines.
template <int Dim>
void carve_box(Mask<Dim>& mask, const Box<Dim>& box, const std::type_identity_t<std::array<double, Dim>>& offset) {
  std::array<int, Dim> lo{}, hi{};
  for (int d = 0; d < Dim; ++d) {
    double a = (box.corner[d] + offset[d]) / mask.spacing[d];
    double b = (box.hi(d) + offset[d]) / mask.spacing[d];
    if (!near_integer(a) || !near_integer(b))
      throw Error(ErrorKind::ResolutionTooCoarse,
                  "obstacle edge off grid lines on axis " + std::to_string(d));
    lo[d] = static_cast<int>(std::lround(a));
    hi[d] = static_cast<int>(std::lround(b));
  }
  std::array<int, Dim> ext{};
  for (int d = 0; d < Dim; ++d) ext[d] = hi[d] - lo[d];
  for_each_multi_index<Dim>(ext, [&](const std::array<int, Dim>& r) {
    std::array<int, Dim> idx{};
    for (int d = 0; d < Dim; ++d) idx[d] = lo[d] + r[d];
    mask.values[mask.index(idx)] = 0;
  });
}

}  // namespace detail

template <int Dim>
struct CellMasks {
  Mask<Dim> y_star;   ///< Y* at the subcell-resolved Y grid
  Mask<Dim> z_star;   ///< Z* on the Z grid
  Mask<Dim> y_fluid;  ///< Y_f on the Y grid
};

/// Masks of Y*, Z* and Y_f with `resolution` grid cells per Z-subcell edge.
template <int Dim>
CellMasks<Dim> build_cell_masks(const CellGeometry<Dim>& g, int resolution) {
  if (resolution < 4) throw Error(ErrorKind::ResolutionTooCoarse, "resolution must be >= 4");
  require_valid(g);
  std::array<int, Dim> zd{}, yd{};
  std::array<double, Dim> zh{}, yh{};
  for (int d = 0; d < Dim; ++d) {
    zd[d] = resolution;
    zh[d] = g.z_cell.lengths[d] / resolution;
    yd[d] = resolution * g.subdivision[d];
    yh[d] = g.y_cell.lengths[d] / yd[d];
  }
  CellMasks<Dim> out{Mask<Dim>(yd, yh), Mask<Dim>(zd, zh), Mask<Dim>(yd, yh)};
  std::array<double, Dim> zero{};
  for (const auto& b : g.z_cell.obstacles) detail::carve_box(out.z_star, b, zero);
  for (const auto& b : g.y_cell.obstacles) detail::carve_box(out.y_star, b, zero);
  out.y_fluid = out.y_star;
  // Tile the Z* pattern into the subcells outside Y_s.
  for (std::size_t k = 0; k < out.y_fluid.size(); ++k) {
    if (!out.y_fluid.fluid(k)) continue;
    auto idx = out.y_fluid.unindex(k);
    std::array<int, Dim> zi{};
    for (int d = 0; d < Dim; ++d) zi[d] = idx[d] % resolution;
    if (!out.z_star.fluid(zi)) out.y_fluid.values[k] = 0;
  }
  return out;
}

/// Ω with its ε-scaled Y_s and εδ-scaled Z_s perforations.
template <int Dim>
struct DoublePeriodicDomain {
  Box<Dim> omega;
  double epsilon = 0.5;
  CellGeometry<Dim> geometry;
  int grid_per_subcell = 8;

  DoublePeriodicDomain() = default;
  DoublePeriodicDomain(Box<Dim> om, double eps, CellGeometry<Dim> geom, int gps)
      : omega(om), epsilon(eps), geometry(std::move(geom)), grid_per_subcell(gps) {
    validate();
  }

  double delta() const { return geometry.delta(); }
  double eps_delta() const { return epsilon * delta(); }

  /// ε-cells of Ω along axis d.
  int macro_cells(int d) const {
    return static_cast<int>(std::lround(omega.extent[d] / (epsilon * geometry.y_cell.lengths[d])));
  }
  /// Grid cells per εY cell edge along axis d.
  int cells_per_eps_cell(int d) const { return geometry.subdivision[d] * grid_per_subcell; }
  std::array<int, Dim> grid_dims() const {
    std::array<int, Dim> n{};
    for (int d = 0; d < Dim; ++d) n[d] = macro_cells(d) * cells_per_eps_cell(d);
    return n;
  }
  std::array<double, Dim> spacing() const {
    std::array<double, Dim> h{};
    for (int d = 0; d < Dim; ++d) h[d] = eps_delta() * geometry.z_cell.lengths[d] / grid_per_subcell;
    return h;
  }

  void validate() const {
    require_valid(geometry);
    if (grid_per_subcell < 4)
      throw Error(ErrorKind::ResolutionTooCoarse, "grid_per_subcell must be >= 4");
    double dl = delta();
    if (!(epsilon > 0.0 && epsilon < 1.0 && dl * epsilon > 0.0 && dl * epsilon < epsilon))
      throw Error(ErrorKind::InvalidGeometry, "need 0 < eps*delta < eps < 1");
    for (int d = 0; d < Dim; ++d) {
      double n = omega.extent[d] / (epsilon * geometry.y_cell.lengths[d]);
      if (!detail::near_integer(n) || std::lround(n) < 1)
        throw Error(ErrorKind::InvalidGeometry,
                    "Omega not exactly covered by eps*Y cells on axis " + std::to_string(d));
    }
  }
};

/// Fluid mask of Ω_εδ on the fine grid (grid_per_subcell cells per εδZ edge).
template <int Dim>
Mask<Dim> build_domain_mask(const DoublePeriodicDomain<Dim>& dom, bool require_connected = true) {
  dom.validate();
  auto cm = build_cell_masks(dom.geometry, dom.grid_per_subcell);
  Mask<Dim> m(dom.grid_dims(), dom.spacing());
  for (std::size_t k = 0; k < m.size(); ++k) {
    auto idx = m.unindex(k);
    std::array<int, Dim> yi{};
    for (int d = 0; d < Dim; ++d) yi[d] = idx[d] % cm.y_fluid.dims[d];
    m.values[k] = cm.y_fluid.values[cm.y_fluid.index(yi)];
  }
  if (require_connected && !is_connected(m))
    throw Error(ErrorKind::DisconnectedFluid, "fluid part of the domain is not connected");
  return m;
}

/// Stable FNV-1a hash of a canonical text form of the geometry.
template <int Dim>
std::string geometry_hash(const CellGeometry<Dim>& g) {
  std::ostringstream os;
  auto cell = [&](const RectCell<Dim>& c) {
    for (int d = 0; d < Dim; ++d) os << detail::fmt17(c.lengths[d]) << ',';
    os << '[';
    for (const auto& b : c.obstacles) {
      for (int d = 0; d < Dim; ++d) os << detail::fmt17(b.corner[d]) << ',';
      for (int d = 0; d < Dim; ++d) os << detail::fmt17(b.extent[d]) << ',';
      os << ';';
    }
    os << ']';
  };
  os << Dim << '|';
  cell(g.y_cell);
  os << '|';
  cell(g.z_cell);
  os << '|';
  for (int d = 0; d < Dim; ++d) os << g.subdivision[d] << ',';
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

using Box2 = Box<2>;
using RectCell2 = RectCell<2>;
using CellGeometry2 = CellGeometry<2>;
using Mask2 = Mask<2>;
using Domain2 = DoublePeriodicDomain<2>;

/// Default test geometry: unit Z with a centered half-size obstacle; unit Y tiled by
/// `subdivision` subcells per axis with Y_s the central half-size block.
inline CellGeometry2 default_geometry(int subdivision = 4) {
  CellGeometry2 g;
  g.z_cell.lengths = {1.0, 1.0};
  g.z_cell.obstacles = {Box2{{0.25, 0.25}, {0.5, 0.5}}};
  g.y_cell.lengths = {1.0, 1.0};
  g.y_cell.obstacles = {Box2{{0.25, 0.25}, {0.5, 0.5}}};
  g.subdivision = {subdivision, subdivision};
  return g;
}

}  // namespace twoscale
