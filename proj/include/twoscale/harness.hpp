#pragma once
/// Configuration ingestion (JSON) and deterministic result emission: geometry files, masks,
/// fields, unfolded fields, reports and run manifests.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoscale/properties.hpp"
#include "twoscale/study.hpp"

namespace twoscale {

using Json = nlohmann::ordered_json;

inline constexpr int kManifestVersion = 1;

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw Error(ErrorKind::InvalidConfig, "unknown key '" + it.key() + "' in " + where);
}

template <class T>
void take(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("key '") + key + "': " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IOFailure, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, where + ": " + e.what());
  }
}

inline std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') cur += '"', ++k;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::IOFailure, where + ": bad number '" + s + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------- geometry

inline Json to_json(const RectCell2& c) {
  Json obs = Json::array();
  for (const auto& b : c.obstacles)
    obs.push_back(Json{{"corner", {b.corner[0], b.corner[1]}}, {"extent", {b.extent[0], b.extent[1]}}});
  return Json{{"lengths", {c.lengths[0], c.lengths[1]}}, {"obstacles", obs}};
}

inline Json to_json(const CellGeometry2& g) {
  return Json{{"y_cell", to_json(g.y_cell)}, {"z_cell", to_json(g.z_cell)}, {"subdivision", {g.subdivision[0], g.subdivision[1]}}};
}

inline RectCell2 rect_cell_from_json(const Json& j, const std::string& where) {
  detail::check_keys(j, {"lengths", "obstacles"}, where);
  RectCell2 c;
  detail::take(j, "lengths", c.lengths);
  if (j.contains("obstacles"))
    for (const auto& o : j.at("obstacles")) {
      detail::check_keys(o, {"corner", "extent"}, where + ".obstacles");
      Box2 b;
      detail::take(o, "corner", b.corner);
      detail::take(o, "extent", b.extent);
      c.obstacles.push_back(b);
    }
  return c;
}

inline CellGeometry2 geometry_from_json(const Json& j) {
  detail::check_keys(j, {"y_cell", "z_cell", "subdivision"}, "geometry");
  if (!j.contains("y_cell") || !j.contains("z_cell") || !j.contains("subdivision"))
    throw Error(ErrorKind::InvalidGeometry, "geometry needs y_cell, z_cell and subdivision");
  CellGeometry2 g;
  g.y_cell = rect_cell_from_json(j.at("y_cell"), "y_cell");
  g.z_cell = rect_cell_from_json(j.at("z_cell"), "z_cell");
  detail::take(j, "subdivision", g.subdivision);
  return g;
}

inline CellGeometry2 load_geometry(const std::string& path) {
  return geometry_from_json(detail::parse_json(detail::read_file(path), path));
}

// ---------------------------------------------------------------- solver configs

inline const char* to_string(VelocityBackend b) {
  return b == VelocityBackend::Kkt ? "kkt" : (b == VelocityBackend::StreamFunction ? "stream" : "auto");
}

inline VelocityBackend parse_backend(const std::string& s) {
  if (s == "auto") return VelocityBackend::Auto;
  if (s == "kkt") return VelocityBackend::Kkt;
  if (s == "stream") return VelocityBackend::StreamFunction;
  throw Error(ErrorKind::InvalidConfig, "backend must be auto, kkt or stream");
}

inline Json to_json(const SolverConfig& c) {
  return Json{{"tol_div", c.tol_div},
              {"tol_vi", c.tol_vi},
              {"tol_coupling", c.tol_coupling},
              {"max_outer", c.max_outer},
              {"r", c.r},
              {"linear_tol", c.linear_tol},
              {"linear_max_iter", c.linear_max_iter},
              {"relaxation", c.relaxation},
              {"accelerate", c.accelerate},
              {"restart_factor", c.restart_factor},
              {"anderson_memory", c.anderson_memory},
              {"backend", to_string(c.backend)},
              {"throw_on_failure", c.throw_on_failure}};
}

inline void apply_json(const Json& j, SolverConfig& c, const std::string& where = "solver") {
  detail::check_keys(j, {"tol_div", "tol_vi", "tol_coupling", "max_outer", "r", "linear_tol", "linear_max_iter", "relaxation",
                         "accelerate", "restart_factor", "anderson_memory", "backend", "throw_on_failure"},
                     where);
  detail::take(j, "tol_div", c.tol_div);
  detail::take(j, "tol_vi", c.tol_vi);
  detail::take(j, "tol_coupling", c.tol_coupling);
  detail::take(j, "max_outer", c.max_outer);
  detail::take(j, "r", c.r);
  detail::take(j, "linear_tol", c.linear_tol);
  detail::take(j, "linear_max_iter", c.linear_max_iter);
  detail::take(j, "relaxation", c.relaxation);
  detail::take(j, "accelerate", c.accelerate);
  detail::take(j, "restart_factor", c.restart_factor);
  detail::take(j, "anderson_memory", c.anderson_memory);
  detail::take(j, "throw_on_failure", c.throw_on_failure);
  if (j.contains("backend")) c.backend = parse_backend(j.at("backend").get<std::string>());
}

inline Json to_json(const CellConfig& c) {
  return Json{{"y_resolution", c.y_resolution}, {"z_resolution", c.z_resolution}, {"solver", to_json(c.solver)},
              {"outer_max", c.outer_max},       {"outer_tol", c.outer_tol},       {"outer_relax", c.outer_relax},
              {"theta_nodes", c.theta_nodes},   {"threshold_tol", c.threshold_tol}};
}

inline void apply_json(const Json& j, CellConfig& c) {
  detail::check_keys(j, {"y_resolution", "z_resolution", "solver", "outer_max", "outer_tol", "outer_relax", "theta_nodes",
                         "threshold_tol"},
                     "cell");
  detail::take(j, "y_resolution", c.y_resolution);
  detail::take(j, "z_resolution", c.z_resolution);
  if (j.contains("solver")) apply_json(j.at("solver"), c.solver, "cell.solver");
  detail::take(j, "outer_max", c.outer_max);
  detail::take(j, "outer_tol", c.outer_tol);
  detail::take(j, "outer_relax", c.outer_relax);
  detail::take(j, "theta_nodes", c.theta_nodes);
  detail::take(j, "threshold_tol", c.threshold_tol);
}

inline Json to_json(const DarcyConfig& c) {
  return Json{{"tol", c.tol}, {"max_iter", c.max_iter}, {"damping", c.damping}, {"floor", c.floor},
              {"throw_on_failure", c.throw_on_failure}};
}

inline void apply_json(const Json& j, DarcyConfig& c) {
  detail::check_keys(j, {"tol", "max_iter", "damping", "floor", "throw_on_failure"}, "darcy");
  detail::take(j, "tol", c.tol);
  detail::take(j, "max_iter", c.max_iter);
  detail::take(j, "damping", c.damping);
  detail::take(j, "floor", c.floor);
  detail::take(j, "throw_on_failure", c.throw_on_failure);
}

inline Json to_json(const Box2& b) { return Json{{"corner", {b.corner[0], b.corner[1]}}, {"extent", {b.extent[0], b.extent[1]}}}; }

inline Box2 box_from_json(const Json& j, const std::string& where) {
  detail::check_keys(j, {"corner", "extent"}, where);
  Box2 b{{0.0, 0.0}, {1.0, 1.0}};
  detail::take(j, "corner", b.corner);
  detail::take(j, "extent", b.extent);
  return b;
}

/// Gridded forcing samples: CSV with header i,j,f1,f2 on an (nx × ny) node lattice spanning Ω.
inline void load_gridded_forcing(const std::string& path, ForcingSpec& spec) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  std::getline(in, line);
  if (detail::csv_split(line) != std::vector<std::string>{"i", "j", "f1", "f2"})
    throw Error(ErrorKind::IOFailure, path + ": header must be i,j,f1,f2");
  std::vector<std::array<double, 4>> rows;
  int nx = 0, ny = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::csv_split(line);
    if (f.size() != 4) throw Error(ErrorKind::IOFailure, path + ": expected 4 columns");
    std::array<double, 4> r{};
    for (int k = 0; k < 4; ++k) r[k] = detail::parse_double(f[k], path);
    nx = std::max(nx, static_cast<int>(r[0]) + 1);
    ny = std::max(ny, static_cast<int>(r[1]) + 1);
    rows.push_back(r);
  }
  if (rows.size() != static_cast<std::size_t>(nx) * ny) throw Error(ErrorKind::IOFailure, path + ": incomplete lattice");
  spec.grid_dims = {nx, ny};
  spec.grid_values.assign(rows.size(), Vec2::Zero());
  for (const auto& r : rows) spec.grid_values[static_cast<int>(r[0]) + static_cast<std::size_t>(nx) * static_cast<int>(r[1])] = Vec2(r[2], r[3]);
}

inline Json to_json(const ForcingSpec& f) {
  Json j{{"preset", f.preset}, {"amplitude", f.amplitude}, {"constant", {f.constant[0], f.constant[1]}}};
  if (f.preset == "gridded") {
    j["file"] = f.source;
    j["grid_dims"] = {f.grid_dims[0], f.grid_dims[1]};
    j["grid_hash"] = detail::fnv_hex([&] {
      std::string s;
      for (const auto& v : f.grid_values) s += detail::fmt17(v[0]) + "," + detail::fmt17(v[1]) + ";";
      return s;
    }());
  }
  return j;
}

inline void apply_json(const Json& j, ForcingSpec& f, const std::string& base_dir) {
  detail::check_keys(j, {"preset", "amplitude", "constant", "file", "grid_dims", "grid_hash"}, "forcing");
  detail::take(j, "preset", f.preset);
  detail::take(j, "amplitude", f.amplitude);
  if (j.contains("constant")) {
    std::array<double, 2> c{};
    detail::take(j, "constant", c);
    f.constant = Vec2(c[0], c[1]);
  }
  if (j.contains("file")) {
    std::filesystem::path p = j.at("file").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    f.source = p.string();
    f.preset = "gridded";
    load_gridded_forcing(f.source, f);
  }
  f.validate();
}

// ---------------------------------------------------------------- study and property configs

inline Json to_json(const StudyConfig& c) {
  Json levels = Json::array();
  for (double e : c.eps_levels) levels.push_back(e);
  return Json{{"geometry", to_json(c.geometry)},
              {"geometry_file", c.geometry_file},
              {"omega", to_json(c.omega)},
              {"g", c.g},
              {"mu", c.mu},
              {"forcing", to_json(c.forcing)},
              {"eps_levels", levels},
              {"refine_delta", c.refine_delta},
              {"grid_per_subcell", c.grid_per_subcell},
              {"fine", to_json(c.fine)},
              {"cell", to_json(c.cell)},
              {"strategy", to_string(c.strategy)},
              {"law_angles", c.law_angles},
              {"macro_dims", {c.macro.dims[0], c.macro.dims[1]}},
              {"darcy", to_json(c.darcy)},
              {"seed", c.seed},
              {"require_monotone", c.require_monotone},
              {"max_final_gap_u", c.max_final_gap_u},
              {"output_dir", c.output_dir}};
}

/// Overrides the fields present in `j`; relative paths resolve against `base_dir`.
inline void apply_json(const Json& j, StudyConfig& c, const std::string& base_dir = "") {
  detail::check_keys(j, {"geometry", "geometry_file", "omega", "g", "mu", "forcing", "eps_levels", "refine_delta",
                         "grid_per_subcell", "fine", "cell", "strategy", "law_angles", "macro_dims", "darcy", "seed",
                         "require_monotone", "max_final_gap_u", "output_dir"},
                     "study config");
  if (j.contains("geometry_file") && !j.at("geometry_file").get<std::string>().empty()) {
    std::filesystem::path p = j.at("geometry_file").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    c.geometry_file = p.string();
    c.geometry = load_geometry(c.geometry_file);
  }
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
  if (j.contains("omega")) c.omega = box_from_json(j.at("omega"), "omega");
  c.macro.omega = c.omega;
  detail::take(j, "g", c.g);
  detail::take(j, "mu", c.mu);
  if (j.contains("forcing")) apply_json(j.at("forcing"), c.forcing, base_dir);
  detail::take(j, "eps_levels", c.eps_levels);
  detail::take(j, "refine_delta", c.refine_delta);
  detail::take(j, "grid_per_subcell", c.grid_per_subcell);
  if (j.contains("fine")) apply_json(j.at("fine"), c.fine, "fine");
  if (j.contains("cell")) apply_json(j.at("cell"), c.cell);
  if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  detail::take(j, "law_angles", c.law_angles);
  detail::take(j, "macro_dims", c.macro.dims);
  if (j.contains("darcy")) apply_json(j.at("darcy"), c.darcy);
  detail::take(j, "seed", c.seed);
  detail::take(j, "require_monotone", c.require_monotone);
  detail::take(j, "max_final_gap_u", c.max_final_gap_u);
  detail::take(j, "output_dir", c.output_dir);
}

inline Json to_json(const PropertyConfig& c) {
  Json levels = Json::array();
  for (double e : c.two_scale_levels) levels.push_back(e);
  return Json{{"geometry", to_json(c.geometry)},
              {"epsilon", c.epsilon},
              {"grid_per_subcell", c.grid_per_subcell},
              {"seed", c.seed},
              {"suites", c.suites},
              {"unfold_grid", {c.unfold_grid[0], c.unfold_grid[1]}},
              {"two_scale_levels", levels},
              {"two_scale_grid_per_subcell", c.two_scale_grid_per_subcell},
              {"cell_resolution", c.cell_resolution},
              {"g", c.g}};
}

inline void apply_json(const Json& j, PropertyConfig& c, const std::string& base_dir = "") {
  detail::check_keys(j, {"geometry", "geometry_file", "epsilon", "grid_per_subcell", "seed", "suites", "unfold_grid",
                         "two_scale_levels", "two_scale_grid_per_subcell", "cell_resolution", "g"},
                     "property config");
  if (j.contains("geometry_file") && !j.at("geometry_file").get<std::string>().empty()) {
    std::filesystem::path p = j.at("geometry_file").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    c.geometry = load_geometry(p.string());
  }
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
  detail::take(j, "epsilon", c.epsilon);
  detail::take(j, "grid_per_subcell", c.grid_per_subcell);
  detail::take(j, "seed", c.seed);
  detail::take(j, "suites", c.suites);
  detail::take(j, "unfold_grid", c.unfold_grid);
  detail::take(j, "two_scale_levels", c.two_scale_levels);
  detail::take(j, "two_scale_grid_per_subcell", c.two_scale_grid_per_subcell);
  detail::take(j, "cell_resolution", c.cell_resolution);
  detail::take(j, "g", c.g);
}

/// Loads a JSON config file and applies it over `c` (file values win over earlier settings).
template <class Config>
void apply_config_file(const std::string& path, Config& c) {
  Json j = detail::parse_json(detail::read_file(path), path);
  apply_json(j, c, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------- text emitters

/// ASCII PGM (P2), rows from top (largest y) to bottom; fluid 255, solid 0.
inline std::string mask_pgm(const Mask2& m) {
  std::ostringstream os;
  os << "P2\n" << m.dims[0] << " " << m.dims[1] << "\n255\n";
  for (int j = m.dims[1] - 1; j >= 0; --j) {
    for (int i = 0; i < m.dims[0]; ++i) os << (i ? " " : "") << (m.fluid({i, j}) ? 255 : 0);
    os << "\n";
  }
  return os.str();
}

inline std::string mask_csv(const Mask2& m) {
  std::ostringstream os;
  os << "i,j,fluid\n";
  for (int j = 0; j < m.dims[1]; ++j)
    for (int i = 0; i < m.dims[0]; ++i) os << i << "," << j << "," << (m.fluid({i, j}) ? 1 : 0) << "\n";
  return os.str();
}

/// Cell-centred scalar field as CSV: i,j,x,y,value (x, y absolute via `origin`).
inline std::string field_csv(const ScalarField& f, std::array<double, 2> origin = {0.0, 0.0}) {
  std::ostringstream os;
  os << "i,j,x,y,value\n";
  for (int j = 0; j < f.grid.dims[1]; ++j)
    for (int i = 0; i < f.grid.dims[0]; ++i)
      os << i << "," << j << "," << detail::fmt17(origin[0] + f.grid.xc(i)) << "," << detail::fmt17(origin[1] + f.grid.yc(j))
         << "," << detail::fmt17(f.at(i, j)) << "\n";
  return os.str();
}

/// Face-centred vector field as CSV: component,i,j,x,y,value.
inline std::string field_csv(const VectorField& u, std::array<double, 2> origin = {0.0, 0.0}) {
  std::ostringstream os;
  os << "component,i,j,x,y,value\n";
  for (int c = 0; c < 2; ++c) {
    auto fd = u.grid.face_dims(c);
    for (int j = 0; j < fd[1]; ++j)
      for (int i = 0; i < fd[0]; ++i) {
        auto p = u.grid.face_point(c, i, j);
        os << c << "," << i << "," << j << "," << detail::fmt17(origin[0] + p[0]) << "," << detail::fmt17(origin[1] + p[1])
           << "," << detail::fmt17(u.at(c, i, j)) << "\n";
      }
  }
  return os.str();
}

/// Reads a scalar field written by field_csv; spacing is recovered from the cell centres.
inline ScalarField load_field_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (detail::csv_split(line) != std::vector<std::string>{"i", "j", "x", "y", "value"})
    throw Error(ErrorKind::IOFailure, "field CSV header must be i,j,x,y,value");
  struct Row {
    int i, j;
    double x, y, v;
  };
  std::vector<Row> rows;
  int nx = 0, ny = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::csv_split(line);
    if (f.size() != 5) throw Error(ErrorKind::IOFailure, "field CSV: expected 5 columns");
    Row r{std::stoi(f[0]), std::stoi(f[1]), detail::parse_double(f[2], "x"), detail::parse_double(f[3], "y"),
          detail::parse_double(f[4], "value")};
    nx = std::max(nx, r.i + 1);
    ny = std::max(ny, r.j + 1);
    rows.push_back(r);
  }
  if (rows.empty() || rows.size() != static_cast<std::size_t>(nx) * ny) throw Error(ErrorKind::IOFailure, "field CSV: incomplete grid");
  // centres are (i + 1/2)h offset by the origin; two distinct centres fix h
  std::array<double, 2> h{1.0, 1.0};
  const Row& r0 = rows.front();
  for (const auto& r : rows) {
    if (r.i != r0.i) h[0] = (r.x - r0.x) / (r.i - r0.i);
    if (r.j != r0.j) h[1] = (r.y - r0.y) / (r.j - r0.j);
  }
  if (nx == 1) h[0] = 2.0 * (r0.x);
  if (ny == 1) h[1] = 2.0 * (r0.y);
  ScalarField out(StaggeredGrid{{nx, ny}, h, {false, false}});
  for (const auto& r : rows) out.at(r.i, r.j) = r.v;
  return out;
}

/// Structured-grid text format: header lines then one value per line, x fastest.
inline std::string field_grid(const ScalarField& f, const std::string& name, std::array<double, 2> origin = {0.0, 0.0}) {
  std::ostringstream os;
  os << "twoscale-grid 1\nname " << name << "\nlocation cell\ndims " << f.grid.dims[0] << " " << f.grid.dims[1]
     << "\nspacing " << detail::fmt17(f.grid.spacing[0]) << " " << detail::fmt17(f.grid.spacing[1]) << "\norigin "
     << detail::fmt17(origin[0]) << " " << detail::fmt17(origin[1]) << "\nvalues\n";
  for (double v : f.values) os << detail::fmt17(v) << "\n";
  return os.str();
}

inline std::string field_grid(const VectorField& u, const std::string& name, std::array<double, 2> origin = {0.0, 0.0}) {
  std::ostringstream os;
  for (int c = 0; c < 2; ++c) {
    auto fd = u.grid.face_dims(c);
    os << "twoscale-grid 1\nname " << name << "_" << c + 1 << "\nlocation face_" << c + 1 << "\ndims " << fd[0] << " "
       << fd[1] << "\nspacing " << detail::fmt17(u.grid.spacing[0]) << " " << detail::fmt17(u.grid.spacing[1])
       << "\norigin " << detail::fmt17(origin[0]) << " " << detail::fmt17(origin[1]) << "\nvalues\n";
    for (double v : u.comp[c]) os << detail::fmt17(v) << "\n";
  }
  return os.str();
}

/// Unfolded field as CSV: k1,k2,y1,y2,value (level 1) or k1,k2,y1,y2,z1,z2,value (level 2), where
/// for level 2 (y1, y2) is the lower corner of the δ-subcell in Y.
inline std::string unfolded_csv(const UnfoldedField& v) {
  std::ostringstream os;
  if (v.level == 1) {
    os << "k1,k2,y1,y2,value\n";
    for (int ky = 0; ky < v.macro_dims[1]; ++ky)
      for (int kx = 0; kx < v.macro_dims[0]; ++kx)
        for (int yy = 0; yy < v.y_dims[1]; ++yy)
          for (int yx = 0; yx < v.y_dims[0]; ++yx) {
            auto y = v.y_point(yx, yy);
            os << kx << "," << ky << "," << detail::fmt17(y[0]) << "," << detail::fmt17(y[1]) << ","
               << detail::fmt17(v.at1(kx, ky, yx, yy)) << "\n";
          }
    return os.str();
  }
  os << "k1,k2,y1,y2,z1,z2,value\n";
  for (int ky = 0; ky < v.macro_dims[1]; ++ky)
    for (int kx = 0; kx < v.macro_dims[0]; ++kx)
      for (int ly = 0; ly < v.sub_dims[1]; ++ly)
        for (int lx = 0; lx < v.sub_dims[0]; ++lx)
          for (int zy = 0; zy < v.z_dims[1]; ++zy)
            for (int zx = 0; zx < v.z_dims[0]; ++zx) {
              auto z = v.z_point(zx, zy);
              os << kx << "," << ky << "," << detail::fmt17(lx * v.y_lengths[0] / v.sub_dims[0]) << ","
                 << detail::fmt17(ly * v.y_lengths[1] / v.sub_dims[1]) << "," << detail::fmt17(z[0]) << ","
                 << detail::fmt17(z[1]) << "," << detail::fmt17(v.at2(kx, ky, lx, ly, zx, zy)) << "\n";
            }
  return os.str();
}

struct UnfoldedRow {
  int k1 = 0, k2 = 0;
  double y1 = 0, y2 = 0, z1 = 0, z2 = 0, value = 0;
};

/// Rows of an unfolded CSV, in file order (the order of unfolded_csv).
inline std::vector<UnfoldedRow> load_unfolded_csv(const std::string& text, int* level = nullptr) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  auto head = detail::csv_split(line);
  int lv = 0;
  if (head == std::vector<std::string>{"k1", "k2", "y1", "y2", "value"}) lv = 1;
  if (head == std::vector<std::string>{"k1", "k2", "y1", "y2", "z1", "z2", "value"}) lv = 2;
  if (!lv) throw Error(ErrorKind::IOFailure, "unfolded CSV: unknown header");
  if (level) *level = lv;
  std::vector<UnfoldedRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::csv_split(line);
    if (f.size() != head.size()) throw Error(ErrorKind::IOFailure, "unfolded CSV: column count");
    UnfoldedRow r;
    r.k1 = std::stoi(f[0]);
    r.k2 = std::stoi(f[1]);
    r.y1 = detail::parse_double(f[2], "y1");
    r.y2 = detail::parse_double(f[3], "y2");
    if (lv == 2) {
      r.z1 = detail::parse_double(f[4], "z1");
      r.z2 = detail::parse_double(f[5], "z2");
    }
    r.value = detail::parse_double(f.back(), "value");
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------- reports

inline std::string study_levels_csv(const ConvergenceReport& r) {
  std::ostringstream os;
  auto n = [](double v) { return detail::fmt17(v); };
  os << "epsilon,delta,eps_delta,subdivision,nx,ny,fluid_cells,status,u_l2,scaled_grad_l2,p_l2,gap_u,gap_p,gap_p_fluid,"
        "rigid_fraction,rigid_gradient,relation_residual,iterations,converged,div_max,error\n";
  for (const auto& l : r.levels)
    os << n(l.epsilon) << "," << n(l.delta) << "," << n(l.eps_delta) << "," << l.subdivision << "," << l.grid_dims[0] << ","
       << l.grid_dims[1] << "," << l.fluid_cells << "," << l.status << "," << n(l.norms.u_l2) << "," << n(l.norms.scaled_grad_l2)
       << "," << n(l.norms.p_l2) << "," << n(l.gap_u) << "," << n(l.gap_p) << "," << n(l.gap_p_fluid) << ","
       << n(l.rigid_fraction) << "," << n(l.rigid_gradient) << "," << n(l.relation_residual) << "," << l.iterations << ","
       << (l.converged ? 1 : 0) << "," << n(l.div_max) << "," << detail::csv_quote(l.error) << "\n";
  return os.str();
}

inline Json to_json(const ConvergenceReport& r) {
  Json levels = Json::array();
  for (const auto& l : r.levels)
    levels.push_back(Json{{"epsilon", l.epsilon},
                          {"delta", l.delta},
                          {"status", l.status},
                          {"error", l.error},
                          {"gap_u", l.gap_u},
                          {"gap_p", l.gap_p},
                          {"gap_p_fluid", l.gap_p_fluid},
                          {"rigid_fraction", l.rigid_fraction},
                          {"u_l2", l.norms.u_l2},
                          {"scaled_grad_l2", l.norms.scaled_grad_l2},
                          {"p_l2", l.norms.p_l2}});
  const Mat2& K = r.linear_K;
  return Json{{"levels", levels},
              {"slope_gap_u", r.slope_gap_u},
              {"slope_gap_p", r.slope_gap_p},
              {"monotone_u", r.monotone_u},
              {"monotone_p", r.monotone_p},
              {"conversion", r.conversion},
              {"law_geometry_hash", r.law_hash},
              {"linear_K", {K(0, 0), K(0, 1), K(1, 0), K(1, 1)}},
              {"macro", Json{{"iterations", r.macro_iterations},
                             {"converged", r.macro_converged},
                             {"residual", r.macro_residual},
                             {"correction", r.macro_correction},
                             {"div_max", r.macro_div_max},
                             {"boundary_flux", r.macro_boundary_flux},
                             {"all_rigid", r.macro_all_rigid},
                             {"u0_l2", r.u0_l2},
                             {"p_hat_l2", r.p_hat_l2}}}};
}

inline std::string properties_csv(const PropertyReport& r) {
  std::ostringstream os;
  os << "suite,name,value,tolerance,passed,detail\n";
  for (const auto& it : r.items)
    os << it.suite << "," << it.name << "," << detail::fmt17(it.value) << "," << detail::fmt17(it.tolerance) << ","
       << (it.passed ? 1 : 0) << "," << detail::csv_quote(it.detail) << "\n";
  return os.str();
}

// ---------------------------------------------------------------- output set and manifest

/// Collects the deterministic outputs of one run and writes them with a manifest; wall times go
/// to a separate timings file that the manifest does not list.
class RunOutput {
 public:
  RunOutput(std::string dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::IOFailure, "cannot create " + dir_ + ": " + ec.message());
  }

  const std::string& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    write_raw(name, content);
    files_.push_back(Json{{"path", name}, {"bytes", content.size()}, {"fnv1a", detail::fnv_hex(content)}});
  }

  void timing(const std::string& key, double seconds) { timings_[key] = seconds; }

  /// Writes manifest.json (and timings.json when timings were recorded).
  void finish(const Json& config, const std::string& geometry_hash, const Json& result, bool passed) {
    Json m{{"format", "twoscale-manifest"},
           {"version", kManifestVersion},
           {"command", command_},
           {"geometry_hash", geometry_hash},
           {"config", config},
           {"result", result},
           {"passed", passed},
           {"outputs", files_}};
    write_raw("manifest.json", m.dump(2) + "\n");
    if (!timings_.empty()) write_raw("timings.json", timings_.dump(2) + "\n");
  }

 private:
  void write_raw(const std::string& name, const std::string& content) const {
    std::filesystem::path p = std::filesystem::path(dir_) / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorKind::IOFailure, "cannot write " + p.string());
    out << content;
    if (!out) throw Error(ErrorKind::IOFailure, "write failed: " + p.string());
  }

  std::string dir_, command_;
  Json files_ = Json::array();
  Json timings_ = Json::object();
};

inline Json read_manifest(const std::string& path) { return detail::parse_json(detail::read_file(path), path); }

}  // namespace twoscale
