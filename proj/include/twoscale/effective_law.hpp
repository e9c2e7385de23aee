#pragma once
/// Nonlinear Darcy map λ ↦ 𝒦(λ): polar interpolation tables, the two-level cell strategy,
/// memoized evaluation, yield thresholds and the versioned law file.

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>

#include "twoscale/cell_problems.hpp"

namespace twoscale {

/// Radial nodes in units of the direction-wise threshold: coarse inside the rigid range,
/// dense on [0.8, 1.5], then coarser and finally geometric.
inline std::vector<double> default_radial_nodes() {
  std::vector<double> s{0.0, 0.5};
  for (int k = 0; k <= 28; ++k) s.push_back(0.8 + 0.025 * k);
  for (int k = 1; k <= 15; ++k) s.push_back(1.5 + 0.1 * k);
  double v = 3.0;
  for (int k = 0; k < 16; ++k) s.push_back(v *= 1.25);
  return s;
}

/// Map of a 2-vector argument interpolated on a polar grid: angles θ_i = 2πi/n and radii
/// s_k·t_c(θ_i), with t_c the yield threshold in direction θ_i. Node values are kept in the local
/// (radial, tangential) frame and blended bilinearly in (s, θ); beyond the last radius the last
/// segment is extended linearly. Missing nodes are computed on demand.
class PolarTable {
 public:
  using ThresholdFn = std::function<double(const Vec2& direction)>;
  using ValueFn = std::function<Vec2(const Vec2& argument)>;

  PolarTable(int n_theta, std::vector<double> s_nodes, ThresholdFn threshold, ValueFn value)
      : n_(n_theta), s_(std::move(s_nodes)), threshold_fn_(std::move(threshold)), value_fn_(std::move(value)) {
    check();
    tc_.assign(n_, std::numeric_limits<double>::quiet_NaN());
    vals_.assign(static_cast<std::size_t>(n_) * s_.size(), std::nullopt);
  }

  /// Fully populated table; `values` are Cartesian, θ-major.
  PolarTable(int n_theta, std::vector<double> s_nodes, std::vector<double> thresholds, const std::vector<Vec2>& values)
      : n_(n_theta), s_(std::move(s_nodes)), tc_(std::move(thresholds)) {
    check();
    if (tc_.size() != static_cast<std::size_t>(n_) || values.size() != static_cast<std::size_t>(n_) * s_.size())
      throw Error(ErrorKind::ShapeMismatch, "polar table data size");
    vals_.resize(values.size());
    for (int i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < s_.size(); ++k) vals_[i * s_.size() + k] = to_local(values[i * s_.size() + k], i);
  }

  int theta_count() const { return n_; }
  const std::vector<double>& radii() const { return s_; }
  double angle(int i) const { return 2.0 * std::numbers::pi * i / n_; }
  Vec2 direction(int i) const { return Vec2(std::cos(angle(i)), std::sin(angle(i))); }

  double threshold(int i) const {
    if (std::isnan(tc_[i])) {
      if (!threshold_fn_) throw Error(ErrorKind::InvalidConfig, "polar table threshold missing");
      tc_[i] = threshold_fn_(direction(i));
      if (!(tc_[i] > 0)) throw Error(ErrorKind::NoBracket, "polar table needs a positive threshold");
    }
    return tc_[i];
  }

  Vec2 node_argument(int i, std::size_t k) const { return s_[k] * threshold(i) * direction(i); }

  /// Cartesian node value.
  Vec2 node_value(int i, std::size_t k) const {
    Vec2 loc = local(i, k);
    Vec2 e = direction(i), t(-e[1], e[0]);
    return loc[0] * e + loc[1] * t;
  }

  Vec2 operator()(const Vec2& x) const {
    double r = x.norm();
    if (r == 0.0) return Vec2::Zero();
    double th = std::atan2(x[1], x[0]);
    if (th < 0) th += 2.0 * std::numbers::pi;
    double pos = th / (2.0 * std::numbers::pi) * n_;
    int i0 = static_cast<int>(std::floor(pos)) % n_;
    double wt = pos - std::floor(pos);
    int i1 = (i0 + 1) % n_;
    double tc = (1.0 - wt) * threshold(i0) + wt * threshold(i1);
    double s = r / tc;
    std::size_t k;
    if (s >= s_.back()) {
      k = s_.size() - 2;
    } else {
      k = static_cast<std::size_t>(std::upper_bound(s_.begin(), s_.end(), s) - s_.begin()) - 1;
    }
    double ws = (s - s_[k]) / (s_[k + 1] - s_[k]);
    Vec2 loc = (1.0 - wt) * ((1.0 - ws) * local(i0, k) + ws * local(i0, k + 1)) +
               wt * ((1.0 - ws) * local(i1, k) + ws * local(i1, k + 1));
    Vec2 e(std::cos(th), std::sin(th)), t(-e[1], e[0]);
    return loc[0] * e + loc[1] * t;
  }

  /// Computes every node.
  void fill() const {
    for (int i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < s_.size(); ++k) local(i, k);
  }

  std::size_t computed_nodes() const {
    return static_cast<std::size_t>(std::count_if(vals_.begin(), vals_.end(), [](const auto& v) { return v.has_value(); }));
  }

 private:
  void check() const {
    if (n_ < 4) throw Error(ErrorKind::InvalidConfig, "polar table needs >= 4 angles");
    if (s_.size() < 2 || s_[0] != 0.0 || !std::is_sorted(s_.begin(), s_.end()) ||
        std::adjacent_find(s_.begin(), s_.end()) != s_.end())
      throw Error(ErrorKind::InvalidConfig, "polar radii must start at 0 and increase");
  }

  Vec2 to_local(const Vec2& v, int i) const {
    Vec2 e = direction(i);
    return Vec2(v.dot(e), -v[0] * e[1] + v[1] * e[0]);
  }

  const Vec2& local(int i, std::size_t k) const {
    auto& slot = vals_[i * s_.size() + k];
    if (!slot) {
      if (!value_fn_) throw Error(ErrorKind::InvalidConfig, "polar table value missing");
      slot = k == 0 ? Vec2::Zero() : to_local(value_fn_(node_argument(i, k)), i);
    }
    return *slot;
  }

  int n_;
  std::vector<double> s_;
  ThresholdFn threshold_fn_;
  ValueFn value_fn_;
  mutable std::vector<double> tc_;
  mutable std::vector<std::optional<Vec2>> vals_;
};

namespace detail {

/// Smallest t with flowing(t): doubling/halving to a bracket from t0, then bisection until the
/// bracket width is ≤ rel·hi. Returns the bracket.
inline std::pair<double, double> bracket_threshold(const std::function<bool(double)>& flowing, double t0,
                                                   double rel = 0.01, int max_steps = 200) {
  double lo = 0.0, hi = 0.0, t = t0;
  if (flowing(t)) {
    hi = t;
    for (int k = 0; k < max_steps; ++k) {
      t *= 0.5;
      if (!flowing(t)) {
        lo = t;
        break;
      }
      hi = t;
    }
    if (lo == 0.0) throw NoBracket("no rigid regime found above zero", 0.0);
  } else {
    lo = t;
    for (int k = 0; k < max_steps; ++k) {
      t *= 2.0;
      if (flowing(t)) {
        hi = t;
        break;
      }
      lo = t;
    }
    if (hi == 0.0) throw NoBracket("no flow found up to t_max", lo);
  }
  while (hi - lo > rel * hi) {
    double mid = 0.5 * (lo + hi);
    (flowing(mid) ? hi : lo) = mid;
  }
  return {lo, hi};
}

}  // namespace detail

/// Z-level Bingham law ξ ↦ ∫_{Z*} χ dz for periodic Z* with no slip on ∂Z_s, viscosity 2μ.
class ZLaw {
 public:
  ZLaw(const RectCell2& z_cell, double mu, const CellConfig& cfg)
      : z_(z_cell, cfg.z_resolution), mu2_(2.0 * mu), cfg_(cfg.solver), threshold_tol_(cfg.threshold_tol) {
    if (z_cell.obstacles.empty())
      throw Error(ErrorKind::InvalidGeometry, "cell problems need a nonempty Z_s (no-slip surface)");
    r_ = cfg_.r > 0 ? cfg_.r : mu2_;
    proj_ = std::make_unique<KktProjector>(z_.op(), r_, cfg_.linear_tol, cfg_.linear_max_iter);
    KktProjector lin(z_.op(), mu2_, cfg_.linear_tol, cfg_.linear_max_iter);
    for (int k = 0; k < 2; ++k) linear_.col(k) = z_.integral(lin.solve(z_.unit(k)));
    linear_ = 0.5 * (linear_ + linear_.transpose()).eval();
    table_ = std::make_unique<PolarTable>(
        cfg.theta_nodes, default_radial_nodes(), [this](const Vec2& d) { return unit_threshold(d); },
        [this](const Vec2& x) { return solve(x, 1.0, false); });
  }

  const ZCell& z() const { return z_; }
  /// Linear response matrix ∫χ for unit forcings.
  const Mat2& linear() const { return linear_; }
  const PolarTable& table() const { return *table_; }

  /// Direct solve: ∫_{Z*} χ for forcing ξ and yield g.
  Vec2 solve(const Vec2& xi, double g, bool throw_on_failure = true) const {
    if (g == 0.0) return linear_ * xi;
    Vec ft = xi[0] * z_.unit(0) + xi[1] * z_.unit(1);
    detail::MacAlOps ops{z_.op(), *proj_};
    SolverConfig c = cfg_;
    c.throw_on_failure = throw_on_failure;
    auto out = detail::run_augmented_lagrangian(ops, ft, g, mu2_, r_, c, nullptr);
    ++solves_;
    return z_.integral(out.u);
  }

  /// Interpolated law g·T(ξ/g) with T the unit-yield table.
  Vec2 operator()(const Vec2& xi, double g) const {
    if (g == 0.0) return linear_ * xi;
    return g * (*table_)(xi / g);
  }

  bool is_zero(const Vec2& flux, const Vec2& xi) const { return flux.norm() <= 1e-10 * (linear_ * xi).norm(); }

  /// Threshold for unit yield in direction d.
  double unit_threshold(const Vec2& d) const {
    auto flowing = [&](double t) { return !is_zero(solve(t * d, 1.0, false), t * d); };
    auto [lo, hi] = detail::bracket_threshold(flowing, 1.0, threshold_tol_);
    return 0.5 * (lo + hi);
  }

  std::size_t solve_count() const { return solves_; }

 private:
  ZCell z_;
  double mu2_, r_ = 0.0;
  SolverConfig cfg_;
  double threshold_tol_;
  std::unique_ptr<KktProjector> proj_;
  Mat2 linear_ = Mat2::Zero();
  std::unique_ptr<PolarTable> table_;
  mutable std::size_t solves_ = 0;
};

/// Two-level strategy: Z-level laws at every Y* cell with forcing λ - ∇_y q, and an outer
/// preconditioned iteration on q until div_y U = 0. The preconditioner is the linear coupling
/// matrix, so the linear case converges in one step.
class TwoLevelCellSolver {
 public:
  TwoLevelCellSolver(const CellGeometry2& geom, double mu, const CellConfig& cfg)
      : cfg_(cfg), y_(geom.y_cell, cfg.y_resolution) {
    cfg_.validate();
    detail::require_cell_geometry(geom);
    zlaw_ = std::make_unique<ZLaw>(geom.z_cell, mu, cfg_);
    M_pinv_ = detail::pseudo_inverse(y_.coupling_matrix(zlaw_->linear()));
  }

  const ZLaw& zlaw() const { return *zlaw_; }
  const YCell& y() const { return y_; }

  CellSolution solve(const Vec2& lambda, double g, bool strict = true) const {
    if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
    const Eigen::Index nc = y_.count();
    CellSolution s;
    s.strategy = CellStrategy::TwoLevel;
    s.lambda = lambda;
    s.q = Vec::Zero(nc);
    s.averages.resize(2, nc);
    double scale = std::sqrt(double(nc)) * (zlaw_->linear() * lambda).norm() / y_.mask().spacing[0];
    s.converged = false;
    // Accelerated preconditioned gradient steps on q ↦ Σ_y Ψ(λ - (Bᵀq)_y), whose gradient is
    // -B U; the linear coupling matrix majorises the Hessian. Momentum restarts when the step
    // opposes the current descent direction.
    Vec q = s.q, yq = s.q;
    double t = 1.0;
    auto fluxes = [&](const Vec& qq) {
      Vec bq = y_.B().transpose() * qq;
      for (Eigen::Index c = 0; c < nc; ++c)
        s.averages.col(c) = (*zlaw_)(lambda - Vec2(bq[2 * c], bq[2 * c + 1]), g);
      return Vec(y_.B() * Eigen::Map<const Vec>(s.averages.data(), 2 * nc));
    };
    for (int it = 0; it <= cfg_.outer_max; ++it) {
      Vec res = fluxes(yq);
      s.iterations = it;
      s.div_y = res.size() ? res.cwiseAbs().maxCoeff() : 0.0;
      if (res.norm() <= cfg_.outer_tol * scale) {
        s.q = yq;
        s.converged = true;
        break;
      }
      if (it == cfg_.outer_max) {
        s.q = yq;
        break;
      }
      Vec q_new = yq + cfg_.outer_relax * (M_pinv_ * res);
      if (res.dot(q_new - q) < 0.0) {
        t = 1.0;
        yq = q_new;
      } else {
        double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        yq = q_new + ((t - 1.0) / t_new) * (q_new - q);
        t = t_new;
      }
      q = std::move(q_new);
    }
    if (!s.converged && strict && cfg_.solver.throw_on_failure)
      throw NonConvergence("two-level outer iteration", s.iterations, s.div_y);
    s.flux = s.averages.rowwise().sum() * y_.cell_area() / (y_.fluid_volume() * zlaw_->z().fluid_volume());
    return s;
  }

 private:
  CellConfig cfg_;
  YCell y_;
  std::unique_ptr<ZLaw> zlaw_;
  Eigen::MatrixXd M_pinv_;
};

/// Volume factors: 𝒦 carries 1/(|Y*||Z*|); the weak limit of the fine velocity carries
/// 1/(|Y||Z|). `conversion()` is the factor between them.
struct LawNormalization {
  double y_star = 0.0, z_star = 0.0, y_total = 0.0, z_total = 0.0;
  double conversion() const { return y_star * z_star / (y_total * z_total); }
};

struct LawRow {
  Vec2 lambda = Vec2::Zero();
  Vec2 flux = Vec2::Zero();
};

/// Linear permeability and the nonlinear map: memo rows keyed by quantized λ, optional polar
/// grid for interpolation, and yield thresholds by direction.
struct EffectiveLaw {
  static constexpr int kVersion = 1;

  std::string geometry_hash;
  double g = 0.0;
  double mu = 1.0;
  int y_resolution = 0;
  int z_resolution = 0;
  std::string strategy = "product";
  LawNormalization normalization;
  std::optional<Mat2> linear_K;
  std::map<std::pair<long, long>, LawRow> memo;
  std::vector<std::pair<double, double>> yield_thresholds;  ///< (direction angle, λ_c)
  // Polar grid in units of g (unit-yield map), present after tabulation.
  int polar_theta = 0;
  std::vector<double> polar_s;
  std::vector<double> polar_thresholds;
  std::vector<Vec2> polar_values;

  static std::pair<long, long> quantize(const Vec2& lambda) {
    double r = lambda.norm();
    if (r == 0.0) return {std::numeric_limits<long>::min(), 0};
    long mag = std::lround(std::log(r) / std::log1p(1e-3));
    double deg = std::atan2(lambda[1], lambda[0]) * 180.0 / std::numbers::pi;
    long ang = std::lround(deg);
    ang = ((ang % 360) + 360) % 360;
    return {mag, ang};
  }

  const LawRow* find(const Vec2& lambda) const {
    auto it = memo.find(quantize(lambda));
    return it == memo.end() ? nullptr : &it->second;
  }

  bool has_polar() const { return polar_theta > 0; }

  void set_polar(const PolarTable& t) {
    polar_theta = t.theta_count();
    polar_s = t.radii();
    polar_thresholds.clear();
    polar_values.clear();
    for (int i = 0; i < polar_theta; ++i) {
      polar_thresholds.push_back(t.threshold(i));
      for (std::size_t k = 0; k < polar_s.size(); ++k) polar_values.push_back(t.node_value(i, k));
    }
    interp_.reset();
  }

  /// 𝒦(λ): linear for g = 0, polar interpolation when tabulated, else an exact memo hit.
  Vec2 evaluate(const Vec2& lambda) const {
    if (g == 0.0) {
      if (!linear_K) throw Error(ErrorKind::InvalidConfig, "law has no linear permeability");
      return *linear_K * lambda;
    }
    if (has_polar()) {
      if (!interp_) interp_ = std::make_shared<PolarTable>(polar_theta, polar_s, polar_thresholds, polar_values);
      return g * (*interp_)(lambda / g);
    }
    if (const LawRow* r = find(lambda)) return r->flux;
    throw Error(ErrorKind::InvalidConfig, "law has no table entry near the requested forcing");
  }

  /// Smallest tabulated threshold (units of λ).
  double min_threshold() const {
    double m = std::numeric_limits<double>::infinity();
    for (double t : polar_thresholds) m = std::min(m, g * t);
    for (const auto& [a, t] : yield_thresholds) m = std::min(m, t);
    return m;
  }

  void write(std::ostream& os) const {
    auto num = [](double v) { return detail::fmt17(v); };
    os << "twoscale-effective-law " << kVersion << "\n";
    os << "geometry_hash " << geometry_hash << "\n";
    os << "g " << num(g) << "\n";
    os << "mu " << num(mu) << "\n";
    os << "resolution " << y_resolution << " " << z_resolution << "\n";
    os << "strategy " << strategy << "\n";
    os << "normalization " << num(normalization.y_star) << " " << num(normalization.z_star) << " "
       << num(normalization.y_total) << " " << num(normalization.z_total) << "\n";
    if (linear_K)
      os << "linear_K " << num((*linear_K)(0, 0)) << " " << num((*linear_K)(0, 1)) << " " << num((*linear_K)(1, 0))
         << " " << num((*linear_K)(1, 1)) << "\n";
    else
      os << "linear_K absent\n";
    os << "yield_thresholds " << yield_thresholds.size() << "\n";
    for (const auto& [a, t] : yield_thresholds) os << num(a) << " " << num(t) << "\n";
    os << "polar " << polar_theta << " " << polar_s.size() << "\n";
    if (has_polar()) {
      for (std::size_t k = 0; k < polar_s.size(); ++k) os << (k ? " " : "") << num(polar_s[k]);
      os << "\n";
      for (int i = 0; i < polar_theta; ++i) os << (i ? " " : "") << num(polar_thresholds[i]);
      os << "\n";
    }
    // Polar nodes are unit-yield rows; memo rows are in λ units.
    os << "rows " << polar_values.size() + memo.size() << "\n";
    auto row = [&](const Vec2& l, const Vec2& k) {
      os << num(l[0]) << " " << num(l[1]) << " " << num(k[0]) << " " << num(k[1]) << "\n";
    };
    if (has_polar()) {
      PolarTable t(polar_theta, polar_s, polar_thresholds, polar_values);
      for (int i = 0; i < polar_theta; ++i)
        for (std::size_t k = 0; k < polar_s.size(); ++k)
          row(g * t.node_argument(i, k), g * polar_values[i * polar_s.size() + k]);
    }
    for (const auto& [key, r] : memo) row(r.lambda, r.flux);
  }

  static EffectiveLaw read(std::istream& is) {
    EffectiveLaw law;
    auto fail = [](const std::string& m) { return Error(ErrorKind::IOFailure, "effective law file: " + m); };
    auto expect = [&](const std::string& key) {
      std::string k;
      if (!(is >> k) || k != key) throw fail("expected '" + key + "'");
    };
    int version = 0;
    expect("twoscale-effective-law");
    if (!(is >> version) || version != kVersion) throw fail("unsupported version");
    expect("geometry_hash");
    is >> law.geometry_hash;
    expect("g");
    is >> law.g;
    expect("mu");
    is >> law.mu;
    expect("resolution");
    is >> law.y_resolution >> law.z_resolution;
    expect("strategy");
    is >> law.strategy;
    expect("normalization");
    is >> law.normalization.y_star >> law.normalization.z_star >> law.normalization.y_total >>
        law.normalization.z_total;
    expect("linear_K");
    std::string first;
    is >> first;
    if (first != "absent") {
      Mat2 K;
      K(0, 0) = std::stod(first);
      is >> K(0, 1) >> K(1, 0) >> K(1, 1);
      law.linear_K = K;
    }
    expect("yield_thresholds");
    std::size_t nt = 0;
    is >> nt;
    for (std::size_t i = 0; i < nt; ++i) {
      double a, t;
      is >> a >> t;
      law.yield_thresholds.emplace_back(a, t);
    }
    expect("polar");
    std::size_t ns = 0;
    is >> law.polar_theta >> ns;
    if (law.has_polar()) {
      law.polar_s.resize(ns);
      for (auto& s : law.polar_s) is >> s;
      law.polar_thresholds.resize(law.polar_theta);
      for (auto& t : law.polar_thresholds) is >> t;
    }
    expect("rows");
    std::size_t nr = 0;
    is >> nr;
    std::size_t npolar = law.has_polar() ? law.polar_theta * ns : 0;
    if (nr < npolar) throw fail("row count");
    for (std::size_t i = 0; i < nr; ++i) {
      LawRow r;
      is >> r.lambda[0] >> r.lambda[1] >> r.flux[0] >> r.flux[1];
      if (i < npolar)
        law.polar_values.push_back(r.flux / law.g);
      else
        law.memo[quantize(r.lambda)] = r;
    }
    if (!is) throw fail("truncated");
    return law;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path);
    write(os);
  }

  static EffectiveLaw load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::IOFailure, "cannot read " + path);
    return read(is);
  }

 private:
  mutable std::shared_ptr<PolarTable> interp_;
};

namespace detail {

inline bool same_obstacles(const RectCell2& c, const Mat2& S) {
  if ((S(0, 1) != 0.0) && std::abs(c.lengths[0] - c.lengths[1]) > 1e-12 * c.lengths[0]) return false;
  const Vec2 centre(0.5 * c.lengths[0], 0.5 * c.lengths[1]);
  auto matches = [&](const Box2& a, const Box2& b) {
    for (int d = 0; d < 2; ++d)
      if (std::abs(a.corner[d] - b.corner[d]) > 1e-12 || std::abs(a.extent[d] - b.extent[d]) > 1e-12) return false;
    return true;
  };
  for (const Box2& b : c.obstacles) {
    Vec2 lo(b.corner[0], b.corner[1]), hi(b.corner[0] + b.extent[0], b.corner[1] + b.extent[1]);
    Vec2 p = S * (lo - centre) + centre, q = S * (hi - centre) + centre;
    Box2 img{{std::min(p[0], q[0]), std::min(p[1], q[1])}, {std::abs(p[0] - q[0]), std::abs(p[1] - q[1])}};
    if (std::none_of(c.obstacles.begin(), c.obstacles.end(), [&](const Box2& o) { return matches(o, img); }))
      return false;
  }
  return true;
}

/// Axis reflections, rotations by quarter turns and the diagonal swaps that map both cells onto
/// themselves; the identity comes first and the point reflection is always included.
inline std::vector<Mat2> cell_symmetries(const CellGeometry2& g) {
  std::vector<Mat2> out;
  for (int a : {1, -1})
    for (int b : {1, -1})
      for (bool swap : {false, true}) {
        Mat2 S = swap ? Mat2((Mat2() << 0.0, a, b, 0.0).finished()) : Mat2((Mat2() << a, 0.0, 0.0, b).finished());
        bool point = !swap && a == -1 && b == -1;
        if (point || (same_obstacles(g.y_cell, S) && same_obstacles(g.z_cell, S))) out.push_back(S);
      }
  return out;
}

/// Index of the polar node in direction d, or -1 when d is not a node direction.
inline int node_index(const Vec2& d, int n) {
  double th = std::atan2(d[1], d[0]);
  if (th < 0) th += 2.0 * std::numbers::pi;
  double pos = th / (2.0 * std::numbers::pi) * n;
  long j = std::lround(pos);
  if (std::abs(pos - j) > 1e-9) return -1;
  return static_cast<int>(j % n);
}

}  // namespace detail

/// Builds an EffectiveLaw by running cell solves: linear K once, then memoized 𝒦(λ).
class CellLawEvaluator {
 public:
  CellLawEvaluator(const CellGeometry2& geom, double mu, double g, CellStrategy strategy, const CellConfig& cfg)
      : geom_(geom), mu_(mu), strategy_(strategy), cfg_(cfg) {
    if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
    if (!(mu > 0)) throw Error(ErrorKind::InvalidConfig, "mu must be positive");
    cfg_.validate();
    auto lin = solve_linear_cell(geom, mu, cfg_);
    law_.linear_K = lin.K;
    law_.g = g;
    law_.mu = mu;
    law_.geometry_hash = geometry_hash(geom);
    law_.y_resolution = cfg_.y_resolution;
    law_.z_resolution = cfg_.z_resolution;
    law_.strategy = to_string(strategy);
    Mask2 ym = rect_cell_mask(geom.y_cell, cfg_.y_resolution), zm = rect_cell_mask(geom.z_cell, cfg_.z_resolution);
    law_.normalization = {ym.count_fluid() * ym.cell_volume(), zm.count_fluid() * zm.cell_volume(),
                          geom.y_cell.volume(), geom.z_cell.volume()};
  }

  const EffectiveLaw& law() const { return law_; }
  EffectiveLaw& law() { return law_; }
  const Mat2& linear_K() const { return *law_.linear_K; }
  double g() const { return law_.g; }
  std::size_t solves() const { return solves_; }

  /// Full cell solution at λ with yield g (no memo).
  CellSolution solve(const Vec2& lambda, double g, bool strict = true) const {
    ++solves_;
    if (strategy_ == CellStrategy::Product) return product().solve(lambda, g, nullptr, strict);
    return two_level().solve(lambda, g, strict);
  }

  /// 𝒦(λ) through the memo table.
  Vec2 eval_K(const Vec2& lambda) { return eval_K(lambda, law_.g); }

  /// Near the yield surface the iteration may stall; `strict = false` then keeps the last iterate.
  Vec2 eval_K(const Vec2& lambda, double g, bool strict = true) {
    if (g == 0.0) return linear_K() * lambda;
    if (lambda.norm() == 0.0) return Vec2::Zero();
    if (g != law_.g) return solve(lambda, g, strict).flux;
    if (const LawRow* r = law_.find(lambda)) return r->flux;
    LawRow row{lambda, solve(lambda, g, strict).flux};
    law_.memo[EffectiveLaw::quantize(lambda)] = row;
    return row.flux;
  }

  bool is_zero(const Vec2& flux, const Vec2& lambda) const {
    return flux.norm() <= 1e-10 * (linear_K() * lambda).norm();
  }

  /// λ_c along a unit direction, bracket width ≤ `rel` relative; midpoint returned and recorded.
  double estimate_yield_threshold(const Vec2& direction) { return estimate_yield_threshold(direction, law_.g); }

  double estimate_yield_threshold(const Vec2& direction, double g, double rel = 0.01) {
    if (std::abs(direction.norm() - 1.0) > 1e-12) throw Error(ErrorKind::InvalidConfig, "direction must be a unit vector");
    if (g == 0.0) throw NoBracket("g = 0 has no rigid regime", 0.0);
    auto flowing = [&](double t) { return !is_zero(eval_K(t * direction, g, false), t * direction); };
    double t0 = g / length_scale();
    auto [lo, hi] = detail::bracket_threshold(flowing, t0, rel);
    double mid = 0.5 * (lo + hi);
    if (g == law_.g) law_.yield_thresholds.emplace_back(std::atan2(direction[1], direction[0]), mid);
    return mid;
  }

  /// Fills the polar grid used for interpolation by the macro solver. Angles related by a symmetry
  /// of the cell geometry are computed once: 𝒦(Sλ) = S𝒦(λ).
  void tabulate(int n_theta, std::vector<double> s_nodes = default_radial_nodes()) {
    if (law_.g == 0.0) return;
    double gg = law_.g;
    PolarTable t(
        n_theta, s_nodes,
        [&](const Vec2& d) { return estimate_yield_threshold(d, gg, cfg_.threshold_tol) / gg; },
        [&](const Vec2& x) { return eval_K(gg * x, gg, false) / gg; });
    const std::vector<Mat2> ops = detail::cell_symmetries(geom_);
    std::vector<double> thresholds(n_theta);
    std::vector<Vec2> values(static_cast<std::size_t>(n_theta) * s_nodes.size());
    for (int i = 0; i < n_theta; ++i) {
      int canon = i;
      std::size_t op = 0;
      for (std::size_t q = 0; q < ops.size(); ++q) {
        int j = detail::node_index(ops[q].transpose() * t.direction(i), n_theta);
        if (j >= 0 && j < canon) {
          canon = j;
          op = q;
        }
      }
      const Mat2& S = canon == i ? ops[0] : ops[op];
      thresholds[i] = t.threshold(canon);
      for (std::size_t k = 0; k < s_nodes.size(); ++k) values[i * s_nodes.size() + k] = S * t.node_value(canon, k);
    }
    law_.set_polar(PolarTable(n_theta, std::move(s_nodes), std::move(thresholds), values));
  }

  const ProductCellSolver& product() const {
    if (!product_) product_ = std::make_unique<ProductCellSolver>(geom_, mu_, cfg_);
    return *product_;
  }
  const TwoLevelCellSolver& two_level() const {
    if (!two_level_) two_level_ = std::make_unique<TwoLevelCellSolver>(geom_, mu_, cfg_);
    return *two_level_;
  }

 private:
  double length_scale() const { return std::min(geom_.z_cell.lengths[0], geom_.z_cell.lengths[1]); }

  CellGeometry2 geom_;
  double mu_;
  CellStrategy strategy_;
  CellConfig cfg_;
  EffectiveLaw law_;
  mutable std::unique_ptr<ProductCellSolver> product_;
  mutable std::unique_ptr<TwoLevelCellSolver> two_level_;
  mutable std::size_t solves_ = 0;
};

/// Cell solve with a fresh solver.
inline CellSolution solve_nonlinear_cell(const CellGeometry2& geom, const Vec2& lambda, double g, double mu,
                                         CellStrategy strategy, const CellConfig& cfg = {}) {
  if (g < 0) throw Error(ErrorKind::NegativeYield, "g must be non-negative");
  if (strategy == CellStrategy::Product) return ProductCellSolver(geom, mu, cfg).solve(lambda, g);
  return TwoLevelCellSolver(geom, mu, cfg).solve(lambda, g);
}

}  // namespace twoscale
