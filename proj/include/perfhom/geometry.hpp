#pragma once

// Periodic perforated-domain geometry: an axis-aligned box, the eps-lattice
// of cells [eps*i, eps*(i+1))^n, and one hole per interior cell. Cells are
// corner-anchored tiles of the shifted lattice, so a unit box with eps = 1/m
// carries exactly (m-2)^n interior cells.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "perfhom/common.hpp"

namespace perfhom {

constexpr int kMaxDim = 4;

struct DomainSpec {
  int n = 3;
  std::array<double, kMaxDim> box_min{};  // entries past n-1 ignored
  std::array<double, kMaxDim> box_max{};
  double epsilon = 0.25;

  double extent(int axis) const { return box_max[size_t(axis)] - box_min[size_t(axis)]; }

  void validate() const {
    require(n >= 2 && n <= kMaxDim, "bad-dimension",
            "DomainSpec: n must be in {2,3,4}, got " + std::to_string(n));
    require(epsilon > 0, "bad-argument", "DomainSpec: epsilon must be > 0");
    for (int a = 0; a < n; a++)
      require(extent(a) >= 2.0 * epsilon * (1.0 - 1e-12), "bad-argument",
              "DomainSpec: box extent on axis " + std::to_string(a) +
                  " must be at least 2*epsilon");
  }
};

struct HoleShape {
  enum class Kind { ball, axis_box, rasterized };
  Kind kind = Kind::ball;
  double d = 0.0;  // radius of the smallest enclosing ball

  // axis_box: half widths per axis (d is then |half_widths|_2)
  std::array<double, kMaxDim> half_widths{};

  // rasterized: voxels^n cube of booleans covering [-d, d]^n
  int voxels = 0;
  std::vector<std::uint8_t> voxel_bits;

  // optional rigid rotation (row-major n x n); empty = identity.
  // An enclosing-ball radius is rotation invariant, so d is unaffected.
  std::vector<double> rotation;

  static HoleShape make_ball(double radius) {
    HoleShape s;
    s.kind = Kind::ball;
    s.d = radius;
    return s;
  }
  static HoleShape make_axis_box(int n, const std::array<double, kMaxDim>& hw) {
    HoleShape s;
    s.kind = Kind::axis_box;
    s.half_widths = hw;
    double r2 = 0;
    for (int a = 0; a < n; a++) r2 += hw[size_t(a)] * hw[size_t(a)];
    s.d = std::sqrt(r2);
    return s;
  }
  template <class Pred>
  static HoleShape make_rasterized(int n, double radius, int voxels, Pred inside) {
    HoleShape s;
    s.kind = Kind::rasterized;
    s.d = radius;
    s.voxels = voxels;
    index_t total = 1;
    for (int a = 0; a < n; a++) total *= voxels;
    s.voxel_bits.assign(size_t(total), 0);
    std::array<double, kMaxDim> x{};
    for (index_t flat = 0; flat < total; flat++) {
      index_t rem = flat;
      double r2 = 0;
      for (int a = 0; a < n; a++) {
        index_t idx = rem % voxels;
        rem /= voxels;
        x[size_t(a)] = (-radius) + (2.0 * radius) * ((double(idx) + 0.5) / voxels);
        r2 += x[size_t(a)] * x[size_t(a)];
      }
      // a rasterized shape must fit in the ball of radius d
      if (r2 <= radius * radius && inside(x))
        s.voxel_bits[size_t(flat)] = 1;
    }
    return s;
  }

  /// Fraction theta in (0, 1] of the step from an outside point x_local
  /// toward the inside neighbor x_local + sign*h*e_axis at which the shape
  /// boundary is crossed; 1.0 when unknown (rasterized shapes).
  double boundary_cut(int n, const double* x_local, int axis, int sign,
                      double h) const {
    if (!rotation.empty() || kind == Kind::rasterized) return 1.0;
    if (kind == Kind::ball) {
      // |x + t e|^2 = d^2, smallest positive root
      double b = 0, c = -d * d;
      for (int a = 0; a < n; a++) c += x_local[a] * x_local[a];
      b = 2.0 * sign * x_local[axis];
      double disc = b * b - 4.0 * c;
      if (disc <= 0) return 1.0;
      double t = (-b - std::sqrt(disc)) / 2.0;
      if (t <= 0) t = (-b + std::sqrt(disc)) / 2.0;
      double theta = t / h;
      return (theta > 0 && theta <= 1.0) ? theta : 1.0;
    }
    // axis box: crossing of the face perpendicular to `axis` (the inside
    // neighbor shares the other coordinates, so this face is the one hit)
    double face = half_widths[size_t(axis)];
    double xi = x_local[axis];
    double theta = ((sign > 0) ? (-face - xi) : (xi - face)) / h;
    return (theta > 0 && theta <= 1.0) ? theta : 1.0;
  }

  /// Membership test in shape-local coordinates (hole center at the origin).
  bool contains(int n, const double* x_local) const {
    std::array<double, kMaxDim> y{};
    if (!rotation.empty()) {
      // y = R^T x
      for (int i = 0; i < n; i++) {
        double s = 0;
        for (int j = 0; j < n; j++) s += rotation[size_t(j * n + i)] * x_local[j];
        y[size_t(i)] = s;
      }
    } else {
      for (int i = 0; i < n; i++) y[size_t(i)] = x_local[i];
    }
    switch (kind) {
      case Kind::ball: {
        double r2 = 0;
        for (int a = 0; a < n; a++) r2 += y[size_t(a)] * y[size_t(a)];
        return r2 <= d * d;  // closed hole
      }
      case Kind::axis_box: {
        for (int a = 0; a < n; a++)
          if (std::abs(y[size_t(a)]) > half_widths[size_t(a)]) return false;
        return true;
      }
      case Kind::rasterized: {
        index_t flat = 0, stride = 1;
        for (int a = 0; a < n; a++) {
          double t = (y[size_t(a)] + d) / (2.0 * d) * voxels;
          auto idx = index_t(std::floor(t));
          if (idx < 0 || idx >= voxels) return false;
          flat += idx * stride;
          stride *= voxels;
        }
        return voxel_bits[size_t(flat)] != 0;
      }
    }
    return false;
  }
};

using LatticeIndex = std::array<index_t, kMaxDim>;

/// All lattice indices i with closure(eps*[i, i+1]^n) strictly inside the box
/// (tolerance 1e-12 of the extent), in lexicographic order.
inline std::vector<LatticeIndex> enumerate_interior_cells(const DomainSpec& spec) {
  spec.validate();
  const int n = spec.n;
  const double eps = spec.epsilon;
  std::array<index_t, kMaxDim> lo{}, hi{};  // inclusive ranges per axis
  for (int a = 0; a < n; a++) {
    double tol = 1e-12 * spec.extent(a);
    // smallest i with eps*i >= min + tol, largest i with eps*(i+1) <= max - tol
    auto i_lo = index_t(std::ceil((spec.box_min[size_t(a)] + tol) / eps - 1e-9));
    auto i_hi = index_t(std::floor((spec.box_max[size_t(a)] - tol) / eps + 1e-9)) - 1;
    // re-check without the integer-rounding slack
    while (eps * double(i_lo) < spec.box_min[size_t(a)] + tol) i_lo++;
    while (eps * double(i_hi + 1) > spec.box_max[size_t(a)] - tol) i_hi--;
    lo[size_t(a)] = i_lo;
    hi[size_t(a)] = i_hi;
    if (i_hi < i_lo) return {};
  }
  std::vector<LatticeIndex> out;
  LatticeIndex cur = lo;
  while (true) {
    out.push_back(cur);
    int a = n - 1;
    while (a >= 0) {
      if (++cur[size_t(a)] <= hi[size_t(a)]) break;
      cur[size_t(a)] = lo[size_t(a)];
      a--;
    }
    if (a < 0) break;
  }
  return out;
}

struct HoleLayout {
  DomainSpec spec;
  HoleShape shape;
  double kappa = 0.1;
  std::array<double, kMaxDim> offset{};  // common center offset inside cells
  std::vector<LatticeIndex> indices;
  std::vector<std::array<double, kMaxDim>> centers;

  index_t hole_count() const { return index_t(indices.size()); }

  std::array<double, kMaxDim> cell_lo(index_t i) const {
    std::array<double, kMaxDim> x{};
    for (int a = 0; a < spec.n; a++)
      x[size_t(a)] = spec.epsilon * double(indices[size_t(i)][size_t(a)]);
    return x;
  }
  std::array<double, kMaxDim> cell_hi(index_t i) const {
    auto x = cell_lo(i);
    for (int a = 0; a < spec.n; a++) x[size_t(a)] += spec.epsilon;
    return x;
  }

  /// Is x inside (the closure of) hole i?
  bool in_hole(index_t i, const double* x) const {
    double local[kMaxDim];
    for (int a = 0; a < spec.n; a++)
      local[a] = x[a] - centers[size_t(i)][size_t(a)];
    return shape.contains(spec.n, local);
  }

  void validate() const {
    spec.validate();
    require(kappa > 0 && kappa < 0.5, "bad-argument",
            "HoleLayout: kappa must be in (0, 1/2)");
    const double eps = spec.epsilon;
    for (index_t i = 0; i < hole_count(); i++) {
      auto lo = cell_lo(i), hi = cell_hi(i);
      for (int a = 0; a < spec.n; a++) {
        double c = centers[size_t(i)][size_t(a)];
        double clearance = std::min(c - lo[size_t(a)], hi[size_t(a)] - c) - shape.d;
        require(clearance >= kappa * eps - 1e-12 * eps, "layout-violation",
                "hole " + std::to_string(i) +
                    ": enclosing ball closer than kappa*eps to its cell boundary");
      }
    }
  }
};

/// One hole per interior cell, centered at the cell center (plus the optional
/// common offset). Rejects layouts violating the security distance
/// d + kappa*eps <= eps/2, naming the first offending cell.
inline HoleLayout place_holes(const DomainSpec& spec, const HoleShape& shape,
                              double kappa,
                              const std::array<double, kMaxDim>& offset = {}) {
  spec.validate();
  require(kappa > 0 && kappa < 0.5, "bad-argument", "kappa must be in (0,1/2)");
  HoleLayout layout;
  layout.spec = spec;
  layout.shape = shape;
  layout.kappa = kappa;
  layout.offset = offset;
  layout.indices = enumerate_interior_cells(spec);
  const double eps = spec.epsilon;
  layout.centers.reserve(layout.indices.size());
  for (size_t i = 0; i < layout.indices.size(); i++) {
    std::array<double, kMaxDim> c{};
    for (int a = 0; a < spec.n; a++)
      c[size_t(a)] = eps * (double(layout.indices[i][size_t(a)]) + 0.5) +
                     offset[size_t(a)];
    // security distance per axis, offset included
    for (int a = 0; a < spec.n; a++) {
      double margin = eps / 2.0 - std::abs(offset[size_t(a)]);
      if (shape.d + kappa * eps > margin + 1e-12 * eps)
        fail("layout-violation",
             "cell (" + std::to_string(layout.indices[i][0]) + ",...): hole ball"
             " of radius " + std::to_string(shape.d) + " plus security distance " +
             std::to_string(kappa * eps) + " exceeds half cell " +
             std::to_string(margin));
    }
    layout.centers.push_back(c);
  }
  return layout;
}

struct SizeRuleReport {
  bool satisfied = false;
  double ratio = 0.0;  // dimensionless; compared against the constant C
};

/// Smallness rule for the hole radius: d^{n-2} <= C eps^n for n >= 3,
/// |ln d|^{-1} <= C eps^2 for n = 2. Returns ratio = lhs / (C eps^power).
inline SizeRuleReport check_size_rule(int n, double epsilon, double d,
                                      double C = 1.0) {
  require(n >= 2, "bad-dimension", "check_size_rule: n >= 2 required");
  require(d > 0 && d < epsilon, "domain-error",
          "check_size_rule: need 0 < d < epsilon");
  SizeRuleReport rep;
  if (n == 2) {
    rep.ratio = (1.0 / std::abs(std::log(d))) / (epsilon * epsilon);
  } else {
    rep.ratio = std::pow(d, n - 2) / std::pow(epsilon, n);
  }
  rep.satisfied = rep.ratio <= C + 1e-12;
  return rep;
}

// ---------------------------------------------------------------------------
// JSON serialization (lossless: nlohmann emits shortest-round-trip doubles)

inline void to_json(nlohmann::json& j, const HoleShape& s) {
  j = nlohmann::json{{"d", s.d}};
  switch (s.kind) {
    case HoleShape::Kind::ball: j["kind"] = "ball"; break;
    case HoleShape::Kind::axis_box:
      j["kind"] = "axis-box";
      j["half_widths"] = s.half_widths;
      break;
    case HoleShape::Kind::rasterized:
      j["kind"] = "rasterized";
      j["voxels"] = s.voxels;
      j["voxel_bits"] = s.voxel_bits;
      break;
  }
  if (!s.rotation.empty()) j["rotation"] = s.rotation;
}

inline void from_json(const nlohmann::json& j, HoleShape& s) {
  std::string kind = j.at("kind");
  s.d = j.at("d");
  if (kind == "ball") {
    s.kind = HoleShape::Kind::ball;
  } else if (kind == "axis-box") {
    s.kind = HoleShape::Kind::axis_box;
    s.half_widths = j.at("half_widths");
  } else if (kind == "rasterized") {
    s.kind = HoleShape::Kind::rasterized;
    s.voxels = j.at("voxels");
    s.voxel_bits = j.at("voxel_bits").get<std::vector<std::uint8_t>>();
  } else {
    fail("parse-error", "unknown hole shape kind '" + kind + "'");
  }
  if (j.contains("rotation")) s.rotation = j.at("rotation").get<std::vector<double>>();
}

inline void to_json(nlohmann::json& j, const HoleLayout& l) {
  j = nlohmann::json{
      {"n", l.spec.n},
      {"box", {{"min", l.spec.box_min}, {"max", l.spec.box_max}}},
      {"epsilon", l.spec.epsilon},
      {"kappa", l.kappa},
      {"shape", l.shape},
      {"offset", l.offset},
      {"indices", l.indices},
      {"centers", l.centers},
  };
}

inline void from_json(const nlohmann::json& j, HoleLayout& l) {
  l.spec.n = j.at("n");
  l.spec.box_min = j.at("box").at("min");
  l.spec.box_max = j.at("box").at("max");
  l.spec.epsilon = j.at("epsilon");
  l.kappa = j.at("kappa");
  l.shape = j.at("shape");
  l.offset = j.at("offset");
  l.indices = j.at("indices").get<std::vector<LatticeIndex>>();
  l.centers = j.at("centers").get<std::vector<std::array<double, kMaxDim>>>();
}

}  // namespace perfhom
