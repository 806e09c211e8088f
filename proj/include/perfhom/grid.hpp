#pragma once

// Uniform Cartesian finite-difference discretization of -Laplace with
// Dirichlet node elimination. Functions live on a padded node array (one
// zero ring around the interior) so the 2n+1-point stencil needs no branch;
// masked (hole) nodes and the padding are pinned to zero, which makes
// restriction/extension exact selection/padding and keeps every vector
// identity valid on the raw arrays.

#include <array>
#include <cstring>
#include <memory>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "perfhom/common.hpp"
#include "perfhom/geometry.hpp"
#include "perfhom/linalg.hpp"

namespace perfhom {

struct CartesianGrid {
  int n = 3;
  std::array<double, kMaxDim> origin{};     // box minimum corner
  std::array<index_t, kMaxDim> intervals{}; // extent_a = intervals_a * h
  double h = 0.0;

  CartesianGrid() = default;

  /// Grid over an axis-aligned box; every extent must be an integer multiple
  /// of h within 1e-12 relative tolerance.
  CartesianGrid(int n_, const std::array<double, kMaxDim>& box_min,
                const std::array<double, kMaxDim>& box_max, double h_)
      : n(n_), origin(box_min), h(h_) {
    require(n >= 1 && n <= kMaxDim, "bad-dimension", "CartesianGrid: n in 1..4");
    require(h > 0, "bad-argument", "CartesianGrid: h must be > 0");
    for (int a = 0; a < n; a++) {
      double ext = box_max[size_t(a)] - box_min[size_t(a)];
      auto m = index_t(std::llround(ext / h));
      require(m >= 2, "bad-argument", "CartesianGrid: fewer than 2 intervals");
      require(std::abs(double(m) * h - ext) <= 1e-12 * ext, "bad-argument",
              "CartesianGrid: extent on axis " + std::to_string(a) +
                  " is not an integer multiple of h");
      intervals[size_t(a)] = m;
    }
  }

  index_t padded(int a) const { return intervals[size_t(a)] + 1; }
  index_t interior(int a) const { return intervals[size_t(a)] - 1; }

  index_t total_padded() const {
    index_t t = 1;
    for (int a = 0; a < n; a++) t *= padded(a);
    return t;
  }
  index_t total_interior() const {
    index_t t = 1;
    for (int a = 0; a < n; a++) t *= interior(a);
    return t;
  }
  std::array<index_t, kMaxDim> strides() const {
    std::array<index_t, kMaxDim> s{};
    index_t acc = 1;
    for (int a = 0; a < n; a++) {
      s[size_t(a)] = acc;
      acc *= padded(a);
    }
    return s;
  }
  double coord(int a, index_t i) const { return origin[size_t(a)] + h * double(i); }
  double weight() const { return std::pow(h, n); }  // hⁿ, the L2 quadrature weight

  bool same_as(const CartesianGrid& o) const {
    if (n != o.n || h != o.h) return false;
    for (int a = 0; a < n; a++)
      if (intervals[size_t(a)] != o.intervals[size_t(a)] ||
          origin[size_t(a)] != o.origin[size_t(a)])
        return false;
    return true;
  }
};

// ---------------------------------------------------------------------------

class NodeMask {
 public:
  CartesianGrid grid;
  std::vector<std::uint8_t> active;          // padded layout; 1 = unknown
  index_t active_count = 0;
  std::vector<index_t> hole_masked_counts;   // per hole, when built from a layout

  /// Unperforated mask: all interior nodes are unknowns.
  static std::shared_ptr<const NodeMask> full(const CartesianGrid& g) {
    auto m = std::make_shared<NodeMask>();
    m->grid = g;
    m->active.assign(size_t(g.total_padded()), 0);
    m->for_each_interior([&](index_t flat, const index_t*) {
      m->active[size_t(flat)] = 1;
    });
    m->active_count = g.total_interior();
    return m;
  }

  /// Mask with every node inside a closed hole eliminated.
  static std::shared_ptr<const NodeMask> perforated(const CartesianGrid& g,
                                                    const HoleLayout& layout) {
    require(g.n == layout.spec.n, "grid-mismatch",
            "NodeMask: layout dimension != grid dimension");
    auto m = std::make_shared<NodeMask>();
    m->grid = g;
    m->active.assign(size_t(g.total_padded()), 0);
    m->for_each_interior([&](index_t flat, const index_t*) {
      m->active[size_t(flat)] = 1;
    });
    m->active_count = g.total_interior();
    m->hole_masked_counts.assign(size_t(layout.hole_count()), 0);
    auto st = g.strides();
    for (index_t hidx = 0; hidx < layout.hole_count(); hidx++) {
      // nodes within the enclosing ball bounding box
      std::array<index_t, kMaxDim> lo{}, hi{};
      for (int a = 0; a < g.n; a++) {
        double c = layout.centers[size_t(hidx)][size_t(a)];
        lo[size_t(a)] = std::max<index_t>(
            1, index_t(std::ceil((c - layout.shape.d - g.origin[size_t(a)]) / g.h - 1e-12)));
        hi[size_t(a)] = std::min<index_t>(
            g.intervals[size_t(a)] - 1,
            index_t(std::floor((c + layout.shape.d - g.origin[size_t(a)]) / g.h + 1e-12)));
      }
      std::array<index_t, kMaxDim> idx = lo;
      if ([&] {
            for (int a = 0; a < g.n; a++)
              if (lo[size_t(a)] > hi[size_t(a)]) return true;
            return false;
          }())
        continue;
      while (true) {
        double x[kMaxDim];
        index_t flat = 0;
        for (int a = 0; a < g.n; a++) {
          x[a] = g.coord(a, idx[size_t(a)]);
          flat += idx[size_t(a)] * st[size_t(a)];
        }
        if (m->active[size_t(flat)] && layout.in_hole(hidx, x)) {
          m->active[size_t(flat)] = 0;
          m->active_count--;
          m->hole_masked_counts[size_t(hidx)]++;
        }
        int a = 0;
        while (a < g.n) {
          if (++idx[size_t(a)] <= hi[size_t(a)]) break;
          idx[size_t(a)] = lo[size_t(a)];
          a++;
        }
        if (a >= g.n) break;
      }
    }
    return m;
  }

  /// Mask from an arbitrary point predicate (capacity solves: the truncated
  /// exterior domain). A node is an unknown iff pred(x) is true.
  template <class Pred>
  static std::shared_ptr<const NodeMask> from_predicate(const CartesianGrid& g,
                                                        Pred pred) {
    auto m = std::make_shared<NodeMask>();
    m->grid = g;
    m->active.assign(size_t(g.total_padded()), 0);
    m->active_count = 0;
    m->for_each_interior([&](index_t flat, const index_t* idx) {
      double x[kMaxDim];
      for (int a = 0; a < g.n; a++) x[a] = g.coord(a, idx[size_t(a)]);
      if (pred(x)) {
        m->active[size_t(flat)] = 1;
        m->active_count++;
      }
    });
    return m;
  }

  bool is_unperforated() const { return active_count == grid.total_interior(); }

  template <class Fn>
  void for_each_interior(Fn fn) const;
};

/// Visit every interior node (all axis indices in [1, m-1]) of a grid;
/// fn(flat_index, multi_index).
template <class Fn>
void for_each_interior_node(const CartesianGrid& grid, Fn fn) {
  auto st = grid.strides();
  std::array<index_t, kMaxDim> idx{};
  for (int a = 0; a < grid.n; a++) idx[size_t(a)] = 1;
  while (true) {
    index_t flat = 0;
    for (int a = 0; a < grid.n; a++) flat += idx[size_t(a)] * st[size_t(a)];
    fn(flat, idx.data());
    int a = 0;
    while (a < grid.n) {
      if (++idx[size_t(a)] <= grid.intervals[size_t(a)] - 1) break;
      idx[size_t(a)] = 1;
      a++;
    }
    if (a >= grid.n) break;
  }
}

template <class Fn>
void NodeMask::for_each_interior(Fn fn) const {
  for_each_interior_node(grid, fn);
}

// ---------------------------------------------------------------------------

class GridFunction {
 public:
  GridFunction() = default;
  explicit GridFunction(std::shared_ptr<const NodeMask> mask)
      : mask_(std::move(mask)),
        values_(size_t(mask_->grid.total_padded()), 0.0) {}

  const NodeMask& mask() const { return *mask_; }
  const std::shared_ptr<const NodeMask>& mask_ptr() const { return mask_; }
  std::vector<double>& raw() { return values_; }
  const std::vector<double>& raw() const { return values_; }
  index_t active_count() const { return mask_->active_count; }
  double weight() const { return mask_->grid.weight(); }

  /// Zero every entry that is not an unknown (restores the type invariant).
  void enforce_mask() {
    const auto& act = mask_->active;
    for (size_t i = 0; i < values_.size(); i++)
      if (!act[i]) values_[i] = 0.0;
  }

  template <class Fn>
  void fill(Fn fn) {  // fn(x[]) -> value, applied at active nodes
    const auto& g = mask_->grid;
    const auto& act = mask_->active;
    mask_->for_each_interior([&](index_t flat, const index_t* idx) {
      if (!act[size_t(flat)]) return;
      double x[kMaxDim];
      for (int a = 0; a < g.n; a++) x[a] = g.coord(a, idx[size_t(a)]);
      values_[size_t(flat)] = fn(x);
    });
  }

  double norm() const {
    return std::sqrt(weight()) * vnorm(index_t(values_.size()), values_.data());
  }
  double dot(const GridFunction& o) const {
    require(mask_->grid.same_as(o.mask_->grid), "grid-mismatch",
            "GridFunction::dot: different grids");
    return weight() * vdot(index_t(values_.size()), values_.data(), o.values_.data());
  }

 private:
  std::shared_ptr<const NodeMask> mask_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------

/// S + zeroth * Id where S is the (2n+1)-point Dirichlet Laplacian stencil
/// on the active nodes: off-diagonal entries are exactly -1/h^2, diagonal
/// entries 2n/h^2 + zeroth. Matrix-free; satisfies LinearOperator on raw
/// padded arrays (padding and masked entries must be zero on input and are
/// zero on output).
class GridOperator {
 public:
  GridOperator() = default;
  GridOperator(std::shared_ptr<const NodeMask> mask, double zeroth)
      : mask_(std::move(mask)), zeroth_(zeroth) {}

  const NodeMask& mask() const { return *mask_; }
  const std::shared_ptr<const NodeMask>& mask_ptr() const { return mask_; }
  double zeroth() const { return zeroth_; }
  index_t active_dim() const { return mask_->active_count; }

  /// Padded-array dimension used by the generic solvers.
  index_t dim() const { return mask_->grid.total_padded(); }

  GridOperator shifted(double s) const { return {mask_, zeroth_ + s}; }

  /// Gershgorin upper bound for the largest eigenvalue.
  double lambda_max_bound() const {
    const double h = mask_->grid.h;
    return 4.0 * mask_->grid.n / (h * h) + zeroth_;
  }

  void apply(const double* x, double* y) const {
    const auto& g = mask_->grid;
    const auto st = g.strides();
    const double inv_h2 = 1.0 / (g.h * g.h);
    const double diag = 2.0 * g.n * inv_h2 + zeroth_;
    const std::uint8_t* act = mask_->active.data();
    const index_t nx = g.intervals[0] - 1;

    // odometer over the outer axes, contiguous sweep along axis 0
    std::array<index_t, kMaxDim> idx{};
    for (int a = 1; a < g.n; a++) idx[size_t(a)] = 1;
    while (true) {
      index_t base = 1;
      for (int a = 1; a < g.n; a++) base += idx[size_t(a)] * st[size_t(a)];
      const double* xi = x + base;
      double* yi = y + base;
      const std::uint8_t* ai = act + base;
      if (g.n == 2) {
        const index_t s1 = st[1];
        for (index_t i = 0; i < nx; i++) {
          double acc = diag * xi[i] -
                       inv_h2 * (xi[i - 1] + xi[i + 1] + xi[i - s1] + xi[i + s1]);
          yi[i] = ai[i] ? acc : 0.0;
        }
      } else if (g.n == 3) {
        const index_t s1 = st[1], s2 = st[2];
        for (index_t i = 0; i < nx; i++) {
          double acc = diag * xi[i] -
                       inv_h2 * (xi[i - 1] + xi[i + 1] + xi[i - s1] + xi[i + s1] +
                                 xi[i - s2] + xi[i + s2]);
          yi[i] = ai[i] ? acc : 0.0;
        }
      } else {
        const index_t s1 = st[1], s2 = st[2], s3 = st[3];
        for (index_t i = 0; i < nx; i++) {
          double acc = diag * xi[i] -
                       inv_h2 * (xi[i - 1] + xi[i + 1] + xi[i - s1] + xi[i + s1] +
                                 xi[i - s2] + xi[i + s2] + xi[i - s3] + xi[i + s3]);
          yi[i] = ai[i] ? acc : 0.0;
        }
      }
      int a = 1;
      while (a < g.n) {
        if (++idx[size_t(a)] <= g.intervals[size_t(a)] - 1) break;
        idx[size_t(a)] = 1;
        a++;
      }
      if (a >= g.n || g.n == 1) break;
    }
  }

  void apply(const GridFunction& x, GridFunction& y) const {
    require(x.mask().grid.same_as(mask_->grid) && y.mask().grid.same_as(mask_->grid),
            "grid-mismatch", "GridOperator::apply: function on a different grid");
    apply(x.raw().data(), y.raw().data());
  }

  /// Active-index dense matrix (small instances: closeness, oracles).
  Eigen::MatrixXd to_dense_active(index_t limit = 4000) const {
    const index_t N = active_dim();
    require(N <= limit, "size-limit",
            "GridOperator::to_dense_active: " + std::to_string(N) +
                " unknowns exceed limit");
    std::vector<index_t> act_nodes = active_nodes();
    std::vector<double> e(size_t(dim()), 0.0), col(size_t(dim()), 0.0);
    Eigen::MatrixXd A(N, N);
    for (index_t j = 0; j < N; j++) {
      e[size_t(act_nodes[size_t(j)])] = 1.0;
      apply(e.data(), col.data());
      e[size_t(act_nodes[size_t(j)])] = 0.0;
      for (index_t i = 0; i < N; i++) A(i, j) = col[size_t(act_nodes[size_t(i)])];
    }
    return A;
  }

  /// Active node flat indices in lexicographic order.
  std::vector<index_t> active_nodes() const {
    std::vector<index_t> out;
    out.reserve(size_t(active_dim()));
    mask_->for_each_interior([&](index_t flat, const index_t*) {
      if (mask_->active[size_t(flat)]) out.push_back(flat);
    });
    return out;
  }

  /// Coordinate-format export (row col value), active indexing, one entry
  /// per line. For external verification of small operators.
  void write_coo(std::ostream& os, index_t limit = 20000000) const {
    require(dim() <= limit, "size-limit", "write_coo: operator too large");
    std::vector<index_t> act_nodes = active_nodes();
    std::vector<index_t> ordinal(size_t(dim()), -1);
    for (index_t j = 0; j < index_t(act_nodes.size()); j++)
      ordinal[size_t(act_nodes[size_t(j)])] = j;
    const auto& g = mask_->grid;
    const auto st = g.strides();
    const double inv_h2 = 1.0 / (g.h * g.h);
    const double diag = 2.0 * g.n * inv_h2 + zeroth_;
    char buf[96];
    for (index_t r = 0; r < index_t(act_nodes.size()); r++) {
      index_t flat = act_nodes[size_t(r)];
      std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n", (long long)r,
                    (long long)r, diag);
      os << buf;
      for (int a = 0; a < g.n; a++) {
        for (int sgn : {-1, +1}) {
          index_t nb = flat + sgn * st[size_t(a)];
          if (ordinal[size_t(nb)] >= 0) {
            std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n", (long long)r,
                          (long long)ordinal[size_t(nb)], -inv_h2);
            os << buf;
          }
        }
      }
    }
  }

 private:
  std::shared_ptr<const NodeMask> mask_;
  double zeroth_ = 0.0;
};

/// Stiffness of the Dirichlet Laplacian plus q*Id on the active nodes.
/// Fails if some hole eliminated no node (the grid cannot see it).
inline GridOperator assemble_laplacian(std::shared_ptr<const NodeMask> mask,
                                       double q = 0.0) {
  require(q >= 0, "bad-argument", "assemble_laplacian: q must be >= 0");
  for (size_t i = 0; i < mask->hole_masked_counts.size(); i++)
    require(mask->hole_masked_counts[i] > 0, "resolvability",
            "assemble_laplacian: hole " + std::to_string(i) +
                " masks no grid node at this resolution");
  return {std::move(mask), q};
}

// ---------------------------------------------------------------------------
// identification operators J (restriction) and J' (extension by zero)

/// J: copy values at nodes active in both masks, zero elsewhere. Never
/// increases the discrete norm.
inline GridFunction restrict_to(const GridFunction& full,
                                std::shared_ptr<const NodeMask> target) {
  require(full.mask().grid.same_as(target->grid), "grid-mismatch",
          "restrict_to: masks live on different grids");
  GridFunction out(std::move(target));
  const auto& src = full.raw();
  auto& dst = out.raw();
  const auto& act = out.mask().active;
  for (size_t i = 0; i < dst.size(); i++) dst[i] = act[i] ? src[i] : 0.0;
  return out;
}

/// J': extension by zero; an exact isometry for the uniform weight.
inline GridFunction extend_zero(const GridFunction& perforated,
                                std::shared_ptr<const NodeMask> target) {
  require(perforated.mask().grid.same_as(target->grid), "grid-mismatch",
          "extend_zero: masks live on different grids");
  GridFunction out(std::move(target));
  const auto& src = perforated.raw();
  auto& dst = out.raw();
  const auto& act = out.mask().active;
  // the source is pinned to zero outside its own unknowns, so a masked copy
  // against the *target* mask is exact
  for (size_t i = 0; i < dst.size(); i++) dst[i] = act[i] ? src[i] : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

/// Mean value of a grid function over a closed axis-aligned cell, using
/// tensor-product trapezoidal weights (face/edge/corner nodes at 1/2, 1/4,
/// 1/8 weight). Masked nodes are excluded and the weight renormalized.
inline double cell_mean(const GridFunction& f,
                        const std::array<double, kMaxDim>& cell_lo,
                        const std::array<double, kMaxDim>& cell_hi) {
  const auto& g = f.mask().grid;
  const auto st = g.strides();
  std::array<index_t, kMaxDim> lo{}, hi{};
  for (int a = 0; a < g.n; a++) {
    double tol = 1e-12 * g.h;
    lo[size_t(a)] = std::max<index_t>(
        0, index_t(std::ceil((cell_lo[size_t(a)] - g.origin[size_t(a)] - tol) / g.h)));
    hi[size_t(a)] = std::min<index_t>(
        g.intervals[size_t(a)],
        index_t(std::floor((cell_hi[size_t(a)] - g.origin[size_t(a)] + tol) / g.h)));
    require(lo[size_t(a)] <= hi[size_t(a)], "empty-cell",
            "cell_mean: cell contains no grid node");
  }
  auto axis_weight = [&](int a, index_t i) {
    double x = g.coord(a, i);
    double tol = 1e-12 * g.h;
    bool on_lo = std::abs(x - cell_lo[size_t(a)]) <= tol;
    bool on_hi = std::abs(x - cell_hi[size_t(a)]) <= tol;
    return (on_lo || on_hi) ? 0.5 : 1.0;
  };
  const auto& act = f.mask().active;
  const auto& v = f.raw();
  double wsum = 0, vsum = 0;
  std::array<index_t, kMaxDim> idx = lo;
  while (true) {
    index_t flat = 0;
    double w = 1.0;
    for (int a = 0; a < g.n; a++) {
      flat += idx[size_t(a)] * st[size_t(a)];
      w *= axis_weight(a, idx[size_t(a)]);
    }
    // boundary ring nodes are Dirichlet (value 0): they participate with
    // value zero only when inside the interior index range
    bool interior = true;
    for (int a = 0; a < g.n; a++)
      if (idx[size_t(a)] < 1 || idx[size_t(a)] > g.intervals[size_t(a)] - 1)
        interior = false;
    if (!interior || act[size_t(flat)]) {
      wsum += w;
      vsum += w * (interior ? v[size_t(flat)] : 0.0);
    }
    int a = 0;
    while (a < g.n) {
      if (++idx[size_t(a)] <= hi[size_t(a)]) break;
      idx[size_t(a)] = lo[size_t(a)];
      a++;
    }
    if (a >= g.n) break;
  }
  require(wsum > 0, "empty-cell", "cell_mean: no active node in cell");
  return vsum / wsum;
}

/// Overload for a layout cell.
inline double cell_mean(const GridFunction& f, const HoleLayout& layout,
                        index_t cell) {
  return cell_mean(f, layout.cell_lo(cell), layout.cell_hi(cell));
}

// ---------------------------------------------------------------------------
// grid function export: flat binary of all interior nodes (lex order, masked
// nodes as zero) next to a JSON header describing shape and mask

inline void write_function(const GridFunction& f, std::ostream& header_os,
                           std::ostream& data_os) {
  const auto& g = f.mask().grid;
  nlohmann::json hdr{{"n", g.n},
                     {"h", g.h},
                     {"origin", g.origin},
                     {"intervals", g.intervals},
                     {"layout", "interior nodes, axis 0 fastest"},
                     {"masked", "written as 0"},
                     {"active_count", f.active_count()},
                     {"dtype", "float64"}};
  header_os << hdr.dump(2) << "\n";
  const auto& v = f.raw();
  f.mask().for_each_interior([&](index_t flat, const index_t*) {
    double val = v[size_t(flat)];
    data_os.write(reinterpret_cast<const char*>(&val), sizeof val);
  });
}

}  // namespace perfhom
