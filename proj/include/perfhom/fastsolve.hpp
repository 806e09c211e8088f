#pragma once

// Fast structured solvers.
//
// DstBoxSolver: the (2n+1)-point Dirichlet Laplacian on an unperforated box
// is diagonalized exactly by the type-I discrete sine transform, so any
// spectral function of it (resolvent, heat kernel) is applied in two
// transforms. Shifted by 1 + q it also serves as the CG preconditioner for
// the perforated operator: extension by zero makes the perforated stiffness
// form the exact restriction of the box form, which traps the preconditioned
// spectrum in [(1+lambda_1)/(1+lambda_1+q), 1].
//
// MgPoisson: geometric multigrid V-cycle on arbitrarily masked grids
// (red-black Gauss-Seidel, full weighting, trilinear prolongation, dense
// coarsest solve); preconditions the capacity solves on ball domains.
//
// NeumannCellSolver / NeumannCellOp: cell-centered Laplacian on a cube with
// reflecting boundaries, diagonalized by DCT-II.

#include <fftw3.h>

#include <Eigen/Cholesky>
#include <memory>
#include <vector>

#include "perfhom/grid.hpp"
#include "perfhom/linalg.hpp"

namespace perfhom {

/// fftw_malloc-backed buffer, so in-place plans get SIMD alignment.
class AlignedBuffer {
 public:
  AlignedBuffer() = default;
  explicit AlignedBuffer(index_t n) : n_(n) {
    data_ = static_cast<double*>(fftw_malloc(sizeof(double) * size_t(n)));
    require(data_ != nullptr, "alloc", "AlignedBuffer: out of memory");
    std::memset(data_, 0, sizeof(double) * size_t(n));
  }
  ~AlignedBuffer() { if (data_) fftw_free(data_); }
  AlignedBuffer(AlignedBuffer&& o) noexcept : n_(o.n_), data_(o.data_) {
    o.data_ = nullptr;
    o.n_ = 0;
  }
  AlignedBuffer& operator=(AlignedBuffer&& o) noexcept {
    if (this != &o) {
      if (data_) fftw_free(data_);
      data_ = o.data_;
      n_ = o.n_;
      o.data_ = nullptr;
      o.n_ = 0;
    }
    return *this;
  }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  double* data() { return data_; }
  const double* data() const { return data_; }
  index_t size() const { return n_; }
  void zero() { std::memset(data_, 0, sizeof(double) * size_t(n_)); }

 private:
  index_t n_ = 0;
  double* data_ = nullptr;
};

/// Exact spectral calculus for the unperforated box operator S + zeroth*Id.
/// Transforms run in place on one bound buffer: either an internal one, or a
/// caller buffer (the CG workspace) to keep the large-grid memory at four
/// vectors.
class DstBoxSolver {
 public:
  explicit DstBoxSolver(const CartesianGrid& grid, double* bound = nullptr)
      : grid_(grid) {
    if (!bound) {
      own_ = AlignedBuffer(grid.total_padded());
      buf_ = own_.data();
    } else {
      buf_ = bound;
    }
    auto st = grid.strides();
    fftw_iodim dims[kMaxDim];
    fftw_r2r_kind kinds[kMaxDim];
    // slowest axis first for FFTW
    for (int a = 0; a < grid.n; a++) {
      int slot = grid.n - 1 - a;
      dims[slot].n = int(grid.interior(a));
      dims[slot].is = int(st[size_t(a)]);
      dims[slot].os = int(st[size_t(a)]);
      kinds[slot] = FFTW_RODFT00;
    }
    index_t first = 0;
    for (int a = 0; a < grid.n; a++) first += st[size_t(a)];
    plan_ = fftw_plan_guru_r2r(grid.n, dims, 0, nullptr, buf_ + first,
                               buf_ + first, kinds,
                               FFTW_ESTIMATE | (bound ? 0u : 0u));
    require(plan_ != nullptr, "fftw", "DstBoxSolver: planning failed");
    for (int a = 0; a < grid.n; a++) {
      std::vector<double> lam(size_t(grid.interior(a)));
      double inv_h2 = 1.0 / (grid.h * grid.h);
      for (index_t k = 1; k <= grid.interior(a); k++)
        lam[size_t(k - 1)] =
            2.0 * inv_h2 * (1.0 - std::cos(M_PI * double(k) / double(grid.intervals[size_t(a)])));
      axis_lambda_.push_back(std::move(lam));
    }
    norm_ = 1.0;
    for (int a = 0; a < grid.n; a++) norm_ *= 2.0 * double(grid.intervals[size_t(a)]);
  }
  ~DstBoxSolver() { if (plan_) fftw_destroy_plan(plan_); }
  DstBoxSolver(const DstBoxSolver&) = delete;
  DstBoxSolver& operator=(const DstBoxSolver&) = delete;

  const CartesianGrid& grid() const { return grid_; }
  double* buffer() { return buf_; }

  /// Exact FD eigenvalue of the box Laplacian for mode k (1-based per axis).
  double mode_lambda(const std::array<index_t, kMaxDim>& k) const {
    double s = 0;
    for (int a = 0; a < grid_.n; a++) s += axis_lambda_[size_t(a)][size_t(k[size_t(a)] - 1)];
    return s;
  }

  /// In-place on the bound buffer: buffer <- fn(S) buffer, exactly (the
  /// transform normalization is folded in).
  template <class Fn>
  void apply_spectral_inplace(Fn fn) {
    fftw_execute(plan_);
    scale_modes(fn);
    fftw_execute(plan_);
  }

  /// z = fn(S) r. Copies through the bound buffer as needed; zero-copy when
  /// z is the bound buffer itself.
  template <class Fn>
  void apply_spectral(const double* r, double* z, Fn fn) {
    const size_t bytes = sizeof(double) * size_t(grid_.total_padded());
    if (r != buf_) std::memcpy(buf_, r, bytes);
    apply_spectral_inplace(fn);
    if (z != buf_) std::memcpy(z, buf_, bytes);
  }

  /// z = (S + shift)^{-1} r, exact.
  void solve_shifted(double shift, const double* r, double* z) {
    apply_spectral(r, z, [shift](double lam) { return 1.0 / (lam + shift); });
  }

  /// z = exp(-(S + q) t) r, exact.
  void heat(double t, double q, const double* r, double* z) {
    apply_spectral(r, z, [t, q](double lam) { return std::exp(-(lam + q) * t); });
  }

 private:
  template <class Fn>
  void scale_modes(Fn fn) {
    auto st = grid_.strides();
    const double inv_norm = 1.0 / norm_;
    std::array<index_t, kMaxDim> k{};
    for (int a = 0; a < grid_.n; a++) k[size_t(a)] = 1;
    // odometer over outer axes, contiguous sweep over axis 0
    while (true) {
      index_t base = 0;
      double lam_rest = 0;
      for (int a = 1; a < grid_.n; a++) {
        base += k[size_t(a)] * st[size_t(a)];
        lam_rest += axis_lambda_[size_t(a)][size_t(k[size_t(a)] - 1)];
      }
      double* row = buf_ + base + 1;
      const auto& l0 = axis_lambda_[0];
      for (index_t i = 0; i < grid_.interior(0); i++)
        row[i] *= fn(l0[size_t(i)] + lam_rest) * inv_norm;
      int a = 1;
      while (a < grid_.n) {
        if (++k[size_t(a)] <= grid_.interior(a)) break;
        k[size_t(a)] = 1;
        a++;
      }
      if (a >= grid_.n || grid_.n == 1) break;
    }
  }

  CartesianGrid grid_;
  AlignedBuffer own_;
  double* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
  std::vector<std::vector<double>> axis_lambda_;
  double norm_ = 1.0;
};

/// CG preconditioner M = J (S_box + shift)^{-1} J' for operators on masked
/// grids. The restriction after the exact box solve keeps iterates in the
/// masked subspace. The transform plan binds lazily to the output buffer it
/// is first called with (and rebinds if that changes), so preconditioning
/// through a caller-owned workspace allocates nothing.
class DstBoxPrecond {
 public:
  DstBoxPrecond(std::shared_ptr<const NodeMask> mask, double shift)
      : mask_(std::move(mask)), shift_(shift) {}

  void precondition(const double* r, double* z) const {
    if (!solver_ || bound_ != z) {
      solver_ = std::make_unique<DstBoxSolver>(mask_->grid, z);
      bound_ = z;
    }
    solver_->solve_shifted(shift_, r, z);
    const auto& act = mask_->active;
    const index_t n = mask_->grid.total_padded();
    for (index_t i = 0; i < n; i++)
      if (!act[size_t(i)]) z[size_t(i)] = 0.0;
  }

 private:
  std::shared_ptr<const NodeMask> mask_;
  mutable std::unique_ptr<DstBoxSolver> solver_;
  mutable double* bound_ = nullptr;
  double shift_;
};

// ---------------------------------------------------------------------------
// geometric multigrid on masked grids

struct MgOptions {
  int pre_sweeps = 2;
  int post_sweeps = 2;
  index_t coarse_dense_limit = 2500;
  int max_levels = 16;
};

class MgPoisson {
 public:
  MgPoisson(std::shared_ptr<const NodeMask> fine_mask, double shift,
            MgOptions opt = MgOptions())
      : opt_(opt), shift_(shift) {
    levels_.push_back(Level{});
    levels_.back().mask = std::move(fine_mask);
    build_hierarchy();
  }

  /// One symmetric V-cycle from a zero initial guess.
  void precondition(const double* r, double* z) const {
    Level& fine = levels_.front();
    const index_t n = fine.mask->grid.total_padded();
    std::memcpy(fine.b.data(), r, sizeof(double) * size_t(n));
    std::memset(z, 0, sizeof(double) * size_t(n));
    v_cycle(0, z);
  }

  int level_count() const { return int(levels_.size()); }

 private:
  struct Level {
    std::shared_ptr<const NodeMask> mask;
    GridOperator op;  // S + shift on this level
    mutable std::vector<double> b, x, tmp;
    // coarsest only:
    Eigen::LDLT<Eigen::MatrixXd> dense;
    std::vector<index_t> act_nodes;
  };

  void build_hierarchy() {
    while (int(levels_.size()) < opt_.max_levels) {
      Level& cur = levels_.back();
      const CartesianGrid& g = cur.mask->grid;
      cur.op = GridOperator(cur.mask, shift_);
      cur.b.assign(size_t(g.total_padded()), 0.0);
      cur.tmp.assign(size_t(g.total_padded()), 0.0);
      if (&cur != &levels_.front()) cur.x.assign(size_t(g.total_padded()), 0.0);

      if (cur.mask->active_count <= opt_.coarse_dense_limit) break;
      bool can_coarsen = true;
      for (int a = 0; a < g.n; a++)
        if (g.intervals[size_t(a)] % 2 != 0 || g.intervals[size_t(a)] < 8)
          can_coarsen = false;
      if (!can_coarsen) break;

      CartesianGrid cg;
      cg.n = g.n;
      cg.origin = g.origin;
      cg.h = 2.0 * g.h;
      for (int a = 0; a < g.n; a++) cg.intervals[size_t(a)] = g.intervals[size_t(a)] / 2;
      // coarse node active iff the coincident fine node is active
      auto fine_mask = cur.mask;
      auto cmask = std::make_shared<NodeMask>();
      cmask->grid = cg;
      cmask->active.assign(size_t(cg.total_padded()), 0);
      cmask->active_count = 0;
      auto fst = g.strides();
      cmask->for_each_interior([&](index_t cflat, const index_t* idx) {
        index_t fflat = 0;
        for (int a = 0; a < cg.n; a++) fflat += 2 * idx[size_t(a)] * fst[size_t(a)];
        if (fine_mask->active[size_t(fflat)]) {
          cmask->active[size_t(cflat)] = 1;
          cmask->active_count++;
        }
      });
      if (cmask->active_count == 0) break;
      levels_.push_back(Level{});
      levels_.back().mask = std::move(cmask);
    }
    // coarsest: dense factorization
    Level& c = levels_.back();
    require(c.mask->active_count <= std::max<index_t>(opt_.coarse_dense_limit, 4000),
            "size-limit",
            "MgPoisson: the coarsening chain stops at " +
                std::to_string(c.mask->active_count) +
                " unknowns; pick interval counts with more factors of two");
    c.op = GridOperator(c.mask, shift_);
    if (c.b.empty()) {
      c.b.assign(size_t(c.mask->grid.total_padded()), 0.0);
      c.tmp.assign(size_t(c.mask->grid.total_padded()), 0.0);
      if (levels_.size() > 1) c.x.assign(size_t(c.mask->grid.total_padded()), 0.0);
    }
    c.act_nodes = c.op.active_nodes();
    Eigen::MatrixXd A = c.op.to_dense_active(
        std::max<index_t>(opt_.coarse_dense_limit, c.mask->active_count));
    c.dense.compute(A);
  }

  /// Red-black Gauss-Seidel sweep over active nodes (color = parity of the
  /// index sum); `reverse` flips the color order for the post-smoother so
  /// the V-cycle stays symmetric.
  void smooth(const Level& lv, double* x, const double* b, int sweeps,
              bool reverse) const {
    const CartesianGrid& g = lv.mask->grid;
    const auto st = g.strides();
    const double inv_h2 = 1.0 / (g.h * g.h);
    const double diag = 2.0 * g.n * inv_h2 + shift_;
    const std::uint8_t* act = lv.mask->active.data();
    for (int s = 0; s < sweeps; s++) {
      for (int color_i = 0; color_i < 2; color_i++) {
        int color = reverse ? 1 - color_i : color_i;
        std::array<index_t, kMaxDim> idx{};
        for (int a = 1; a < g.n; a++) idx[size_t(a)] = 1;
        while (true) {
          index_t base = 0, parity = 0;
          for (int a = 1; a < g.n; a++) {
            base += idx[size_t(a)] * st[size_t(a)];
            parity += idx[size_t(a)];
          }
          index_t i0 = 1 + ((parity + 1 + color) % 2);  // x-start of this color
          const index_t m0 = g.intervals[0];
          for (index_t i = i0; i <= m0 - 1; i += 2) {
            index_t f = base + i;
            if (!act[size_t(f)]) continue;
            double nb = x[f - 1] + x[f + 1];
            for (int a = 1; a < g.n; a++)
              nb += x[f - st[size_t(a)]] + x[f + st[size_t(a)]];
            x[f] = (b[f] + inv_h2 * nb) / diag;
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
    }
  }

  /// Full-weighting restriction of the fine residual to the coarse rhs.
  void restrict_residual(const Level& fine, const Level& coarse) const {
    const CartesianGrid& fg = fine.mask->grid;
    const CartesianGrid& cgr = coarse.mask->grid;
    auto fst = fg.strides();
    std::fill(coarse.b.begin(), coarse.b.end(), 0.0);
    auto cst = cgr.strides();
    coarse.mask->for_each_interior([&](index_t cflat, const index_t* idx) {
      (void)cst;
      if (!coarse.mask->active[size_t(cflat)]) return;
      index_t fbase = 0;
      for (int a = 0; a < cgr.n; a++) fbase += 2 * idx[size_t(a)] * fst[size_t(a)];
      // tensor stencil [1/4, 1/2, 1/4] per axis
      double acc = 0;
      int n = cgr.n;
      index_t off[kMaxDim];
      int d[kMaxDim];
      for (int a = 0; a < n; a++) d[a] = -1;
      while (true) {
        double w = 1.0;
        index_t f = fbase;
        for (int a = 0; a < n; a++) {
          w *= (d[a] == 0) ? 0.5 : 0.25;
          f += d[a] * fst[size_t(a)];
        }
        acc += w * fine.tmp[size_t(f)];
        int a = 0;
        while (a < n) {
          if (++d[a] <= 1) break;
          d[a] = -1;
          a++;
        }
        if (a >= n) break;
      }
      (void)off;
      coarse.b[size_t(cflat)] = acc;
    });
  }

  /// Trilinear prolongation of the coarse correction, added into fine x at
  /// active fine nodes.
  void prolong_add(const Level& coarse, const Level& fine, double* xf) const {
    const CartesianGrid& fg = fine.mask->grid;
    const CartesianGrid& cgr = coarse.mask->grid;
    auto fst = fg.strides();
    auto cst = cgr.strides();
    fine.mask->for_each_interior([&](index_t fflat, const index_t* idx) {
      if (!fine.mask->active[size_t(fflat)]) return;
      // fine index -> surrounding coarse nodes
      double acc = 0;
      int n = fg.n;
      index_t clo[kMaxDim];
      double wlo[kMaxDim];
      for (int a = 0; a < n; a++) {
        index_t fi = idx[size_t(a)];
        clo[a] = fi / 2;
        wlo[a] = (fi % 2 == 0) ? 1.0 : 0.5;
      }
      int d[kMaxDim];
      for (int a = 0; a < n; a++) d[a] = 0;
      while (true) {
        double w = 1.0;
        index_t c = 0;
        bool ok = true;
        for (int a = 0; a < n; a++) {
          double wa = d[a] == 0 ? wlo[a] : 1.0 - wlo[a];
          if (wa == 0.0) { ok = false; break; }
          w *= wa;
          index_t ci = clo[a] + d[a];
          if (ci < 0 || ci > cgr.intervals[size_t(a)]) { ok = false; break; }
          c += ci * cst[size_t(a)];
        }
        if (ok) acc += w * coarse.x[size_t(c)];
        int a = 0;
        while (a < n) {
          if (++d[a] <= 1) break;
          d[a] = 0;
          a++;
        }
        if (a >= n) break;
      }
      xf[fflat] += acc;
    });
  }

  void v_cycle(size_t l, double* x) const {
    const Level& lv = levels_[l];
    if (l + 1 == levels_.size()) {
      // coarsest: dense solve on active nodes
      const index_t N = index_t(lv.act_nodes.size());
      Eigen::VectorXd rb(N);
      for (index_t i = 0; i < N; i++) rb(i) = lv.b[size_t(lv.act_nodes[size_t(i)])];
      Eigen::VectorXd xs = lv.dense.solve(rb);
      const index_t n = lv.mask->grid.total_padded();
      std::memset(x, 0, sizeof(double) * size_t(n));
      for (index_t i = 0; i < N; i++) x[lv.act_nodes[size_t(i)]] = xs(i);
      return;
    }
    const index_t n = lv.mask->grid.total_padded();
    smooth(lv, x, lv.b.data(), opt_.pre_sweeps, false);
    lv.op.apply(x, lv.tmp.data());
    for (index_t i = 0; i < n; i++) lv.tmp[size_t(i)] = lv.b[size_t(i)] - lv.tmp[size_t(i)];
    const Level& next = levels_[l + 1];
    restrict_residual(lv, next);
    std::memset(next.x.data(), 0, sizeof(double) * next.x.size());
    v_cycle(l + 1, next.x.data());
    prolong_add(next, lv, x);
    smooth(lv, x, lv.b.data(), opt_.post_sweeps, true);
  }

  MgOptions opt_;
  double shift_;
  mutable std::vector<Level> levels_;
};

// ---------------------------------------------------------------------------
// cell-centered Neumann Laplacian on a cube (Friedrichs/Poincare checks)

/// -Laplace_h on (0, extent)^n with reflecting boundaries; m cells per axis,
/// nodes at (j+1/2)h. Contiguous m^n array, axis 0 fastest.
class NeumannCellOp {
 public:
  NeumannCellOp(int n, double extent, index_t m)
      : n_(n), m_(m), h_(extent / double(m)) {
    total_ = 1;
    for (int a = 0; a < n; a++) total_ *= m;
  }
  index_t dim() const { return total_; }
  double h() const { return h_; }
  void apply(const double* x, double* y) const {
    const double inv_h2 = 1.0 / (h_ * h_);
    std::memset(y, 0, sizeof(double) * size_t(total_));
    index_t stride = 1;
    for (int a = 0; a < n_; a++) {
      const index_t lines = total_ / m_;
      for (index_t ln = 0; ln < lines; ln++) {
        // decompose ln into (inner, outer) around axis a
        index_t inner = ln % stride;
        index_t outer = ln / stride;
        index_t base = outer * stride * m_ + inner;
        for (index_t j = 0; j < m_; j++) {
          index_t f = base + j * stride;
          double c = x[f];
          double lo = (j > 0) ? x[f - stride] : c;      // reflect
          double hi = (j + 1 < m_) ? x[f + stride] : c;  // reflect
          y[f] += inv_h2 * (2.0 * c - lo - hi);
        }
      }
      stride *= m_;
    }
  }
  double lambda_max_bound() const { return 4.0 * n_ / (h_ * h_); }

 private:
  int n_;
  index_t m_, total_ = 0;
  double h_;
};

/// Exact inverse of (NeumannCellOp + shift) via DCT-II/DCT-III.
class NeumannCellSolver {
 public:
  NeumannCellSolver(int n, double extent, index_t m, double shift)
      : n_(n), m_(m), h_(extent / double(m)), shift_(shift) {
    total_ = 1;
    for (int a = 0; a < n; a++) total_ *= m;
    buf_ = AlignedBuffer(total_);
    fftw_iodim dims[kMaxDim];
    fftw_r2r_kind fwd[kMaxDim], bwd[kMaxDim];
    index_t stride = 1;
    for (int a = 0; a < n; a++) {
      int slot = n - 1 - a;
      dims[slot].n = int(m);
      dims[slot].is = int(stride);
      dims[slot].os = int(stride);
      fwd[slot] = FFTW_REDFT10;
      bwd[slot] = FFTW_REDFT01;
      stride *= m;
    }
    fwd_ = fftw_plan_guru_r2r(n, dims, 0, nullptr, buf_.data(), buf_.data(),
                              fwd, FFTW_ESTIMATE);
    bwd_ = fftw_plan_guru_r2r(n, dims, 0, nullptr, buf_.data(), buf_.data(),
                              bwd, FFTW_ESTIMATE);
    require(fwd_ && bwd_, "fftw", "NeumannCellSolver: planning failed");
    lam_.resize(size_t(m));
    for (index_t k = 0; k < m; k++)
      lam_[size_t(k)] = 2.0 / (h_ * h_) * (1.0 - std::cos(M_PI * double(k) / double(m)));
    norm_ = std::pow(2.0 * double(m), n);
  }
  ~NeumannCellSolver() {
    if (fwd_) fftw_destroy_plan(fwd_);
    if (bwd_) fftw_destroy_plan(bwd_);
  }
  NeumannCellSolver(const NeumannCellSolver&) = delete;

  void precondition(const double* r, double* z) const {
    std::memcpy(buf_.data(), r, sizeof(double) * size_t(total_));
    fftw_execute(fwd_);
    // scale mode (k_0..k_{n-1})
    std::array<index_t, kMaxDim> k{};
    double* b = buf_.data();
    for (index_t f = 0; f < total_; f++) {
      double lam = 0;
      index_t rem = f;
      for (int a = 0; a < n_; a++) {
        lam += lam_[size_t(rem % m_)];
        rem /= m_;
      }
      b[f] /= (lam + shift_) * norm_;
    }
    (void)k;
    fftw_execute(bwd_);
    std::memcpy(z, buf_.data(), sizeof(double) * size_t(total_));
  }

 private:
  int n_;
  index_t m_, total_;
  double h_, shift_;
  mutable AlignedBuffer buf_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
  std::vector<double> lam_;
  double norm_;
};

}  // namespace perfhom
