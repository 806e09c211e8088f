#pragma once

// Linear-algebra layer: matrix-free CG, shift-invert block Lanczos with a
// pluggable basis store (RAM or disk), Chebyshev action of the heat
// semigroup, dense oracles on top of Eigen, and the Hausdorff distance
// between finite spectra.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "perfhom/common.hpp"

namespace perfhom {

template <class T>
concept LinearOperator = requires(const T& op, const double* x, double* y) {
  { op.dim() } -> std::convertible_to<index_t>;
  { op.apply(x, y) };
};

/// Preconditioner contract: z ~= Op^{-1} r, a fixed linear map (CG is not
/// flexible). r and z never alias.
template <class T>
concept Preconditioner = requires(const T& m, const double* r, double* z) {
  { m.precondition(r, z) };
};

/// Type-erased operator; satisfies LinearOperator.
struct OpRef {
  index_t n = 0;
  std::function<void(const double*, double*)> fn;
  index_t dim() const { return n; }
  void apply(const double* x, double* y) const { fn(x, y); }
};

// ---------------------------------------------------------------------------
// vector helpers (plain loops; the compiler vectorizes these)

inline double vdot(index_t n, const double* a, const double* b) {
  double s = 0;
  for (index_t i = 0; i < n; i++) s += a[i] * b[i];
  return s;
}
inline double vnorm(index_t n, const double* a) { return std::sqrt(vdot(n, a, a)); }
inline void vaxpy(index_t n, double alpha, const double* x, double* y) {
  for (index_t i = 0; i < n; i++) y[i] += alpha * x[i];
}
inline void vscale(index_t n, double alpha, double* x) {
  for (index_t i = 0; i < n; i++) x[i] *= alpha;
}

// ---------------------------------------------------------------------------

struct SolveReport {
  int iterations = 0;
  double rel_residual = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
};

struct CgOptions {
  double tol = 1e-10;  // relative residual
  int max_iter = 100000;
  bool throw_on_fail = true;
};

/// Preconditioned CG with caller-owned workspace: `r` holds the right-hand
/// side on entry and is consumed; `p` and `w` are scratch. Exactly the four
/// vectors {x, r, p, w} are touched, which is what fits in memory at the
/// largest grids (w doubles as the preconditioned residual and as Ap).
template <LinearOperator Op, class Pre = std::nullptr_t>
SolveReport cg_solve_ws(const Op& op, double* r, double* x, double* p,
                        double* w, const CgOptions& opts = {},
                        const Pre* pre = nullptr) {
  WallTimer timer;
  const index_t n = op.dim();
  SolveReport rep;
  const double bnorm = vnorm(n, r);
  std::memset(x, 0, sizeof(double) * n);
  if (bnorm == 0.0) {  // f = 0 -> u = 0 in zero iterations
    rep.converged = true;
    rep.wall_seconds = timer.seconds();
    return rep;
  }
  double rz;
  if constexpr (!std::is_same_v<Pre, std::nullptr_t>) {
    pre->precondition(r, w);
    std::memcpy(p, w, sizeof(double) * n);
    rz = vdot(n, r, w);
  } else {
    std::memcpy(p, r, sizeof(double) * n);
    rz = vdot(n, r, r);
  }
  double rnorm = bnorm;
  int it = 0;
  for (; it < opts.max_iter && rnorm / bnorm > opts.tol; it++) {
    op.apply(p, w);  // w = Ap
    double pAp = vdot(n, p, w);
    require(pAp > 0, "non-spd", "cg_solve: p'Ap <= 0, operator not SPD");
    double alpha = rz / pAp;
    vaxpy(n, alpha, p, x);
    vaxpy(n, -alpha, w, r);
    rnorm = vnorm(n, r);
    if (rnorm / bnorm <= opts.tol) { it++; break; }
    double rz_new;
    if constexpr (!std::is_same_v<Pre, std::nullptr_t>) {
      pre->precondition(r, w);
      rz_new = vdot(n, r, w);
      double beta = rz_new / rz;
      for (index_t i = 0; i < n; i++) p[i] = w[i] + beta * p[i];
    } else {
      rz_new = vdot(n, r, r);
      double beta = rz_new / rz;
      for (index_t i = 0; i < n; i++) p[i] = r[i] + beta * p[i];
    }
    rz = rz_new;
  }
  rep.iterations = it;
  rep.rel_residual = rnorm / bnorm;
  rep.converged = rep.rel_residual <= opts.tol;
  rep.wall_seconds = timer.seconds();
  if (!rep.converged && opts.throw_on_fail)
    fail("max-iterations",
         "cg_solve: " + std::to_string(it) + " iterations, residual " +
             std::to_string(rep.rel_residual) + " (best iterate kept)");
  return rep;
}

/// Convenience wrapper that allocates the workspace.
template <LinearOperator Op, class Pre = std::nullptr_t>
SolveReport cg_solve(const Op& op, const double* b, double* x,
                     const CgOptions& opts = {}, const Pre* pre = nullptr) {
  const index_t n = op.dim();
  std::vector<double> r(b, b + n), p(size_t(n), 0.0), w(size_t(n), 0.0);
  return cg_solve_ws(op, r.data(), x, p.data(), w.data(), opts, pre);
}

// ---------------------------------------------------------------------------
// basis storage for Lanczos: RAM for small problems, a single streamed file
// on disk when the basis does not fit in memory.

class VecStore {
 public:
  virtual ~VecStore() = default;
  virtual void append(const double* v) = 0;
  virtual void read(index_t i, double* v) const = 0;
  virtual index_t count() const = 0;
  virtual index_t dim() const = 0;
};

class RamVecStore final : public VecStore {
 public:
  explicit RamVecStore(index_t n) : n_(n) {}
  void append(const double* v) override { vecs_.emplace_back(v, v + n_); }
  void read(index_t i, double* v) const override {
    std::memcpy(v, vecs_[size_t(i)].data(), sizeof(double) * n_);
  }
  index_t count() const override { return index_t(vecs_.size()); }
  index_t dim() const override { return n_; }

 private:
  index_t n_;
  std::deque<std::vector<double>> vecs_;
};

class DiskVecStore final : public VecStore {
 public:
  DiskVecStore(index_t n, const std::string& path) : n_(n), path_(path) {
    f_ = std::fopen(path.c_str(), "w+b");
    require(f_ != nullptr, "io", "cannot create basis file " + path);
  }
  ~DiskVecStore() override {
    if (f_) std::fclose(f_);
    std::remove(path_.c_str());
  }
  DiskVecStore(const DiskVecStore&) = delete;
  void append(const double* v) override {
    std::fseek(f_, 0, SEEK_END);
    size_t w = std::fwrite(v, sizeof(double), size_t(n_), f_);
    require(w == size_t(n_), "io", "short write to basis file");
    count_++;
  }
  void read(index_t i, double* v) const override {
    std::fseek(f_, long(i) * long(n_) * 8, SEEK_SET);
    size_t r = std::fread(v, sizeof(double), size_t(n_), f_);
    require(r == size_t(n_), "io", "short read from basis file");
  }
  index_t count() const override { return count_; }
  index_t dim() const override { return n_; }

 private:
  index_t n_;
  std::string path_;
  std::FILE* f_ = nullptr;
  index_t count_ = 0;
};

// ---------------------------------------------------------------------------

struct EigReport {
  int k_requested = 0;
  std::vector<double> values;     // ascending, with multiplicity
  std::vector<double> residuals;  // ||A v - lambda v|| / ||v||, per pair
  std::vector<double> mu;         // (lambda + 1)^{-1}
  int op_applies = 0;             // inner solves + certification applies
  bool converged = false;
};

struct EigOptions {
  double tol = 1e-8;  // accept pair when residual <= tol * (1 + |lambda|)
  index_t dense_limit = 2000;
  int block = 3;  // >= largest expected multiplicity
  int max_basis = 240;
  std::uint64_t seed = 1;
  double lambda_cutoff = -1.0;  // if > 0: return every eigenvalue <= cutoff
  std::string disk_path;        // nonempty: allow spilling the basis to disk
  index_t ram_basis_doubles = 300000000;  // spill threshold
  double cg_tol = 1e-11;
  int cg_max_iter = 200000;
  bool throw_on_fail = true;
};

/// Iterative-path result carrying the Krylov data, so callers (the semigroup
/// experiment) can re-use the orthonormal basis without recomputing it.
/// ritz(i, j) is the coefficient of basis vector i in certified eigenvector j;
/// only the first ritz.rows() stored vectors enter.
struct LanczosResult {
  EigReport report;
  std::shared_ptr<VecStore> basis;
  Eigen::MatrixXd ritz;
};

namespace detail {

/// One-pass classical Gram-Schmidt against the whole store, with a second
/// pass when the norm drops by more than 1/sqrt(2) (Kahan-Parlett test).
/// Coefficients of the FIRST pass go to `coef` (that is the projection used
/// by the Lanczos recurrence).
inline double orthogonalize(const VecStore& store, double* v, double* scratch,
                            std::vector<double>* coef) {
  const index_t n = store.dim();
  const index_t m = store.count();
  if (coef) coef->assign(size_t(m), 0.0);
  double before = vnorm(n, v);
  if (m == 0) return before;
  for (int pass = 0; pass < 2; pass++) {
    for (index_t j = 0; j < m; j++) {
      store.read(j, scratch);
      double c = vdot(n, scratch, v);
      vaxpy(n, -c, scratch, v);
      if (coef && pass == 0) (*coef)[size_t(j)] += c;
    }
    double after = vnorm(n, v);
    if (after > 0.70710678 * before) return after;
    before = after;
  }
  return vnorm(n, v);
}

}  // namespace detail

/// Smallest eigenpairs of a symmetric PSD operator.
///
/// Dense path (dim <= dense_limit): full diagonalization via Eigen.
/// Iterative path: block Lanczos on (A + I)^{-1}, inner solves by PCG with
/// the supplied preconditioner, every returned pair certified by a direct
/// ||A v - lambda v|| evaluation. Deterministic for a fixed seed.
template <LinearOperator Op, class Pre = std::nullptr_t>
LanczosResult lowest_eigenpairs_full(const Op& op, int k,
                                     const EigOptions& opts = {},
                                     const Pre* pre = nullptr) {
  const index_t n = op.dim();
  require(k >= 1 && index_t(k) <= n, "bad-argument",
          "lowest_eigenpairs: k out of range");
  LanczosResult out;
  out.report.k_requested = k;

  if (n <= opts.dense_limit) {
    Eigen::MatrixXd A(n, n);
    {
      std::vector<double> e(size_t(n), 0.0), col(size_t(n), 0.0);
      for (index_t j = 0; j < n; j++) {
        e[size_t(j)] = 1.0;
        op.apply(e.data(), col.data());
        e[size_t(j)] = 0.0;
        for (index_t i = 0; i < n; i++) A(i, j) = col[size_t(i)];
      }
    }
    A = 0.5 * (A + A.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    index_t want = k;
    if (opts.lambda_cutoff > 0) {
      index_t below = 0;
      while (below < n && es.eigenvalues()(below) <= opts.lambda_cutoff) below++;
      want = std::min<index_t>(n, std::max<index_t>(below, k));
    }
    std::vector<double> x(size_t(n), 0.0), Ax(size_t(n), 0.0);
    out.basis = std::make_shared<RamVecStore>(n);
    for (index_t j = 0; j < want; j++) {
      double lam = es.eigenvalues()(j);
      out.report.values.push_back(lam);
      out.report.mu.push_back(1.0 / (1.0 + lam));
      for (index_t i = 0; i < n; i++) x[size_t(i)] = es.eigenvectors()(i, j);
      op.apply(x.data(), Ax.data());
      vaxpy(n, -lam, x.data(), Ax.data());
      out.report.residuals.push_back(vnorm(n, Ax.data()));
      out.basis->append(x.data());
    }
    out.report.converged = true;
    out.ritz = Eigen::MatrixXd::Identity(want, want);
    return out;
  }

  // --- shift-invert block Lanczos -----------------------------------------
  struct Shifted {
    const Op* op;
    index_t dim() const { return op->dim(); }
    void apply(const double* x, double* y) const {
      op->apply(x, y);
      const index_t m = op->dim();
      for (index_t i = 0; i < m; i++) y[i] += x[i];
    }
  } shifted{&op};

  std::shared_ptr<VecStore> store;
  if (n * index_t(opts.max_basis) > opts.ram_basis_doubles) {
    require(!opts.disk_path.empty(), "size-limit",
            "lowest_eigenpairs: basis exceeds RAM budget and no disk path given");
    store = std::make_shared<DiskVecStore>(n, opts.disk_path);
  } else {
    store = std::make_shared<RamVecStore>(n);
  }

  const int b = opts.block;
  // the four large work vectors; nothing else of size n is allocated while
  // the recurrence runs (this is what fits beside a disk-backed basis)
  std::vector<double> rhs(size_t(n), 0.0), cand(size_t(n), 0.0), p_ws(size_t(n), 0.0),
      w_ws(size_t(n), 0.0);
  std::vector<double> coef;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(opts.max_basis + b, opts.max_basis);
  CgOptions cgo;
  // inner solves must stay well below the Ritz residual target
  cgo.tol = std::min(opts.cg_tol, std::max(opts.tol * 1e-3, 1e-14));
  cgo.max_iter = opts.cg_max_iter;

  SplitMix64 rng(opts.seed);
  auto random_fill = [&](double* dst) {
    for (index_t i = 0; i < n; i++) dst[i] = rng.next_sym();
  };

  for (int j = 0; j < b && store->count() < n; j++) {
    random_fill(cand.data());
    double nrm = detail::orthogonalize(*store, cand.data(), rhs.data(), nullptr);
    require(nrm > 1e-13, "breakdown", "lowest_eigenpairs: degenerate start");
    vscale(n, 1.0 / nrm, cand.data());
    store->append(cand.data());
  }

  int applies = 0;
  int filled = 0;  // columns of H with a completed T-application
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  EigReport& rep = out.report;

  // The recurrence-tail residual lives on the (A+I)^{-1} scale; the directly
  // certified ||A y - lambda y|| can exceed it by up to ||A+I||. The driver
  // threshold is therefore tightened adaptively whenever certification fails.
  double driver_scale = 1.0;

  // certification: reconstruct the selected Ritz vectors (two at a time, to
  // cap peak memory), one direct operator application each; returns the
  // worst ratio residual/threshold over the pairs that must converge
  auto certify = [&]() -> double {
    // release two of the four work vectors: the reconstruction batch below
    // needs their space (peak stays at four large vectors)
    p_ws.clear();
    p_ws.shrink_to_fit();
    cand.clear();
    cand.shrink_to_fit();
    Eigen::MatrixXd Hs = H.topLeftCorner(filled, filled);
    Hs = 0.5 * (Hs + Hs.transpose()).eval();
    es.compute(Hs);
    std::vector<int> cols;
    for (int j = filled - 1; j >= 0; j--) {
      double mu = es.eigenvalues()(j);
      if (mu <= 0) break;
      double lam = 1.0 / mu - 1.0;
      if (opts.lambda_cutoff > 0) {
        if (lam > opts.lambda_cutoff && int(cols.size()) >= k) break;
      } else if (int(cols.size()) >= k) {
        break;
      }
      cols.push_back(j);
    }
    rep.values.clear();
    rep.residuals.clear();
    rep.mu.clear();
    std::vector<double> lam_list, res_list;
    Eigen::MatrixXd coeffs(filled, int(cols.size()));
    const size_t batch = 2;
    std::vector<std::vector<double>> y;
    for (size_t c0 = 0; c0 < cols.size(); c0 += batch) {
      size_t c1 = std::min(cols.size(), c0 + batch);
      y.assign(c1 - c0, std::vector<double>(size_t(n), 0.0));
      for (int i = 0; i < filled; i++) {
        store->read(i, rhs.data());
        for (size_t c = c0; c < c1; c++)
          vaxpy(n, es.eigenvectors()(i, cols[c]), rhs.data(), y[c - c0].data());
      }
      for (size_t c = c0; c < c1; c++) {
        double mu = es.eigenvalues()(cols[c]);
        double lam = 1.0 / mu - 1.0;
        double ynorm = vnorm(n, y[c - c0].data());
        op.apply(y[c - c0].data(), w_ws.data());
        applies++;
        vaxpy(n, -lam, y[c - c0].data(), w_ws.data());
        lam_list.push_back(lam);
        res_list.push_back(vnorm(n, w_ws.data()) / std::max(ynorm, 1e-300));
        for (int i = 0; i < filled; i++)
          coeffs(i, int(c)) = es.eigenvectors()(i, cols[c]);
      }
    }
    std::vector<int> order(lam_list.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = int(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int bb) { return lam_list[a] < lam_list[bb]; });
    out.ritz.resize(filled, int(order.size()));
    double worst = 0;
    for (size_t i = 0; i < order.size(); i++) {
      double lam = lam_list[order[i]];
      double res = res_list[order[i]];
      rep.values.push_back(lam);
      rep.residuals.push_back(res);
      rep.mu.push_back(1.0 / (1.0 + lam));
      out.ritz.col(int(i)) = coeffs.col(order[i]);
      bool must = int(i) < k || (opts.lambda_cutoff > 0 && lam <= opts.lambda_cutoff);
      if (must) worst = std::max(worst, res / (opts.tol * (1.0 + std::abs(lam))));
    }
    if (int(order.size()) < k) worst = std::max(worst, 1e6);
    return worst;
  };

  for (int attempt = 0; attempt < 6; attempt++) {
    bool done = false;
    bool exhausted = false;
    while (!done) {
      // exhausting either the basis budget or the space ends the expansion
      if (filled >= int(store->count()) || filled >= opts.max_basis) {
        exhausted = true;
        break;
      }
      const int j = filled;
      store->read(j, rhs.data());
      cg_solve_ws(shifted, rhs.data(), cand.data(), p_ws.data(), w_ws.data(),
                  cgo, pre);  // cand = (A+I)^{-1} v_j
      applies++;
      double nrm = detail::orthogonalize(*store, cand.data(), rhs.data(), &coef);
      for (size_t i = 0; i < coef.size(); i++) H(index_t(i), j) = coef[i];
      filled = j + 1;
      if (store->count() < std::min<index_t>(n, opts.max_basis)) {
        H(store->count(), j) = nrm;
        if (nrm <= 1e-12) {  // invariant subspace hit: restart direction
          random_fill(cand.data());
          nrm = detail::orthogonalize(*store, cand.data(), rhs.data(), nullptr);
          if (nrm <= 1e-12) done = true;
        }
        if (nrm > 1e-12) {
          vscale(n, 1.0 / nrm, cand.data());
          store->append(cand.data());
        }
      }

      // Rayleigh-Ritz over the filled principal block, once per block
      if (filled % b != 0 && filled < opts.max_basis &&
          filled < int(store->count()))
        continue;
      Eigen::MatrixXd Hs = H.topLeftCorner(filled, filled);
      Hs = 0.5 * (Hs + Hs.transpose()).eval();
      es.compute(Hs);
      int converged_pairs = 0;
      bool window_closed = (opts.lambda_cutoff <= 0);
      double lam_window = 0;  // largest candidate lambda so far
      for (int c = filled - 1; c >= 0; c--) {
        double mu = es.eigenvalues()(c);
        if (mu <= 0) break;
        lam_window = std::max(lam_window, 1.0 / mu - 1.0);
        double res = 0;  // recurrence-tail residual on the shift-invert scale
        for (int r = filled; r < int(store->count()); r++) {
          double acc = 0;
          for (int cc = 0; cc < filled; cc++)
            acc += H(r, cc) * es.eigenvectors()(cc, c);
          res += acc * acc;
        }
        res = std::sqrt(res);
        double driver = std::max(
            0.2 * driver_scale * opts.tol / (1.0 + lam_window), 2.0 * cgo.tol);
        if (res > driver) break;  // pairs converge in order for shift-inverts
        converged_pairs++;
        if (opts.lambda_cutoff > 0 && 1.0 / mu - 1.0 > opts.lambda_cutoff) {
          window_closed = true;
          break;
        }
      }
      if (opts.lambda_cutoff > 0) {
        if (converged_pairs >= k && window_closed) done = true;
      } else if (converged_pairs >= k) {
        done = true;
      }
    }

    require(filled >= 1, "eig-nonconvergence", "lowest_eigenpairs: empty basis");
    double worst = certify();
    if (worst <= 1.0) break;
    if (exhausted) break;  // nothing left to expand; report what we have
    driver_scale = std::max(driver_scale / (8.0 * worst), 1e-10);
    p_ws.assign(size_t(n), 0.0);
    cand.assign(size_t(n), 0.0);
  }

  rep.op_applies = applies;
  rep.converged = int(rep.values.size()) >= k;
  for (size_t i = 0; i < rep.values.size(); i++)
    if (rep.residuals[i] > opts.tol * (1.0 + std::abs(rep.values[i])))
      rep.converged = false;
  if (!rep.converged && opts.throw_on_fail)
    fail("eig-nonconvergence",
         "lowest_eigenpairs: " + std::to_string(rep.values.size()) +
             " pairs extracted, residual tolerance not met for all");
  out.basis = store;
  return out;
}

template <LinearOperator Op, class Pre = std::nullptr_t>
EigReport lowest_eigenpairs(const Op& op, int k, const EigOptions& opts = {},
                            const Pre* pre = nullptr) {
  return lowest_eigenpairs_full(op, k, opts, pre).report;
}

// ---------------------------------------------------------------------------
// semigroup action exp(-A t) v via Chebyshev expansion on [0, lambda_max]

struct SemigroupOptions {
  double tol = 1e-8;  // relative to ||v||
  int max_degree = 20000;
  double lambda_max = -1.0;  // upper spectral bound; estimated when <= 0
  std::uint64_t seed = 7;
};

namespace detail {

/// Chebyshev coefficients c_0..c_degree of f on [-1,1], midpoint rule.
inline std::vector<double> chebyshev_coeffs(const std::function<double(double)>& f,
                                            int degree) {
  int M = 64;
  while (M < 2 * (degree + 1)) M *= 2;
  std::vector<double> fx(size_t(M), 0.0);
  for (int j = 0; j < M; j++) fx[size_t(j)] = f(std::cos(M_PI * (j + 0.5) / M));
  std::vector<double> c(size_t(degree) + 1, 0.0);
  for (int kk = 0; kk <= degree; kk++) {
    double s = 0;
    for (int j = 0; j < M; j++)
      s += fx[size_t(j)] * std::cos(kk * M_PI * (j + 0.5) / M);
    c[size_t(kk)] = (kk == 0 ? 1.0 : 2.0) * s / M;
  }
  return c;
}

/// Upper bound for the largest eigenvalue: 40 plain Lanczos steps (tridiagonal
/// only), padded by 5%. Ritz values approach from below; the pad keeps the
/// Chebyshev argument inside the expansion interval.
template <LinearOperator Op>
double estimate_lambda_max(const Op& op, std::uint64_t seed) {
  const index_t n = op.dim();
  const int m = int(std::min<index_t>(40, n));
  SplitMix64 rng(seed);
  std::vector<double> q0(size_t(n), 0.0), q1(size_t(n), 0.0), w(size_t(n), 0.0);
  for (index_t i = 0; i < n; i++) q1[size_t(i)] = rng.next_sym();
  vscale(n, 1.0 / vnorm(n, q1.data()), q1.data());
  std::vector<double> alpha, beta;  // beta[j] links q_j and q_{j+1}
  double beta_prev = 0;
  for (int j = 0; j < m; j++) {
    op.apply(q1.data(), w.data());
    double a = vdot(n, q1.data(), w.data());
    alpha.push_back(a);
    for (index_t i = 0; i < n; i++)
      w[size_t(i)] -= a * q1[size_t(i)] + beta_prev * q0[size_t(i)];
    double bnorm = vnorm(n, w.data());
    if (bnorm < 1e-13) break;
    beta.push_back(bnorm);
    beta_prev = bnorm;
    q0.swap(q1);
    for (index_t i = 0; i < n; i++) q1[size_t(i)] = w[size_t(i)] / bnorm;
  }
  int mm = int(alpha.size());
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(mm, mm);
  for (int i = 0; i < mm; i++) {
    T(i, i) = alpha[size_t(i)];
    if (i + 1 < mm) T(i, i + 1) = T(i + 1, i) = beta[size_t(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(mm - 1) * 1.05 + 1e-12;
}

}  // namespace detail

/// exp(-op t) v for symmetric PSD op. The Chebyshev truncation tail is kept
/// below tol/2, so the result is within tol * ||v|| of the exact action.
template <LinearOperator Op>
std::vector<double> semigroup_apply(const Op& op, double t,
                                    const std::vector<double>& v,
                                    const SemigroupOptions& opts = {},
                                    SolveReport* rep_out = nullptr) {
  require(t >= 0, "bad-argument", "semigroup_apply: t must be >= 0");
  const index_t n = op.dim();
  require(index_t(v.size()) == n, "grid-mismatch",
          "semigroup_apply: vector length != operator dimension");
  if (t == 0) {
    if (rep_out) *rep_out = SolveReport{0, 0.0, 0.0, true};
    return v;
  }
  WallTimer timer;
  double lmax = opts.lambda_max > 0 ? opts.lambda_max
                                    : detail::estimate_lambda_max(op, opts.seed);

  auto f = [&](double x) { return std::exp(-t * lmax * 0.5 * (x + 1.0)); };
  int degree = 32;
  std::vector<double> c;
  while (true) {
    // compute at twice the candidate degree; the upper half certifies the tail
    c = detail::chebyshev_coeffs(f, 2 * degree);
    double tail = 0;
    for (int j = degree + 1; j <= 2 * degree; j++) tail += std::abs(c[size_t(j)]);
    if (tail < 0.5 * opts.tol) {
      c.resize(size_t(degree) + 1);
      break;
    }
    degree *= 2;
    require(degree <= opts.max_degree, "tolerance-not-met",
            "semigroup_apply: Chebyshev degree cap exceeded");
  }
  int deg_eff = int(c.size()) - 1;
  while (deg_eff > 1 &&
         std::abs(c[size_t(deg_eff)]) < 1e-3 * opts.tol / double(deg_eff))
    deg_eff--;

  // forward three-term recurrence in B = (2/lmax) A - I
  std::vector<double> bk(v), bk1(size_t(n), 0.0), tmp(size_t(n), 0.0), acc(size_t(n), 0.0);
  vaxpy(n, c[0], bk.data(), acc.data());
  int applies = 0;
  if (deg_eff >= 1) {
    op.apply(bk.data(), tmp.data());
    applies++;
    for (index_t i = 0; i < n; i++)
      bk1[size_t(i)] = (2.0 / lmax) * tmp[size_t(i)] - bk[size_t(i)];
    vaxpy(n, c[1], bk1.data(), acc.data());
  }
  for (int kk = 2; kk <= deg_eff; kk++) {
    op.apply(bk1.data(), tmp.data());
    applies++;
    for (index_t i = 0; i < n; i++) {
      double next = 2.0 * ((2.0 / lmax) * tmp[size_t(i)] - bk1[size_t(i)]) -
                    bk[size_t(i)];
      bk[size_t(i)] = bk1[size_t(i)];
      bk1[size_t(i)] = next;
    }
    vaxpy(n, c[size_t(kk)], bk1.data(), acc.data());
  }
  if (rep_out) {
    rep_out->iterations = applies;
    rep_out->converged = true;
    rep_out->wall_seconds = timer.seconds();
  }
  return acc;
}

// ---------------------------------------------------------------------------
// dense oracles (Eigen)

namespace dense {

template <LinearOperator Op>
Eigen::MatrixXd densify(const Op& op, index_t limit = 2000) {
  const index_t n = op.dim();
  require(n <= limit, "size-limit",
          "densify: dimension " + std::to_string(n) + " exceeds limit " +
              std::to_string(limit));
  Eigen::MatrixXd A(n, n);
  std::vector<double> e(size_t(n), 0.0), col(size_t(n), 0.0);
  for (index_t j = 0; j < n; j++) {
    e[size_t(j)] = 1.0;
    op.apply(e.data(), col.data());
    e[size_t(j)] = 0.0;
    for (index_t i = 0; i < n; i++) A(i, j) = col[size_t(i)];
  }
  return A;
}

inline double opnorm(const Eigen::MatrixXd& M) {
  if (M.rows() == 0 || M.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  return svd.singularValues()(0);
}

/// Largest singular value of M : (R^n, <.,.>_{w_in}) -> (R^m, <.,.>_{w_out}),
/// i.e. of W_out^{1/2} M W_in^{-1/2} for diagonal weights.
inline double opnorm_weighted(const Eigen::MatrixXd& M,
                              const Eigen::VectorXd& w_out,
                              const Eigen::VectorXd& w_in) {
  require(w_out.size() == M.rows() && w_in.size() == M.cols(), "grid-mismatch",
          "opnorm_weighted: weight sizes");
  Eigen::MatrixXd Mh = w_out.cwiseSqrt().asDiagonal() * M *
                       w_in.cwiseSqrt().cwiseInverse().asDiagonal();
  return opnorm(Mh);
}

/// f(S) for symmetric S via full diagonalization.
inline Eigen::MatrixXd sym_fn(const Eigen::MatrixXd& S,
                              const std::function<double(double)>& f) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
  Eigen::VectorXd d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); i++) d(i) = f(d(i));
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::VectorXd sym_eigenvalues(const Eigen::MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace dense

// ---------------------------------------------------------------------------

/// Hausdorff distance between two finite nonempty sets of reals:
/// max of the two one-sided sup-inf distances.
inline double hausdorff_distance(const std::vector<double>& X,
                                 const std::vector<double>& Y) {
  require(!X.empty() && !Y.empty(), "empty-set",
          "hausdorff_distance: both sets must be nonempty");
  auto one_sided = [](const std::vector<double>& A,
                      const std::vector<double>& B) {
    double sup = 0;
    for (double a : A) {
      double d = std::numeric_limits<double>::infinity();
      for (double b : B) d = std::min(d, std::abs(a - b));
      sup = std::max(sup, d);
    }
    return sup;
  };
  return std::max(one_sided(X, Y), one_sided(Y, X));
}

}  // namespace perfhom
