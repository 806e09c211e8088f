#pragma once

// End-to-end convergence experiments over an epsilon family: the rate
// formula for delta, resolvent / extension discrepancies measured against a
// fixed right-hand-side bank, eigenvalue gaps, semigroup discrepancies, and
// log-log rate fits. The homogenized side is handled exactly by the DST box
// calculus; the perforated side runs DST-preconditioned CG and shift-invert
// block Lanczos, with a four-buffer streaming layout at the largest grids.

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "perfhom/capacity.hpp"
#include "perfhom/closeness.hpp"
#include "perfhom/fastsolve.hpp"
#include "perfhom/geometry.hpp"
#include "perfhom/grid.hpp"
#include "perfhom/linalg.hpp"

namespace perfhom {

// ---------------------------------------------------------------------------

/// The closeness parameter of the rate theory: |cap eps^{-n} - q| plus the
/// dimension branch eps|ln eps| (n=2), eps (n=3), eps^{1-beta} (n=4),
/// max(eps, d/eps) (n>=5), scaled by C.
inline double delta_formula(int n, double epsilon, double d, double cap,
                            double q, double beta = 0.0, double C = 1.0) {
  require(epsilon > 0 && d > 0 && cap >= 0 && q >= 0 && C > 0, "domain-error",
          "delta_formula: positive inputs required");
  double first = std::abs(cap * std::pow(epsilon, -n) - q);
  double branch;
  if (n == 2) {
    branch = epsilon * std::abs(std::log(epsilon));
  } else if (n == 3) {
    branch = epsilon;
  } else if (n == 4) {
    require(beta > 0 && beta < 1, "missing-beta",
            "delta_formula: n=4 requires beta in (0,1)");
    branch = std::pow(epsilon, 1.0 - beta);
  } else {
    branch = std::max(epsilon, d / epsilon);
  }
  return first + C * branch;
}

// ---------------------------------------------------------------------------

struct ExperimentConfig {
  int n = 3;
  std::array<double, kMaxDim> box_min{};
  std::array<double, kMaxDim> box_max{1, 1, 1, 1};
  std::vector<double> eps_list{0.5, 1.0 / 3.0, 0.25};

  // hole rule d = d_c * eps^d_p, overridable per epsilon via d_list
  double d_c = 1.0;
  double d_p = 3.0;
  std::vector<double> d_list;
  double kappa = 0.1;
  bool heuristic_mode = false;  // accept d(eps) that fails the size rule

  bool q_effective = true;  // q = cap(D_eps)/eps^n per record
  double q_fixed = 0.0;

  double h_div = 8.0;  // h = d / h_div, snapped down to divide the box

  double delta_C = 1.0;
  double beta = 0.25;  // used when n = 4

  int bank_random = 12;  // random fields beyond the constant and 7 sines
  std::uint64_t seed = 1;

  std::vector<double> t_list{0.0, 0.1, 1.0};
  int k_eig = 5;

  double cg_tol = 1e-10;
  double eig_tol = 1e-8;
  double sg_tol = 1e-8;  // semigroup accuracy / spectral tail target
  index_t dense_limit = 2000;
  int max_basis = 90;
  std::string scratch_dir = ".";

  bool assert_monotone = false;
  bool assert_slope = false;
  double slope_lo = 0.7, slope_hi = 1.3;

  DomainSpec domain(double eps) const {
    DomainSpec s;
    s.n = n;
    s.box_min = box_min;
    s.box_max = box_max;
    s.epsilon = eps;
    return s;
  }
  double hole_d(size_t i) const {
    if (!d_list.empty()) return d_list[i];
    return d_c * std::pow(eps_list[i], d_p);
  }

  void validate() const {
    require(n >= 2 && n <= 4, "bad-dimension", "ExperimentConfig: n in {2,3,4}");
    require(!eps_list.empty(), "bad-argument", "ExperimentConfig: empty eps list");
    require(d_list.empty() || d_list.size() == eps_list.size(), "bad-argument",
            "ExperimentConfig: d_list must match eps_list");
    require(h_div >= 8.0 - 1e-12, "bad-argument",
            "ExperimentConfig: grid rule must keep h <= d/8");
    if (n == 4)
      require(beta > 0 && beta < 1, "missing-beta",
              "ExperimentConfig: n=4 requires beta in (0,1)");
    for (size_t i = 0; i < eps_list.size(); i++) {
      double eps = eps_list[i], d = hole_d(i);
      require(d > 0 && d < eps, "domain-error",
              "ExperimentConfig: need 0 < d < eps");
      require(d + kappa * eps <= 0.5 * eps + 1e-12, "layout-violation",
              "ExperimentConfig: hole rule violates the security distance "
              "d + kappa*eps <= eps/2");
      if (!heuristic_mode)
        require(check_size_rule(n, eps, d).satisfied, "size-rule",
                "ExperimentConfig: d(eps) fails the smallness rule at eps = " +
                    std::to_string(eps) + " (set heuristic_mode to override)");
    }
  }
};

// ---------------------------------------------------------------------------
// the right-hand-side bank: constant, seven low sine modes, seeded
// counter-hash random fields. Values are pure functions of (seed, index,
// node), so bank vectors are regenerable without being stored.

struct BankSpec {
  enum class Kind { constant, sine, random };
  Kind kind = Kind::constant;
  std::array<int, kMaxDim> mode{};
  int random_id = 0;
};

inline std::vector<BankSpec> make_bank(int n, int n_random) {
  std::vector<BankSpec> bank;
  bank.push_back({BankSpec::Kind::constant, {}, 0});
  static const int modes3[7][3] = {{1, 1, 1}, {2, 1, 1}, {1, 2, 1}, {1, 1, 2},
                                   {2, 2, 1}, {2, 2, 2}, {3, 1, 1}};
  static const int modes2[7][2] = {{1, 1}, {2, 1}, {1, 2}, {2, 2},
                                   {3, 1}, {1, 3}, {3, 3}};
  for (int s = 0; s < 7; s++) {
    BankSpec b;
    b.kind = BankSpec::Kind::sine;
    for (int a = 0; a < n; a++)
      b.mode[size_t(a)] = (n == 2) ? modes2[s][a] : (a < 3 ? modes3[s][a] : 1);
    bank.push_back(b);
  }
  for (int r = 0; r < n_random; r++)
    bank.push_back({BankSpec::Kind::random, {}, r});
  return bank;
}

namespace detail {

struct SineTables {
  std::array<std::vector<double>, kMaxDim> t;
  void build(const BankSpec& spec, const CartesianGrid& g) {
    for (int a = 0; a < g.n; a++) {
      t[size_t(a)].resize(size_t(g.intervals[size_t(a)]) + 1);
      double ext = double(g.intervals[size_t(a)]) * g.h;
      for (index_t i = 0; i <= g.intervals[size_t(a)]; i++)
        t[size_t(a)][size_t(i)] =
            std::sin(M_PI * spec.mode[size_t(a)] * (double(i) * g.h) / ext);
    }
  }
  double at(int n, const index_t* idx) const {
    double v = 1.0;
    for (int a = 0; a < n; a++) v *= t[size_t(a)][size_t(idx[size_t(a)])];
    return v;
  }
};

}  // namespace detail

/// Writes a bank field into the interior of a padded buffer. Nodes where
/// `keep` is zero are written as 0 (restriction by the mask) but still enter
/// the returned full-field square sum; the square sum of the kept part goes
/// to norm2_kept. Pass keep = nullptr to keep everything.
inline double generate_bank_field(const BankSpec& spec, const CartesianGrid& g,
                                  std::uint64_t seed, double* buf,
                                  const std::uint8_t* keep = nullptr,
                                  double* norm2_kept = nullptr) {
  detail::SineTables table;
  if (spec.kind == BankSpec::Kind::sine) table.build(spec, g);
  double n2 = 0, n2k = 0;
  std::uint64_t stream = 0x5eedba5eULL + std::uint64_t(spec.random_id);
  for_each_interior_node(g, [&](index_t flat, const index_t* idx) {
    double v;
    switch (spec.kind) {
      case BankSpec::Kind::constant: v = 1.0; break;
      case BankSpec::Kind::sine: v = table.at(g.n, idx); break;
      default: v = hash_sym(seed, stream, std::uint64_t(flat));
    }
    n2 += v * v;
    if (keep && !keep[flat]) {
      buf[flat] = 0.0;
    } else {
      buf[flat] = v;
      n2k += v * v;
    }
  });
  if (norm2_kept) *norm2_kept = n2k;
  return n2;
}

/// One interior sweep accumulating, for every bank field (restricted by
/// `keep`) and every source buffer, the unweighted dot product. Output is
/// indexed out[s * bank.size() + m].
inline void fused_bank_dots(const CartesianGrid& g,
                            const std::vector<BankSpec>& bank,
                            std::uint64_t seed, const std::uint8_t* keep,
                            const std::vector<const double*>& srcs,
                            std::vector<double>& out) {
  const size_t M = bank.size();
  const size_t S = srcs.size();
  out.assign(S * M, 0.0);
  std::vector<detail::SineTables> tables(M);
  std::vector<std::uint64_t> streams(M, 0);
  for (size_t m = 0; m < M; m++) {
    if (bank[m].kind == BankSpec::Kind::sine) tables[m].build(bank[m], g);
    streams[m] = 0x5eedba5eULL + std::uint64_t(bank[m].random_id);
  }
  std::vector<double> vals(M);
  for_each_interior_node(g, [&](index_t flat, const index_t* idx) {
    if (keep && !keep[flat]) return;
    for (size_t m = 0; m < M; m++) {
      switch (bank[m].kind) {
        case BankSpec::Kind::constant: vals[m] = 1.0; break;
        case BankSpec::Kind::sine: vals[m] = tables[m].at(g.n, idx); break;
        default: vals[m] = hash_sym(seed, streams[m], std::uint64_t(flat));
      }
    }
    for (size_t s = 0; s < S; s++) {
      double sv = srcs[s][flat];
      if (sv == 0.0) continue;
      double* row = out.data() + s * M;
      for (size_t m = 0; m < M; m++) row[m] += sv * vals[m];
    }
  });
}

// ---------------------------------------------------------------------------

struct ConvergenceRecord {
  double eps = 0, d = 0, h = 0;
  index_t holes = 0, unknowns_full = 0, unknowns_perf = 0;
  double cap = 0, q_used = 0, q_mismatch = 0, delta = 0;
  bool resolution_clean = true;
  std::string measurement;  // "dense" or "bank-lower-bound"

  double resolvent_disc = -1, extension_disc = -1;

  std::vector<double> lambda_full, lambda_perf, gap, gap_normalized, mu_gap;

  std::vector<double> t_list, sg_disc, sg_ct, sg_floor;

  nlohmann::json solver_notes = nlohmann::json::object();
};

struct RateFit {
  double slope = 0, intercept = 0, residual = 0;
  int points = 0;
};

/// Least-squares slope of log(value) against log(eps).
inline RateFit rate_fit(const std::vector<double>& eps,
                        const std::vector<double>& val) {
  require(eps.size() == val.size(), "bad-argument", "rate_fit: length mismatch");
  require(eps.size() >= 3, "insufficient-data",
          "rate_fit: need at least 3 clean records");
  RateFit fit;
  fit.points = int(eps.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < eps.size(); i++) {
    require(eps[i] > 0 && val[i] > 0, "domain-error",
            "rate_fit: positive data required");
    double x = std::log(eps[i]), y = std::log(val[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double m = double(eps.size());
  fit.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / m;
  double ss = 0;
  for (size_t i = 0; i < eps.size(); i++)
    ss += sqr(std::log(val[i]) - fit.slope * std::log(eps[i]) - fit.intercept);
  fit.residual = std::sqrt(ss / m);
  return fit;
}

// ---------------------------------------------------------------------------

namespace detail {

/// Per-epsilon problem setup shared by the three experiments.
struct EpsSetup {
  double eps = 0, d = 0, h = 0, q_used = 0, cap = 0, delta = 0;
  CartesianGrid grid;
  HoleLayout layout;
  std::shared_ptr<const NodeMask> full_mask, perf_mask;
  index_t unknowns_full = 0, unknowns_perf = 0;
};

inline EpsSetup make_setup(const ExperimentConfig& cfg, size_t i) {
  EpsSetup s;
  s.eps = cfg.eps_list[i];
  s.d = cfg.hole_d(i);
  auto spec = cfg.domain(s.eps);
  spec.validate();

  double ext0 = spec.extent(0);
  auto m0 = index_t(std::ceil(ext0 / (s.d / cfg.h_div) - 1e-9));
  s.h = ext0 / double(m0);
  s.grid = CartesianGrid(cfg.n, spec.box_min, spec.box_max, s.h);

  s.layout = place_holes(spec, HoleShape::make_ball(s.d), cfg.kappa);
  s.full_mask = NodeMask::full(s.grid);
  s.perf_mask = NodeMask::perforated(s.grid, s.layout);
  for (auto c : s.perf_mask->hole_masked_counts)
    require(c > 0, "resolvability", "experiment: hole masks no node");
  s.unknowns_full = s.full_mask->active_count;
  s.unknowns_perf = s.perf_mask->active_count;
  s.cap = capacity_ball_analytic(cfg.n, s.d);
  s.q_used = cfg.q_effective ? effective_q(cfg.n, s.eps, s.cap) : cfg.q_fixed;
  s.delta = delta_formula(cfg.n, s.eps, s.d, s.cap, s.q_used, cfg.beta,
                          cfg.delta_C);
  return s;
}

inline ConvergenceRecord base_record(const ExperimentConfig& cfg,
                                     const EpsSetup& s) {
  ConvergenceRecord r;
  r.eps = s.eps;
  r.d = s.d;
  r.h = s.h;
  r.holes = s.layout.hole_count();
  r.unknowns_full = s.unknowns_full;
  r.unknowns_perf = s.unknowns_perf;
  r.cap = s.cap;
  r.q_used = s.q_used;
  r.q_mismatch = std::abs(s.cap * std::pow(s.eps, -cfg.n) - s.q_used);
  r.delta = s.delta;
  r.resolution_clean = (s.h <= s.d / 8.0 + 1e-12);
  return r;
}

/// Dense selection matrix J and the active operators of a small instance.
struct DensePieces {
  Eigen::MatrixXd Rf, Rp, J;
};

inline DensePieces dense_pieces(const EpsSetup& s, double q,
                                index_t dense_limit) {
  auto fop = assemble_laplacian(s.full_mask, q);
  auto pop = assemble_laplacian(s.perf_mask, 0.0);
  DensePieces dp;
  Eigen::MatrixXd Af = fop.to_dense_active(dense_limit);
  Eigen::MatrixXd Ap = pop.to_dense_active(dense_limit);
  dp.Rf = dense::sym_fn(Af, [](double l) { return 1.0 / (1.0 + l); });
  dp.Rp = dense::sym_fn(Ap, [](double l) { return 1.0 / (1.0 + l); });
  auto fnodes = fop.active_nodes();
  auto pnodes = pop.active_nodes();
  std::vector<index_t> ord(size_t(s.grid.total_padded()), -1);
  for (size_t j = 0; j < fnodes.size(); j++) ord[size_t(fnodes[j])] = index_t(j);
  dp.J = Eigen::MatrixXd::Zero(index_t(pnodes.size()), index_t(fnodes.size()));
  for (size_t r = 0; r < pnodes.size(); r++)
    dp.J(index_t(r), ord[size_t(pnodes[r])]) = 1.0;
  return dp;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::vector<ConvergenceRecord> records;
  RateFit resolvent_fit;
  bool monotone = true;
  bool slope_ok = true;
  bool asserts_ok = true;
  nlohmann::json sidecar = nlohmann::json::object();
};

namespace detail {
/// Output ordering contract: records by eps descending, whatever the
/// completion order was.
inline void sort_records(std::vector<ConvergenceRecord>& recs) {
  std::stable_sort(recs.begin(), recs.end(),
                   [](const ConvergenceRecord& a, const ConvergenceRecord& b) {
                     return a.eps > b.eps;
                   });
}
}  // namespace detail

/// Resolvent discrepancy ||(A_eps+1)^{-1} J f - J (A+1)^{-1} f|| / ||f|| and
/// the extension counterpart per epsilon: exact dense norms on small
/// instances, otherwise the supremum over the bank (a certified lower bound;
/// the theorem is an upper bound, so passing is genuine and stated as such).
inline ExperimentResult resolvent_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult out;
  for (size_t i = 0; i < cfg.eps_list.size(); i++) {
    auto s = detail::make_setup(cfg, i);
    auto rec = detail::base_record(cfg, s);
    nlohmann::json solves = nlohmann::json::array();

    if (s.unknowns_full <= cfg.dense_limit) {
      auto dp = detail::dense_pieces(s, s.q_used, cfg.dense_limit);
      rec.resolvent_disc = dense::opnorm(dp.Rp * dp.J - dp.J * dp.Rf);
      rec.extension_disc =
          dense::opnorm(dp.J.transpose() * dp.Rp - dp.Rf * dp.J.transpose());
      rec.measurement = "dense";
    } else {
      const index_t N = s.grid.total_padded();
      AlignedBuffer x(N), r(N), p(N), w(N);
      DstBoxSolver dst(s.grid, w.data());
      GridOperator pop = assemble_laplacian(s.perf_mask, 0.0).shifted(1.0);
      DstBoxPrecond pre(s.perf_mask, 1.0 + s.q_used);  // binds to w lazily

      auto bank = make_bank(cfg.n, cfg.bank_random);
      const auto& act = s.perf_mask->active;
      const double q = s.q_used;
      double worst_res = 0, worst_ext = 0;
      for (const auto& bs : bank) {
        double jf2 = 0;
        double f2 = generate_bank_field(bs, s.grid, cfg.seed, r.data(),
                                        act.data(), &jf2);
        auto srep = cg_solve_ws(pop, r.data(), x.data(), p.data(), w.data(),
                                {cfg.cg_tol, 100000}, &pre);
        solves.push_back({{"iterations", srep.iterations},
                          {"rel_residual", srep.rel_residual},
                          {"seconds", srep.wall_seconds}});

        // homogenized side, exact: u = (A+1)^{-1} f
        generate_bank_field(bs, s.grid, cfg.seed, w.data());
        dst.apply_spectral_inplace([q](double lam) { return 1.0 / (lam + q + 1.0); });
        double diff2 = 0;
        const double* xv = x.data();
        const double* wv = w.data();
        for (index_t j = 0; j < N; j++)
          if (act[size_t(j)]) diff2 += sqr(wv[j] - xv[j]);
        worst_res = std::max(worst_res, std::sqrt(diff2 / f2));

        // extension side: v = (A+1)^{-1} J' J f against J' u_eps
        generate_bank_field(bs, s.grid, cfg.seed, w.data(), act.data());
        dst.apply_spectral_inplace([q](double lam) { return 1.0 / (lam + q + 1.0); });
        double diff2e = 0;
        for (index_t j = 0; j < N; j++) diff2e += sqr(wv[j] - xv[j]);
        worst_ext = std::max(worst_ext, std::sqrt(diff2e / jf2));
      }
      rec.resolvent_disc = worst_res;
      rec.extension_disc = worst_ext;
      rec.measurement = "bank-lower-bound";
    }
    rec.solver_notes["solves"] = solves;
    out.records.push_back(std::move(rec));
  }

  detail::sort_records(out.records);

  // trend checks over clean records
  std::vector<double> eps, val;
  for (auto& r : out.records)
    if (r.resolution_clean && r.resolvent_disc > 0) {
      eps.push_back(r.eps);
      val.push_back(r.resolvent_disc);
    }
  out.monotone = true;
  for (size_t i = 1; i < out.records.size(); i++)
    if (out.records[i].resolvent_disc > out.records[i - 1].resolvent_disc)
      out.monotone = false;  // eps_list is descending by convention
  if (eps.size() >= 3) out.resolvent_fit = rate_fit(eps, val);
  out.slope_ok = !cfg.assert_slope ||
                 (out.resolvent_fit.points >= 3 &&
                  out.resolvent_fit.slope >= cfg.slope_lo &&
                  out.resolvent_fit.slope <= cfg.slope_hi);
  out.asserts_ok = (!cfg.assert_monotone || out.monotone) && out.slope_ok;
  return out;
}

// ---------------------------------------------------------------------------

/// FD eigenvalues of the unperforated box operator S + q: the k smallest
/// mode sums, residual-certified through one stencil application per pair.
inline EigReport box_eigenpairs(const CartesianGrid& g, double q, int k) {
  DstBoxSolver dst(g);
  struct Mode {
    double lam;
    std::array<index_t, kMaxDim> k;
  };
  std::vector<Mode> modes;
  index_t cap_per_axis = 1;
  while (std::pow(double(cap_per_axis), g.n) < 4.0 * k + 8) cap_per_axis++;
  std::array<index_t, kMaxDim> idx{};
  for (int a = 0; a < g.n; a++) idx[size_t(a)] = 1;
  while (true) {
    bool ok = true;
    for (int a = 0; a < g.n; a++)
      if (idx[size_t(a)] > std::min(cap_per_axis, g.intervals[size_t(a)] - 1))
        ok = false;
    if (ok) modes.push_back({dst.mode_lambda(idx) + q, idx});
    int a = 0;
    while (a < g.n) {
      if (++idx[size_t(a)] <= std::min(cap_per_axis, g.intervals[size_t(a)] - 1))
        break;
      idx[size_t(a)] = 1;
      a++;
    }
    if (a >= g.n) break;
  }
  std::sort(modes.begin(), modes.end(),
            [](const Mode& a, const Mode& b) { return a.lam < b.lam; });
  require(index_t(modes.size()) >= k, "bad-argument",
          "box_eigenpairs: not enough modes enumerated");

  EigReport rep;
  rep.k_requested = k;
  auto mask = NodeMask::full(g);
  GridOperator op(mask, q);
  GridFunction v(mask), Av(mask);
  for (int j = 0; j < k; j++) {
    const auto& m = modes[size_t(j)];
    v.fill([&](const double* x) {
      double val = 1.0;
      for (int a = 0; a < g.n; a++) {
        double ext = double(g.intervals[size_t(a)]) * g.h;
        val *= std::sin(M_PI * double(m.k[size_t(a)]) *
                        (x[a] - g.origin[size_t(a)]) / ext);
      }
      return val;
    });
    op.apply(v, Av);
    double nv = v.norm();
    double res = 0;
    const auto& vv = v.raw();
    const auto& av = Av.raw();
    for (size_t t = 0; t < vv.size(); t++) res += sqr(av[t] - m.lam * vv[t]);
    res = std::sqrt(res * g.weight()) / nv;
    rep.values.push_back(m.lam);
    rep.residuals.push_back(res);
    rep.mu.push_back(1.0 / (1.0 + m.lam));
    rep.op_applies++;
  }
  rep.converged = true;
  return rep;
}

/// Eigenvalue gaps |lambda_{k,eps} - lambda_k|, their normalized form
/// gap / ((lambda_eps+1)(lambda+1) delta), and the shift-inverted gaps
/// |mu_eps - mu|.
inline ExperimentResult eigenvalue_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  require(cfg.k_eig >= 1 && cfg.k_eig <= 10, "bad-argument",
          "eigenvalue_experiment: k <= 10");
  ExperimentResult out;
  for (size_t i = 0; i < cfg.eps_list.size(); i++) {
    auto s = detail::make_setup(cfg, i);
    auto rec = detail::base_record(cfg, s);

    EigReport full = box_eigenpairs(s.grid, s.q_used, cfg.k_eig);

    EigReport perf;
    if (s.layout.hole_count() == 0) {
      perf = box_eigenpairs(s.grid, 0.0, cfg.k_eig);
      rec.measurement = "box-closed-form";
    } else {
      GridOperator pop = assemble_laplacian(s.perf_mask, 0.0);
      DstBoxPrecond pre(s.perf_mask, 1.0 + s.q_used);
      EigOptions eo;
      eo.tol = cfg.eig_tol;
      eo.dense_limit = 0;  // padded layout: always take the projected path
      eo.block = 3;
      eo.max_basis = cfg.max_basis;
      eo.seed = cfg.seed;
      eo.cg_tol = std::min(cfg.cg_tol, 1e-11);
      eo.disk_path = cfg.scratch_dir + "/lanczos_basis_eig.bin";
      perf = lowest_eigenpairs(pop, cfg.k_eig, eo, &pre);
      rec.measurement = "shift-invert-lanczos";
    }
    for (int k = 0; k < cfg.k_eig; k++) {
      double lf = full.values[size_t(k)];
      double lp = perf.values[size_t(k)];
      rec.lambda_full.push_back(lf);
      rec.lambda_perf.push_back(lp);
      double gap = std::abs(lp - lf);
      rec.gap.push_back(gap);
      rec.gap_normalized.push_back(gap / ((lp + 1.0) * (lf + 1.0) * s.delta));
      rec.mu_gap.push_back(std::abs(1.0 / (1.0 + lp) - 1.0 / (1.0 + lf)));
    }
    rec.solver_notes["full_residuals"] = full.residuals;
    rec.solver_notes["perf_residuals"] = perf.residuals;
    out.records.push_back(std::move(rec));
  }
  detail::sort_records(out.records);
  return out;
}

// ---------------------------------------------------------------------------

/// Semigroup discrepancies || exp(-A_eps t) u - J exp(-A t) J' u || / ||u||
/// for u = J f over the bank, with the homogenized side exact (DST) and the
/// perforated side evaluated in a truncated spectral basis with certified
/// tail e^{-Lambda t} (reported as sg_floor).
inline ExperimentResult semigroup_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  require(!cfg.t_list.empty(), "bad-argument", "semigroup_experiment: empty t list");
  ExperimentResult out;
  double t_min_pos = 0;
  for (double t : cfg.t_list)
    if (t > 0 && (t_min_pos == 0 || t < t_min_pos)) t_min_pos = t;

  for (size_t i = 0; i < cfg.eps_list.size(); i++) {
    auto s = detail::make_setup(cfg, i);
    auto rec = detail::base_record(cfg, s);
    rec.t_list = cfg.t_list;
    const index_t N = s.grid.total_padded();
    auto bank = make_bank(cfg.n, cfg.bank_random);
    const auto& act = s.perf_mask->active;
    const double q = s.q_used;

    if (s.layout.hole_count() == 0) {
      // no holes: both semigroups act on the same box; the discrepancy is
      // exactly || (e^{-S t} - e^{-(S+q) t}) u || / ||u||, one DST filter
      rec.measurement = "box-exact";
      AlignedBuffer w(N);
      DstBoxSolver dst(s.grid, w.data());
      for (double t : cfg.t_list) {
        if (t == 0) {
          rec.sg_disc.push_back(0.0);
          rec.sg_ct.push_back(0.0);
          rec.sg_floor.push_back(0.0);
          continue;
        }
        double worst = 0;
        for (const auto& bs : bank) {
          double u2 = 0;
          generate_bank_field(bs, s.grid, cfg.seed, w.data(), act.data(), &u2);
          dst.apply_spectral_inplace([t, q](double lam) {
            return std::exp(-lam * t) * (1.0 - std::exp(-q * t));
          });
          double diff2 = 0;
          for (index_t j = 0; j < N; j++) diff2 += sqr(w.data()[j]);
          worst = std::max(worst, std::sqrt(diff2 / u2));
        }
        rec.sg_disc.push_back(worst);
        rec.sg_ct.push_back(worst / s.delta);
        rec.sg_floor.push_back(0.0);
      }
      out.records.push_back(std::move(rec));
      continue;
    }

    // perforated side: truncated spectral basis up to Lambda
    rec.measurement = "spectral-bank";
    double lambda_cut = t_min_pos > 0
                            ? std::log(1.0 / cfg.sg_tol) / t_min_pos
                            : 0.0;
    GridOperator pop = assemble_laplacian(s.perf_mask, 0.0);
    DstBoxPrecond pre(s.perf_mask, 1.0 + q);
    EigOptions eo;
    eo.tol = cfg.eig_tol;
    eo.dense_limit = 0;
    eo.block = 3;
    eo.max_basis = cfg.max_basis;
    eo.seed = cfg.seed;
    eo.cg_tol = std::min(cfg.cg_tol, 1e-11);
    eo.lambda_cutoff = lambda_cut;
    eo.disk_path = cfg.scratch_dir + "/lanczos_basis_sg.bin";
    auto lz = lowest_eigenpairs_full(pop, 1, eo, &pre);
    const auto& lam = lz.report.values;
    const int npairs = int(lam.size());
    const int nbasis = int(lz.ritz.rows());
    double lambda_tail = lam.empty() ? lambda_cut
                                     : std::max(lam.back(), lambda_cut);
    rec.solver_notes["spectral_pairs"] = lam;
    rec.solver_notes["spectral_residuals"] = lz.report.residuals;

    const size_t M = bank.size();
    const size_t T = cfg.t_list.size();
    std::vector<size_t> pos_t;  // indices of positive times
    for (size_t tt = 0; tt < T; tt++)
      if (cfg.t_list[tt] > 0) pos_t.push_back(tt);

    // c(j, m) = (v_j, J u_m); d(j, m, tt) = (e^{-A t} J' v_j, J' u_m)
    std::vector<double> cjm(size_t(nbasis) * M, 0.0);
    std::vector<double> djmt(size_t(nbasis) * M * T, 0.0);
    {
      AlignedBuffer vj(N), w(N);
      std::vector<AlignedBuffer> img;
      for (size_t p = 0; p + 1 < pos_t.size(); p++) img.emplace_back(N);
      DstBoxSolver dst(s.grid, w.data());
      std::vector<double> dots;
      for (int j = 0; j < nbasis; j++) {
        lz.basis->read(j, vj.data());
        // heat images of v_j for each positive t; the last one stays in w
        std::vector<const double*> srcs{vj.data()};
        for (size_t p = 0; p < pos_t.size(); p++) {
          double t = cfg.t_list[pos_t[p]];
          std::memcpy(w.data(), vj.data(), sizeof(double) * size_t(N));
          dst.apply_spectral_inplace(
              [t, q](double lamx) { return std::exp(-(lamx + q) * t); });
          if (p + 1 < pos_t.size()) {
            std::memcpy(img[p].data(), w.data(), sizeof(double) * size_t(N));
            srcs.push_back(img[p].data());
          } else {
            srcs.push_back(w.data());
          }
        }
        fused_bank_dots(s.grid, bank, cfg.seed, act.data(), srcs, dots);
        for (size_t m = 0; m < M; m++) {
          cjm[size_t(j) * M + m] = dots[m];
          for (size_t p = 0; p < pos_t.size(); p++)
            djmt[(size_t(j) * M + m) * T + pos_t[p]] = dots[(p + 1) * M + m];
        }
      }
    }

    // ||w_mt||^2 and ||u_m||^2
    std::vector<double> u2(M, 0.0), w2(M * T, 0.0);
    {
      AlignedBuffer w(N);
      DstBoxSolver dst(s.grid, w.data());
      for (size_t m = 0; m < M; m++) {
        for (size_t tt = 0; tt < T; tt++) {
          double t = cfg.t_list[tt];
          generate_bank_field(bank[m], s.grid, cfg.seed, w.data(), act.data(),
                              &u2[m]);
          if (t > 0)
            dst.apply_spectral_inplace(
                [t, q](double lamx) { return std::exp(-(lamx + q) * t); });
          double acc = 0;
          for_each_interior_node(s.grid, [&](index_t flat, const index_t*) {
            if (act[size_t(flat)]) acc += sqr(w.data()[flat]);
          });
          w2[m * T + tt] = acc;
        }
      }
    }

    // rotate to Ritz coordinates and assemble the discrepancies
    for (size_t tt = 0; tt < T; tt++) {
      double t = cfg.t_list[tt];
      if (t == 0) {
        rec.sg_disc.push_back(0.0);  // J J' = Id on the perforated space
        rec.sg_ct.push_back(0.0);
        rec.sg_floor.push_back(0.0);
        continue;
      }
      double worst = 0;
      double floor_t = std::exp(-lambda_tail * t);
      for (size_t m = 0; m < M; m++) {
        double term = w2[m * T + tt];
        for (int p = 0; p < npairs; p++) {
          double cp = 0, dp = 0;
          for (int j = 0; j < nbasis; j++) {
            cp += lz.ritz(j, p) * cjm[size_t(j) * M + m];
            dp += lz.ritz(j, p) * djmt[(size_t(j) * M + m) * T + tt];
          }
          double e = std::exp(-lam[size_t(p)] * t);
          term += e * e * cp * cp - 2.0 * e * cp * dp;
        }
        term = std::max(term, 0.0);
        worst = std::max(worst, std::sqrt(term / u2[m]));
      }
      rec.sg_disc.push_back(worst);
      rec.sg_ct.push_back(worst / s.delta);
      rec.sg_floor.push_back(floor_t);
    }
    out.records.push_back(std::move(rec));
  }
  detail::sort_records(out.records);
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission (17 significant digits; byte-identical across reruns)

namespace detail {
inline void csv_num(std::ostringstream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}
}  // namespace detail

inline std::string converge_csv(const ExperimentResult& res) {
  std::ostringstream os;
  os << "eps,d,h,holes,unknowns_full,unknowns_perf,cap,q_used,q_mismatch,"
        "delta,resolvent_disc,extension_disc,resolution_clean,measurement\n";
  for (const auto& r : res.records) {
    detail::csv_num(os, r.eps); os << ',';
    detail::csv_num(os, r.d); os << ',';
    detail::csv_num(os, r.h); os << ',';
    os << r.holes << ',' << r.unknowns_full << ',' << r.unknowns_perf << ',';
    detail::csv_num(os, r.cap); os << ',';
    detail::csv_num(os, r.q_used); os << ',';
    detail::csv_num(os, r.q_mismatch); os << ',';
    detail::csv_num(os, r.delta); os << ',';
    detail::csv_num(os, r.resolvent_disc); os << ',';
    detail::csv_num(os, r.extension_disc); os << ',';
    os << (r.resolution_clean ? 1 : 0) << ',' << r.measurement << '\n';
  }
  return os.str();
}

inline std::string eigen_csv(const ExperimentResult& res) {
  std::ostringstream os;
  os << "eps,d,h,delta,k,lambda_full,lambda_perf,gap,gap_normalized,mu_gap\n";
  for (const auto& r : res.records)
    for (size_t k = 0; k < r.lambda_full.size(); k++) {
      detail::csv_num(os, r.eps); os << ',';
      detail::csv_num(os, r.d); os << ',';
      detail::csv_num(os, r.h); os << ',';
      detail::csv_num(os, r.delta); os << ',';
      os << (k + 1) << ',';
      detail::csv_num(os, r.lambda_full[k]); os << ',';
      detail::csv_num(os, r.lambda_perf[k]); os << ',';
      detail::csv_num(os, r.gap[k]); os << ',';
      detail::csv_num(os, r.gap_normalized[k]); os << ',';
      detail::csv_num(os, r.mu_gap[k]); os << '\n';
    }
  return os.str();
}

inline std::string semigroup_csv(const ExperimentResult& res) {
  std::ostringstream os;
  os << "eps,d,h,delta,t,sg_disc,sg_ct,sg_floor,measurement\n";
  for (const auto& r : res.records)
    for (size_t tt = 0; tt < r.t_list.size(); tt++) {
      detail::csv_num(os, r.eps); os << ',';
      detail::csv_num(os, r.d); os << ',';
      detail::csv_num(os, r.h); os << ',';
      detail::csv_num(os, r.delta); os << ',';
      detail::csv_num(os, r.t_list[tt]); os << ',';
      detail::csv_num(os, r.sg_disc[tt]); os << ',';
      detail::csv_num(os, r.sg_ct[tt]); os << ',';
      detail::csv_num(os, r.sg_floor[tt]); os << ',';
      os << r.measurement << '\n';
    }
  return os.str();
}

}  // namespace perfhom
