#pragma once

// The quantitative closeness framework: two weighted Hilbert spaces, PSD
// forms, the identification quadruple (J, J', J1, J1'), the eight best
// constants whose maximum is delta, and the dense verification of the
// resolvent / functional-calculus / spectral consequences. Everything here
// is dense and exact (SVD-based); large-grid experiments use the rate
// formula instead of measured constants.

#include <Eigen/Dense>
#include <optional>
#include <variant>

#include "json.hpp"
#include "perfhom/capacity.hpp"
#include "perfhom/grid.hpp"
#include "perfhom/linalg.hpp"

namespace perfhom {

/// Two spaces with diagonal inner-product weights and W-self-adjoint PSD
/// form matrices (A includes the potential q on the full side).
struct FormPair {
  Eigen::VectorXd w_full, w_perf;  // inner-product weights per coordinate
  Eigen::MatrixXd A_full, A_perf;  // operator representations of the forms
  int k = 2;                       // order of the C5 scale

  index_t dim_full() const { return w_full.size(); }
  index_t dim_perf() const { return w_perf.size(); }

  /// Conjugation to the "hat" picture W^{1/2} . W^{-1/2} where the forms are
  /// plainly symmetric and weighted norms become Euclidean.
  Eigen::MatrixXd hat_full() const {
    return w_full.cwiseSqrt().asDiagonal() * A_full *
           w_full.cwiseSqrt().cwiseInverse().asDiagonal();
  }
  Eigen::MatrixXd hat_perf() const {
    return w_perf.cwiseSqrt().asDiagonal() * A_perf *
           w_perf.cwiseSqrt().cwiseInverse().asDiagonal();
  }

  void validate(double tol = 1e-12) const {
    require(A_full.rows() == w_full.size() && A_perf.rows() == w_perf.size(),
            "grid-mismatch", "FormPair: weight/form dimensions");
    auto asym = [](const Eigen::MatrixXd& S) {
      double n = S.norm();
      return n == 0 ? 0.0 : (S - S.transpose()).norm() / n;
    };
    require(asym(hat_full()) <= tol * 1e3 && asym(hat_perf()) <= tol * 1e3,
            "non-self-adjoint", "FormPair: form not W-symmetric");
  }
};

/// Identification maps in raw (unweighted) coordinates.
struct IdentificationSet {
  Eigen::MatrixXd J;    // full -> perf
  Eigen::MatrixXd Jp;   // perf -> full
  Eigen::MatrixXd J1;   // full -> perf, form-domain corrected
  Eigen::MatrixXd J1p;  // perf -> full
  int k = 2;
};

struct ClosenessConstants {
  double c1a = 0, c1b = 0, c2 = 0, c3a = 0, c3b = 0, c4a = 0, c4b = 0, c5 = 0;
  double delta = 0;
  int k = 2;

  std::array<double, 8> all() const {
    return {c1a, c1b, c2, c3a, c3b, c4a, c4b, c5};
  }
};

namespace detail {

struct HatSet {
  Eigen::MatrixXd J, Jp, J1, J1p;   // hatted maps
  Eigen::MatrixXd Af, Ap;           // hatted forms (symmetric)
  Eigen::MatrixXd Rf, Rp;           // (A + I)^{-1}
  Eigen::MatrixXd Sf_half, Sp_half; // (A + I)^{-1/2}
  Eigen::MatrixXd Sf_k;             // (A_full + I)^{-k/2}
};

inline HatSet make_hats(const FormPair& pair, const IdentificationSet& ids) {
  HatSet h;
  auto wfs = pair.w_full.cwiseSqrt();
  auto wps = pair.w_perf.cwiseSqrt();
  h.J = wps.asDiagonal() * ids.J * wfs.cwiseInverse().asDiagonal();
  h.Jp = wfs.asDiagonal() * ids.Jp * wps.cwiseInverse().asDiagonal();
  h.J1 = wps.asDiagonal() * ids.J1 * wfs.cwiseInverse().asDiagonal();
  h.J1p = wfs.asDiagonal() * ids.J1p * wps.cwiseInverse().asDiagonal();
  h.Af = pair.hat_full();
  h.Ap = pair.hat_perf();
  h.Rf = dense::sym_fn(h.Af, [](double l) { return 1.0 / (1.0 + l); });
  h.Rp = dense::sym_fn(h.Ap, [](double l) { return 1.0 / (1.0 + l); });
  h.Sf_half = dense::sym_fn(h.Af, [](double l) { return 1.0 / std::sqrt(1.0 + l); });
  h.Sp_half = dense::sym_fn(h.Ap, [](double l) { return 1.0 / std::sqrt(1.0 + l); });
  double kk = ids.k;
  h.Sf_k = dense::sym_fn(h.Af, [kk](double l) { return std::pow(1.0 + l, -kk / 2.0); });
  return h;
}

}  // namespace detail

/// Exact best constants of the eight closeness conditions, as weighted
/// operator norms (dense SVD).
inline ClosenessConstants condition_constants(const FormPair& pair,
                                              const IdentificationSet& ids) {
  pair.validate();
  auto h = detail::make_hats(pair, ids);
  ClosenessConstants c;
  c.k = ids.k;
  c.c1a = dense::opnorm((h.J - h.J1) * h.Sf_half);
  c.c1b = dense::opnorm((h.Jp - h.J1p) * h.Sp_half);
  c.c2 = dense::opnorm(h.J.transpose() - h.Jp);
  c.c3a = std::max(0.0, dense::opnorm(h.J) - 1.0);
  c.c3b = std::max(0.0, dense::opnorm(h.Jp) - 1.0);
  Eigen::MatrixXd If = Eigen::MatrixXd::Identity(pair.dim_full(), pair.dim_full());
  Eigen::MatrixXd Ip = Eigen::MatrixXd::Identity(pair.dim_perf(), pair.dim_perf());
  c.c4a = dense::opnorm((If - h.Jp * h.J) * h.Sf_half);
  c.c4b = dense::opnorm((Ip - h.J * h.Jp) * h.Sp_half);
  c.c5 = dense::opnorm(h.Sf_k * (h.J1.transpose() * h.Ap - h.Af * h.J1p) *
                       h.Sp_half);
  c.delta = 0;
  for (double v : c.all()) c.delta = std::max(c.delta, v);
  return c;
}

/// Maximizer pair (f in the full space, u in the perforated space, raw
/// coordinates) witnessing the best constant of one condition; used by the
/// certification tests. For the single-argument conditions the other vector
/// is empty.
struct ConditionWitness {
  Eigen::VectorXd f, u;
};

inline ConditionWitness condition_witness(const FormPair& pair,
                                          const IdentificationSet& ids,
                                          const std::string& which) {
  auto h = detail::make_hats(pair, ids);
  auto unhat_f = [&](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(pair.w_full.cwiseSqrt().cwiseInverse().asDiagonal() * v);
  };
  auto unhat_u = [&](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(pair.w_perf.cwiseSqrt().cwiseInverse().asDiagonal() * v);
  };
  ConditionWitness w;
  auto top_pair = [&](const Eigen::MatrixXd& M, Eigen::VectorXd& in,
                      Eigen::VectorXd& out) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    in = svd.matrixV().col(0);
    out = svd.matrixU().col(0);
  };
  Eigen::VectorXd in, out;
  if (which == "c1a") {
    top_pair((h.J - h.J1) * h.Sf_half, in, out);
    w.f = unhat_f(h.Sf_half * in);
  } else if (which == "c1b") {
    top_pair((h.Jp - h.J1p) * h.Sp_half, in, out);
    w.u = unhat_u(h.Sp_half * in);
  } else if (which == "c2") {
    top_pair(h.J.transpose() - h.Jp, in, out);
    w.u = unhat_u(in);
    w.f = unhat_f(out);
  } else if (which == "c3a") {
    top_pair(h.J, in, out);
    w.f = unhat_f(in);
  } else if (which == "c3b") {
    top_pair(h.Jp, in, out);
    w.u = unhat_u(in);
  } else if (which == "c4a") {
    Eigen::MatrixXd If = Eigen::MatrixXd::Identity(pair.dim_full(), pair.dim_full());
    top_pair((If - h.Jp * h.J) * h.Sf_half, in, out);
    w.f = unhat_f(h.Sf_half * in);
  } else if (which == "c4b") {
    Eigen::MatrixXd Ip = Eigen::MatrixXd::Identity(pair.dim_perf(), pair.dim_perf());
    top_pair((Ip - h.J * h.Jp) * h.Sp_half, in, out);
    w.u = unhat_u(h.Sp_half * in);
  } else if (which == "c5") {
    top_pair(h.Sf_k * (h.J1.transpose() * h.Ap - h.Af * h.J1p) * h.Sp_half, in,
             out);
    w.u = unhat_u(h.Sp_half * in);
    w.f = unhat_f(h.Sf_k * out);
  } else {
    fail("bad-argument", "condition_witness: unknown condition " + which);
  }
  return w;
}

// ---------------------------------------------------------------------------

struct ClosenessReport {
  ClosenessConstants constants;
  double lhs_resolvent = 0;  // ||R_perf J - J R_full||
  double lhs_extension = 0;  // ||J' R_perf - R_full J'||
  double lhs_sandwich = 0;   // ||J' R_perf J - R_full||
  double lhs_reverse = 0;    // ||R_perf - J R_full J'||
  bool resolvent_ok = false, extension_ok = false, sandwich_ok = false,
       reverse_ok = false;
  std::array<double, 4> ratios{};  // lhs / delta (0 when delta = 0)
};

/// Dense evaluation of the four resolvent-difference norms and the
/// 4/6/9/13 delta bounds (1e-9 additive numerical slack).
inline ClosenessReport verify_resolvent_bound(const FormPair& pair,
                                              const IdentificationSet& ids,
                                              const ClosenessConstants& c) {
  auto h = detail::make_hats(pair, ids);
  ClosenessReport rep;
  rep.constants = c;
  rep.lhs_resolvent = dense::opnorm(h.Rp * h.J - h.J * h.Rf);
  rep.lhs_extension = dense::opnorm(h.Jp * h.Rp - h.Rf * h.Jp);
  rep.lhs_sandwich = dense::opnorm(h.Jp * h.Rp * h.J - h.Rf);
  rep.lhs_reverse = dense::opnorm(h.Rp - h.J * h.Rf * h.Jp);
  const double slack = 1e-9;
  rep.resolvent_ok = rep.lhs_resolvent <= 4 * c.delta + slack;
  rep.extension_ok = rep.lhs_extension <= 6 * c.delta + slack;
  rep.sandwich_ok = rep.lhs_sandwich <= 9 * c.delta + slack;
  rep.reverse_ok = rep.lhs_reverse <= 13 * c.delta + slack;
  double den = c.delta > 0 ? c.delta : 0;
  rep.ratios = {den ? rep.lhs_resolvent / den : 0.0,
                den ? rep.lhs_extension / den : 0.0,
                den ? rep.lhs_sandwich / den : 0.0,
                den ? rep.lhs_reverse / den : 0.0};
  return rep;
}

inline void to_json(nlohmann::json& j, const ClosenessReport& r) {
  j = nlohmann::json{
      {"constants",
       {{"c1a", r.constants.c1a},
        {"c1b", r.constants.c1b},
        {"c2", r.constants.c2},
        {"c3a", r.constants.c3a},
        {"c3b", r.constants.c3b},
        {"c4a", r.constants.c4a},
        {"c4b", r.constants.c4b},
        {"c5", r.constants.c5},
        {"delta", r.constants.delta},
        {"k", r.constants.k}}},
      {"lhs_resolvent", r.lhs_resolvent},
      {"lhs_extension", r.lhs_extension},
      {"lhs_sandwich", r.lhs_sandwich},
      {"lhs_reverse", r.lhs_reverse},
      {"bound_ok",
       {{"resolvent", r.resolvent_ok},
        {"extension", r.extension_ok},
        {"sandwich", r.sandwich_ok},
        {"reverse", r.reverse_ok}}},
      {"ratios", r.ratios}};
}

// ---------------------------------------------------------------------------
// functional calculus and spectral consequences

/// psi descriptors admitted by the functional-calculus verification.
struct HeatKernel {
  double t = 1.0;
};
struct SpectralIndicator {
  double alpha = 0.0, beta = 1.0;
};
using PsiDescriptor = std::variant<HeatKernel, SpectralIndicator>;

struct CalculusReport {
  double lhs_intertwine = 0;  // ||psi(A_perf) J - J psi(A_full)||
  double lhs_reverse = 0;     // ||psi(A_perf) - J psi(A_full) J'||
  double ratio_intertwine = 0, ratio_reverse = 0;  // lhs / delta
  index_t rank_full = -1, rank_perf = -1;          // indicator only
};

inline CalculusReport verify_functional_calculus(const FormPair& pair,
                                                 const IdentificationSet& ids,
                                                 const ClosenessConstants& c,
                                                 const PsiDescriptor& psi) {
  auto h = detail::make_hats(pair, ids);
  std::function<double(double)> fn;
  CalculusReport rep;
  if (std::holds_alternative<HeatKernel>(psi)) {
    double t = std::get<HeatKernel>(psi).t;
    require(t > 0, "bad-argument", "verify_functional_calculus: t > 0");
    fn = [t](double l) { return std::exp(-l * t); };
  } else {
    auto ind = std::get<SpectralIndicator>(psi);
    Eigen::VectorXd ef = dense::sym_eigenvalues(h.Af);
    Eigen::VectorXd ep = dense::sym_eigenvalues(h.Ap);
    for (auto& ev : {ef, ep})
      for (Eigen::Index i = 0; i < ev.size(); i++)
        require(std::abs(ev(i) - ind.alpha) > 1e-6 &&
                    std::abs(ev(i) - ind.beta) > 1e-6,
                "spectral-gap",
                "verify_functional_calculus: interval endpoint within 1e-6 "
                "of a spectrum");
    double a = ind.alpha, b = ind.beta;
    fn = [a, b](double l) { return (l > a && l < b) ? 1.0 : 0.0; };
  }
  Eigen::MatrixXd Pf = dense::sym_fn(h.Af, fn);
  Eigen::MatrixXd Pp = dense::sym_fn(h.Ap, fn);
  rep.lhs_intertwine = dense::opnorm(Pp * h.J - h.J * Pf);
  rep.lhs_reverse = dense::opnorm(Pp - h.J * Pf * h.Jp);
  if (std::holds_alternative<SpectralIndicator>(psi)) {
    rep.rank_full = index_t(std::llround(Pf.trace()));
    rep.rank_perf = index_t(std::llround(Pp.trace()));
  }
  if (c.delta > 0) {
    rep.ratio_intertwine = rep.lhs_intertwine / c.delta;
    rep.ratio_reverse = rep.lhs_reverse / c.delta;
  }
  return rep;
}

struct HausdorffReport {
  double distance = 0;  // between 1/(1 + spec(A_full)) and 1/(1 + spec(A_perf))
};

inline HausdorffReport verify_spectral_hausdorff(const FormPair& pair) {
  Eigen::VectorXd ef = dense::sym_eigenvalues(pair.hat_full());
  Eigen::VectorXd ep = dense::sym_eigenvalues(pair.hat_perf());
  std::vector<double> tf, tp;
  for (Eigen::Index i = 0; i < ef.size(); i++) tf.push_back(1.0 / (1.0 + ef(i)));
  for (Eigen::Index i = 0; i < ep.size(); i++) tp.push_back(1.0 / (1.0 + ep(i)));
  return {hausdorff_distance(tf, tp)};
}

// ---------------------------------------------------------------------------
// instance generators

/// Random dense instance: random weights in [1/2, 2], random PSD hatted
/// forms, random O(1) maps. The theorems hold for arbitrary maps once delta
/// is the computed maximum, which is what the brute-force suite exercises.
inline std::pair<FormPair, IdentificationSet> random_instance(
    std::uint64_t seed, index_t dim_full, index_t dim_perf, int k = 2) {
  SplitMix64 rng(seed);
  auto rand_mat = [&](index_t r, index_t c, double scale) {
    Eigen::MatrixXd M(r, c);
    for (index_t i = 0; i < r; i++)
      for (index_t j = 0; j < c; j++) M(i, j) = scale * rng.next_normal();
    return M;
  };
  FormPair pair;
  pair.k = k;
  pair.w_full = Eigen::VectorXd(dim_full);
  pair.w_perf = Eigen::VectorXd(dim_perf);
  for (index_t i = 0; i < dim_full; i++) pair.w_full(i) = 0.5 + 1.5 * rng.next_unit();
  for (index_t i = 0; i < dim_perf; i++) pair.w_perf(i) = 0.5 + 1.5 * rng.next_unit();
  Eigen::MatrixXd Gf = rand_mat(dim_full, dim_full, 1.0);
  Eigen::MatrixXd Gp = rand_mat(dim_perf, dim_perf, 1.0);
  Eigen::MatrixXd Af_hat = Gf * Gf.transpose() / double(dim_full);
  Eigen::MatrixXd Ap_hat = Gp * Gp.transpose() / double(dim_perf);
  auto unhat = [](const Eigen::MatrixXd& Mh, const Eigen::VectorXd& w) {
    return Eigen::MatrixXd(w.cwiseSqrt().cwiseInverse().asDiagonal() * Mh *
                           w.cwiseSqrt().asDiagonal());
  };
  pair.A_full = unhat(Af_hat, pair.w_full);
  pair.A_perf = unhat(Ap_hat, pair.w_perf);

  IdentificationSet ids;
  ids.k = k;
  double s = 1.0 / std::sqrt(double(std::max(dim_full, dim_perf)));
  auto unhat_map = [&](const Eigen::MatrixXd& Mh, const Eigen::VectorXd& wo,
                       const Eigen::VectorXd& wi) {
    return Eigen::MatrixXd(wo.cwiseSqrt().cwiseInverse().asDiagonal() * Mh *
                           wi.cwiseSqrt().asDiagonal());
  };
  ids.J = unhat_map(rand_mat(dim_perf, dim_full, s), pair.w_perf, pair.w_full);
  ids.Jp = unhat_map(rand_mat(dim_full, dim_perf, s), pair.w_full, pair.w_perf);
  ids.J1 = unhat_map(rand_mat(dim_perf, dim_full, s), pair.w_perf, pair.w_full);
  ids.J1p = unhat_map(rand_mat(dim_full, dim_perf, s), pair.w_full, pair.w_perf);
  return {pair, ids};
}

/// Family member with delta of order `scale`: a unitary-equivalent pair
/// (delta = 0 at scale 0) perturbed by `scale` in the maps and the form.
inline std::pair<FormPair, IdentificationSet> near_identity_instance(
    std::uint64_t seed, index_t dim, double scale, int k = 2) {
  SplitMix64 rng(seed);
  auto rand_mat = [&](double s) {
    Eigen::MatrixXd M(dim, dim);
    for (index_t i = 0; i < dim; i++)
      for (index_t j = 0; j < dim; j++) M(i, j) = s * rng.next_normal();
    return M;
  };
  FormPair pair;
  pair.k = k;
  pair.w_full = pair.w_perf = Eigen::VectorXd::Ones(dim);
  Eigen::MatrixXd G = rand_mat(1.0);
  Eigen::MatrixXd A = G * G.transpose() / double(dim);
  Eigen::MatrixXd P = rand_mat(1.0);
  pair.A_full = A;
  pair.A_perf = A + scale * 0.5 * (P + P.transpose()).eval() +
                scale * Eigen::MatrixXd::Identity(dim, dim);  // stays PSD
  IdentificationSet ids;
  ids.k = k;
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dim, dim);
  ids.J = I + rand_mat(scale);
  ids.Jp = I + rand_mat(scale);
  ids.J1 = ids.J + rand_mat(scale);
  ids.J1p = ids.Jp + rand_mat(scale);
  return {pair, ids};
}

// ---------------------------------------------------------------------------
// the constructive identification operator J1 on PDE instances

struct J1Options {
  double min_resolution = 4.0;        // require d/h >= this
  const PotentialField* field = nullptr;  // sampled potential for non-balls
};

/// J1 f = f - sum_i (f - <f>_i) chi_i - sum_i <f>_i H_i hat_chi_i, assembled
/// as per-node affine coefficients against the cell mean. chi is the cubic
/// smoothstep profile at scale d (n >= 3), the logarithmic profile on
/// (d, eps^2) for n = 2 (falling back to the smoothstep at scale 2d, with a
/// flag, when that band is under-resolved); hat_chi cuts off at the security
/// distance. Rows of hole nodes vanish identically by construction.
class J1Operator {
 public:
  J1Operator(const HoleLayout& layout, std::shared_ptr<const NodeMask> full,
             std::shared_ptr<const NodeMask> perf, J1Options opt = J1Options())
      : layout_(layout), full_(std::move(full)), perf_(std::move(perf)) {
    const CartesianGrid& g = full_->grid;
    require(g.same_as(perf_->grid), "grid-mismatch",
            "J1Operator: masks on different grids");
    require(g.total_padded() <= 40000000, "size-limit",
            "J1Operator: grid too large for the dense-path construction");
    const int n = g.n;
    const double eps = layout.spec.epsilon;
    const double d = layout.shape.d;
    const double kap = layout.kappa;
    require(d / g.h >= opt.min_resolution - 1e-12, "resolvability",
            "J1Operator: hole under-resolved (d/h < " +
                std::to_string(opt.min_resolution) + ")");
    require(d + kap * eps <= 0.5 * eps + 1e-12 * eps, "layout-violation",
            "J1Operator: security distance violated");

    // the n>=3 cutoff is supported on radius 2d; keep it inside the cell
    bool log_cutoff = false;
    if (n == 2) {
      double band = eps * eps;
      log_cutoff = band > d + g.h;  // at least one grid spacing of band
      if (!log_cutoff) cutoff_fallback_ = true;
    }
    if (!log_cutoff)
      require(2.0 * d <= 0.5 * eps + 1e-12, "layout-violation",
              "J1Operator: smoothstep cutoff of radius 2d leaks out of the "
              "cell; need d <= eps/4");

    cell_of_.assign(size_t(g.total_padded()), -1);
    alpha_.assign(size_t(g.total_padded()), 1.0);
    beta_.assign(size_t(g.total_padded()), 0.0);

    auto smoothstep = [](double t) {
      if (t <= 1.0) return 1.0;
      if (t >= 2.0) return 0.0;
      double s = t - 1.0;
      return 1.0 - 3.0 * s * s + 2.0 * s * s * s;
    };
    auto chi = [&](double r) {
      if (log_cutoff) {
        if (r <= d) return 1.0;
        if (r >= eps * eps) return 0.0;
        return (std::log(r) - 2.0 * std::log(eps)) /
               (std::log(d) - 2.0 * std::log(eps));
      }
      return smoothstep(r / d);
    };
    auto chi_hat = [&](double r) {
      return smoothstep(1.0 + (2.0 / kap) * (r - d) / eps);
    };
    auto potential = [&](const double* rel, double r) {
      if (opt.field) return opt.field->sample(rel);
      if (layout.shape.kind == HoleShape::Kind::ball) {
        if (n >= 3) return r <= d ? 1.0 : std::pow(d / r, n - 2);
        if (r <= d) return 1.0;
        if (r >= 1.0) return 0.0;  // extended by zero beyond the unit disk
        return std::log(r) / std::log(d);
      }
      fail("bad-argument",
           "J1Operator: non-ball shape needs a sampled potential field");
    };

    // mean-value weights per cell (tensor trapezoid over the closed cell)
    const auto st = g.strides();
    cell_nodes_.resize(size_t(layout.hole_count()));
    cell_weights_.resize(size_t(layout.hole_count()));
    for (index_t ci = 0; ci < layout.hole_count(); ci++) {
      auto lo = layout.cell_lo(ci), hi = layout.cell_hi(ci);
      std::array<index_t, kMaxDim> ilo{}, ihi{};
      for (int a = 0; a < n; a++) {
        double tol = 1e-12 * g.h;
        ilo[size_t(a)] = index_t(
            std::ceil((lo[size_t(a)] - g.origin[size_t(a)] - tol) / g.h));
        ihi[size_t(a)] = index_t(
            std::floor((hi[size_t(a)] - g.origin[size_t(a)] + tol) / g.h));
      }
      double wsum = 0;
      std::array<index_t, kMaxDim> idx = ilo;
      while (true) {
        index_t flat = 0;
        double w = 1.0;
        bool interior = true;
        for (int a = 0; a < n; a++) {
          flat += idx[size_t(a)] * st[size_t(a)];
          double x = g.coord(a, idx[size_t(a)]);
          double tol = 1e-12 * g.h;
          if (std::abs(x - lo[size_t(a)]) <= tol ||
              std::abs(x - hi[size_t(a)]) <= tol)
            w *= 0.5;
          if (idx[size_t(a)] < 1 || idx[size_t(a)] > g.intervals[size_t(a)] - 1)
            interior = false;
        }
        if (interior && full_->active[size_t(flat)]) {
          cell_nodes_[size_t(ci)].push_back(flat);
          cell_weights_[size_t(ci)].push_back(w);
          wsum += w;
        }
        int a = 0;
        while (a < n) {
          if (++idx[size_t(a)] <= ihi[size_t(a)]) break;
          idx[size_t(a)] = ilo[size_t(a)];
          a++;
        }
        if (a >= n) break;
      }
      require(wsum > 0, "empty-cell", "J1Operator: cell without nodes");
      for (auto& w : cell_weights_[size_t(ci)]) w /= wsum;

      // per-node coefficients inside this cell: value = alpha * f(x) +
      // beta * <f>_cell, with alpha = 1 - chi, beta = chi - H chi_hat
      std::array<index_t, kMaxDim> jdx = ilo;
      while (true) {
        index_t flat = 0;
        double rel[kMaxDim];
        double r2 = 0;
        bool interior = true;
        for (int a = 0; a < n; a++) {
          flat += jdx[size_t(a)] * st[size_t(a)];
          rel[a] = g.coord(a, jdx[size_t(a)]) -
                   layout.centers[size_t(ci)][size_t(a)];
          r2 += rel[a] * rel[a];
          if (jdx[size_t(a)] < 1 || jdx[size_t(a)] > g.intervals[size_t(a)] - 1)
            interior = false;
        }
        if (interior) {
          double r = std::sqrt(r2);
          double ch = chi(r);
          double chh = chi_hat(r);
          double Hv = (ch > 0.0 || chh > 0.0) ? potential(rel, r) : 0.0;
          cell_of_[size_t(flat)] = int(ci);
          alpha_[size_t(flat)] = 1.0 - ch;
          beta_[size_t(flat)] = ch - Hv * chh;
        }
        int a = 0;
        while (a < n) {
          if (++jdx[size_t(a)] <= ihi[size_t(a)]) break;
          jdx[size_t(a)] = ilo[size_t(a)];
          a++;
        }
        if (a >= n) break;
      }
    }
  }

  bool cutoff_fallback() const { return cutoff_fallback_; }
  double alpha_at(index_t flat) const { return alpha_[size_t(flat)]; }
  double beta_at(index_t flat) const { return beta_[size_t(flat)]; }

  /// Apply to a full-mask function; the result lives on the perforated mask.
  GridFunction apply(const GridFunction& f) const {
    require(f.mask().grid.same_as(full_->grid), "grid-mismatch",
            "J1Operator::apply: wrong grid");
    // cell means first
    std::vector<double> mean(cell_nodes_.size(), 0.0);
    const auto& fv = f.raw();
    for (size_t ci = 0; ci < cell_nodes_.size(); ci++) {
      double acc = 0;
      for (size_t j = 0; j < cell_nodes_[ci].size(); j++)
        acc += cell_weights_[ci][j] * fv[size_t(cell_nodes_[ci][j])];
      mean[ci] = acc;
    }
    GridFunction out(perf_);
    auto& ov = out.raw();
    const auto& act = perf_->active;
    for (size_t i = 0; i < ov.size(); i++) {
      if (!act[i]) continue;  // hole rows identically zero
      int ci = cell_of_[i];
      ov[i] = (ci < 0) ? fv[i] : alpha_[i] * fv[i] + beta_[i] * mean[size_t(ci)];
    }
    return out;
  }

  /// Dense matrix on active indexing (perf rows, full columns).
  Eigen::MatrixXd to_dense_active(index_t limit = 4000) const {
    GridOperator fop(full_, 0.0), pop(perf_, 0.0);
    auto fnodes = fop.active_nodes();
    auto pnodes = pop.active_nodes();
    require(index_t(fnodes.size()) <= limit, "size-limit",
            "J1Operator::to_dense_active: too many unknowns");
    Eigen::MatrixXd M =
        Eigen::MatrixXd::Zero(index_t(pnodes.size()), index_t(fnodes.size()));
    std::vector<index_t> full_ordinal(size_t(full_->grid.total_padded()), -1);
    for (size_t j = 0; j < fnodes.size(); j++)
      full_ordinal[size_t(fnodes[j])] = index_t(j);
    for (size_t i = 0; i < pnodes.size(); i++) {
      index_t flat = pnodes[i];
      int ci = cell_of_[size_t(flat)];
      if (ci < 0) {
        M(index_t(i), full_ordinal[size_t(flat)]) = 1.0;
        continue;
      }
      M(index_t(i), full_ordinal[size_t(flat)]) += alpha_[size_t(flat)];
      const auto& nodes = cell_nodes_[size_t(ci)];
      const auto& wts = cell_weights_[size_t(ci)];
      for (size_t j = 0; j < nodes.size(); j++)
        M(index_t(i), full_ordinal[size_t(nodes[j])]) +=
            beta_[size_t(flat)] * wts[j];
    }
    return M;
  }

 private:
  HoleLayout layout_;
  std::shared_ptr<const NodeMask> full_, perf_;
  std::vector<int> cell_of_;
  std::vector<double> alpha_, beta_;
  std::vector<std::vector<index_t>> cell_nodes_;
  std::vector<std::vector<double>> cell_weights_;
  bool cutoff_fallback_ = false;
};

/// Dense PDE closeness instance from a layout: both operators on the same
/// grid, J = node selection, J' = zero padding (exact adjoints), J1 from the
/// constructive formula, J1' = J'.
struct PdeInstance {
  FormPair pair;
  IdentificationSet ids;
  std::shared_ptr<const NodeMask> full_mask, perf_mask;
  bool cutoff_fallback = false;
};

inline PdeInstance pde_instance(const HoleLayout& layout, double h, double q,
                                int k = 2, index_t dense_limit = 2000,
                                J1Options j1opt = J1Options()) {
  CartesianGrid g(layout.spec.n, layout.spec.box_min, layout.spec.box_max, h);
  PdeInstance inst;
  inst.full_mask = NodeMask::full(g);
  inst.perf_mask = NodeMask::perforated(g, layout);
  auto fop = assemble_laplacian(inst.full_mask, q);
  auto pop = assemble_laplacian(inst.perf_mask, 0.0);
  require(fop.active_dim() <= dense_limit, "size-limit",
          "pde_instance: " + std::to_string(fop.active_dim()) +
              " unknowns exceed the dense limit");
  inst.pair.k = k;
  inst.pair.A_full = fop.to_dense_active(dense_limit);
  inst.pair.A_perf = pop.to_dense_active(dense_limit);
  double w = g.weight();
  inst.pair.w_full = Eigen::VectorXd::Constant(fop.active_dim(), w);
  inst.pair.w_perf = Eigen::VectorXd::Constant(pop.active_dim(), w);

  // J: selection of perf-active rows from full-active columns
  auto fnodes = fop.active_nodes();
  auto pnodes = pop.active_nodes();
  std::vector<index_t> full_ordinal(size_t(g.total_padded()), -1);
  for (size_t j = 0; j < fnodes.size(); j++)
    full_ordinal[size_t(fnodes[j])] = index_t(j);
  Eigen::MatrixXd J =
      Eigen::MatrixXd::Zero(index_t(pnodes.size()), index_t(fnodes.size()));
  for (size_t i = 0; i < pnodes.size(); i++)
    J(index_t(i), full_ordinal[size_t(pnodes[i])]) = 1.0;
  inst.ids.k = k;
  inst.ids.J = J;
  inst.ids.Jp = J.transpose();
  J1Operator j1(layout, inst.full_mask, inst.perf_mask, j1opt);
  inst.cutoff_fallback = j1.cutoff_fallback();
  inst.ids.J1 = j1.to_dense_active(dense_limit);
  inst.ids.J1p = inst.ids.Jp;
  return inst;
}

}  // namespace perfhom
