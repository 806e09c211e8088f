#include <catch2/catch_amalgamated.hpp>

#include "perfhom/fastsolve.hpp"
#include "perfhom/grid.hpp"

using namespace perfhom;

namespace {

CartesianGrid unit_grid(int n, index_t m) {
  std::array<double, kMaxDim> lo{}, hi{};
  for (int a = 0; a < n; a++) hi[size_t(a)] = 1.0;
  return CartesianGrid(n, lo, hi, 1.0 / double(m));
}

DomainSpec unit_spec(int n, double eps) {
  DomainSpec s;
  s.n = n;
  for (int a = 0; a < n; a++) s.box_max[size_t(a)] = 1.0;
  s.epsilon = eps;
  return s;
}

/// 1D FD Dirichlet eigenvalue, mode k of m intervals at width h.
double fd_lambda(double h, index_t m, index_t k) {
  return 2.0 / (h * h) * (1.0 - std::cos(M_PI * double(k) / double(m)));
}

}  // namespace

TEST_CASE("grid rejects a non-divisible extent", "[grid]") {
  std::array<double, kMaxDim> lo{}, hi{1.0, 1.0, 0, 0};
  REQUIRE_THROWS_AS(CartesianGrid(2, lo, hi, 0.3), Error);
  REQUIRE_NOTHROW(CartesianGrid(2, lo, hi, 0.25));
}

TEST_CASE("FD lowest eigenvalue on the unperforated unit square", "[grid]") {
  // h = 1/4: lowest eigenvalue is 2 * (2/h^2)(1 - cos(pi h)) = 18.7452...,
  // twice the 1D factor 9.3726; the continuum limit is 2 pi^2 = 19.7392.
  auto g = unit_grid(2, 4);
  auto mask = NodeMask::full(g);
  auto op = assemble_laplacian(mask, 0.0);
  REQUIRE(op.active_dim() == 9);
  Eigen::MatrixXd A = op.to_dense_active();
  Eigen::VectorXd ev = dense::sym_eigenvalues(A);
  double closed_form = 2.0 * fd_lambda(g.h, 4, 1);
  REQUIRE_THAT(ev(0), Catch::Matchers::WithinAbs(closed_form, 1e-10));
  REQUIRE_THAT(closed_form, Catch::Matchers::WithinAbs(18.745166, 1e-5));
  // refine: approaches 2 pi^2
  auto g2 = unit_grid(2, 64);
  double fine = 2.0 * fd_lambda(g2.h, 64, 1);
  REQUIRE_THAT(fine, Catch::Matchers::WithinRel(2.0 * M_PI * M_PI, 5e-4));
}

TEST_CASE("q*Id shifts the assembled spectrum exactly", "[grid]") {
  auto g = unit_grid(2, 5);
  auto mask = NodeMask::full(g);
  Eigen::MatrixXd A0 = assemble_laplacian(mask, 0.0).to_dense_active();
  Eigen::MatrixXd A5 = assemble_laplacian(mask, 5.0).to_dense_active();
  Eigen::VectorXd e0 = dense::sym_eigenvalues(A0), e5 = dense::sym_eigenvalues(A5);
  for (int i = 0; i < e0.size(); i++)
    REQUIRE_THAT(e5(i) - e0(i), Catch::Matchers::WithinAbs(5.0, 1e-10));
}

TEST_CASE("stencil entries are exact", "[grid]") {
  auto g = unit_grid(2, 4);
  auto op = assemble_laplacian(NodeMask::full(g), 0.0);
  Eigen::MatrixXd A = op.to_dense_active();
  double inv_h2 = 16.0;
  for (int i = 0; i < A.rows(); i++) {
    REQUIRE(A(i, i) == 4.0 * inv_h2);
    for (int j = 0; j < A.cols(); j++)
      if (i != j) REQUIRE((A(i, j) == 0.0 || A(i, j) == -inv_h2));
  }
  REQUIRE((A - A.transpose()).norm() == 0.0);
}

TEST_CASE("a hole masking one center node drops the dimension by one",
          "[grid]") {
  auto g = unit_grid(2, 8);
  auto spec = unit_spec(2, 0.25);
  // hole at cell (1,1): center (0.375, 0.375) is exactly the node (3,3)
  auto lay = place_holes(spec, HoleShape::make_ball(0.01), 0.1);
  auto full = NodeMask::full(g);
  auto perf = NodeMask::perforated(g, lay);
  REQUIRE(full->active_count - perf->active_count == 4);  // one node per hole
  REQUIRE(perf->hole_masked_counts == std::vector<index_t>{1, 1, 1, 1});
}

TEST_CASE("assemble_laplacian rejects invisible holes", "[grid]") {
  auto g = unit_grid(2, 8);  // nodes at k/8
  auto spec = unit_spec(2, 0.25);
  std::array<double, kMaxDim> off{0.03, 0.03, 0, 0};  // push centers off-node
  auto lay = place_holes(spec, HoleShape::make_ball(0.004), 0.1, off);
  auto perf = NodeMask::perforated(g, lay);
  REQUIRE_THROWS_MATCHES(assemble_laplacian(perf, 0.0), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("resolvability")));
}

TEST_CASE("restriction and extension are exact selection and padding",
          "[grid]") {
  auto g = unit_grid(2, 10);
  auto spec = unit_spec(2, 0.2);
  auto lay = place_holes(spec, HoleShape::make_ball(0.04), 0.1);
  auto full = NodeMask::full(g);
  auto perf = NodeMask::perforated(g, lay);
  REQUIRE(perf->active_count < full->active_count);

  GridFunction f(full);
  SplitMix64 rng(2);
  f.fill([&](const double*) { return rng.next_sym(); });

  SECTION("no holes: restriction is the identity") {
    auto same = restrict_to(f, full);
    REQUIRE(same.raw() == f.raw());
  }

  SECTION("norm never increases, equality iff f vanishes on masked nodes") {
    auto jf = restrict_to(f, perf);
    REQUIRE(jf.norm() <= f.norm() + 1e-15);
    REQUIRE(jf.norm() < f.norm());  // random f does not vanish there
    // construct f vanishing on the masked nodes: equality
    GridFunction f0 = f;
    {
      auto& v = f0.raw();
      const auto& act = perf->active;
      for (size_t i = 0; i < v.size(); i++)
        if (!act[i]) v[i] = 0.0;
    }
    auto jf0 = restrict_to(f0, perf);
    REQUIRE(jf0.norm() == f0.norm());
  }

  SECTION("constant 1 loses exactly h^n per masked node") {
    GridFunction ones(full);
    ones.fill([](const double*) { return 1.0; });
    auto j = restrict_to(ones, perf);
    double masked = double(full->active_count - perf->active_count);
    REQUIRE_THAT(ones.norm() * ones.norm() - j.norm() * j.norm(),
                 Catch::Matchers::WithinAbs(g.weight() * masked, 1e-12));
  }

  SECTION("extension is an isometry and J o J' = Id") {
    auto u = restrict_to(f, perf);
    auto eu = extend_zero(u, full);
    REQUIRE_THAT(eu.norm(), Catch::Matchers::WithinAbs(u.norm(), 1e-15));
    auto back = restrict_to(eu, perf);
    REQUIRE(back.raw() == u.raw());
  }

  SECTION("grid mismatch is rejected") {
    auto g2 = unit_grid(2, 12);
    auto other = NodeMask::full(g2);
    REQUIRE_THROWS_AS(restrict_to(f, other), Error);
  }
}

TEST_CASE("restriction/extension adjointness is exact (C2 = 0)", "[grid]") {
  // with the uniform weight h^n on both spaces, <Jf, u> = <f, J'u> exactly
  auto g = unit_grid(2, 9);
  auto spec = unit_spec(2, 1.0 / 3);
  auto lay = place_holes(spec, HoleShape::make_ball(0.05), 0.1);
  auto full = NodeMask::full(g);
  auto perf = NodeMask::perforated(g, lay);
  SplitMix64 rng(33);
  for (int trial = 0; trial < 10; trial++) {
    GridFunction f(full), u(perf);
    f.fill([&](const double*) { return rng.next_sym(); });
    u.fill([&](const double*) { return rng.next_sym(); });
    auto jf = restrict_to(f, perf);
    auto ju = extend_zero(u, full);
    REQUIRE(jf.dot(u) == f.dot(ju));  // bitwise: same sum, same order
  }
}

TEST_CASE("Dirichlet eigenvalues are monotone under masking", "[grid]") {
  auto g = unit_grid(2, 14);  // cell centers land on nodes
  auto spec = unit_spec(2, 1.0 / 7);
  auto lay = place_holes(spec, HoleShape::make_ball(0.05), 0.1);
  auto full = NodeMask::full(g);
  auto perf = NodeMask::perforated(g, lay);
  Eigen::VectorXd ef = dense::sym_eigenvalues(
      assemble_laplacian(full, 0.0).to_dense_active());
  Eigen::VectorXd ep = dense::sym_eigenvalues(
      assemble_laplacian(perf, 0.0).to_dense_active());
  for (int k = 0; k < ep.size(); k++) REQUIRE(ep(k) >= ef(k) - 1e-10);
}

TEST_CASE("cell_mean: constants, linears, quadratics", "[grid]") {
  auto g = unit_grid(2, 32);
  auto full = NodeMask::full(g);
  std::array<double, kMaxDim> lo{0.25, 0.25, 0, 0}, hi{0.5, 0.5, 0, 0};

  GridFunction c(full);
  c.fill([](const double*) { return 3.25; });
  REQUIRE_THAT(cell_mean(c, lo, hi), Catch::Matchers::WithinAbs(3.25, 1e-13));

  GridFunction lin(full);
  lin.fill([](const double* x) { return 2.0 * x[0] - x[1]; });
  // symmetric cell: mean = value at the center
  REQUIRE_THAT(cell_mean(lin, lo, hi),
               Catch::Matchers::WithinAbs(2.0 * 0.375 - 0.375, 1e-13));

  // f = x^2 over a cell starting at 0: integral mean over (0, eps) is
  // eps^2/3; trapezoid weights give O(h^2)
  double eps = 0.25;
  std::array<double, kMaxDim> qlo{0.0, 0.25, 0, 0}, qhi{eps, 0.5, 0, 0};
  GridFunction quad(full);
  quad.fill([](const double* x) { return x[0] * x[0]; });
  double got = cell_mean(quad, qlo, qhi);
  double exact = eps * eps / 3.0;
  REQUIRE_THAT(got, Catch::Matchers::WithinAbs(exact, 2.0 * g.h * g.h));

  // empty cell
  std::array<double, kMaxDim> elo{0.26, 0.26, 0, 0}, ehi{0.27, 0.27, 0, 0};
  REQUIRE_THROWS_AS(cell_mean(c, elo, ehi), Error);
}

TEST_CASE("coo export lists the active stencil", "[grid]") {
  auto g = unit_grid(2, 4);
  auto op = assemble_laplacian(NodeMask::full(g), 0.0);
  std::ostringstream os;
  op.write_coo(os);
  // 9 diagonal entries + 2*12 neighbor pairs
  std::istringstream is(os.str());
  int rows = 0;
  long long r, c;
  double v;
  double diag_sum = 0;
  while (is >> r >> c >> v) {
    rows++;
    if (r == c) diag_sum += v;
  }
  REQUIRE(rows == 9 + 24);
  REQUIRE_THAT(diag_sum, Catch::Matchers::WithinAbs(9 * 64.0, 1e-12));
}

TEST_CASE("grid function export writes a self-describing header", "[grid]") {
  auto g = unit_grid(2, 4);
  GridFunction f(NodeMask::full(g));
  f.fill([](const double* x) { return x[0]; });
  std::ostringstream hdr, data;
  write_function(f, hdr, data);
  auto j = nlohmann::json::parse(hdr.str());
  REQUIRE(j["n"] == 2);
  REQUIRE(j["active_count"] == 9);
  REQUIRE(data.str().size() == 9 * sizeof(double));
}
