#include <catch2/catch_amalgamated.hpp>

#include "perfhom/fastsolve.hpp"

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

}  // namespace

TEST_CASE("DST solve equals a direct dense solve on the box", "[dst]") {
  for (int n = 2; n <= 3; n++) {
    auto g = unit_grid(n, n == 2 ? 12 : 6);
    auto mask = NodeMask::full(g);
    auto op = assemble_laplacian(mask, 0.0).shifted(1.0);
    GridFunction b(mask);
    SplitMix64 rng(7);
    b.fill([&](const double*) { return rng.next_sym(); });

    DstBoxSolver solver(g);
    std::vector<double> z(size_t(g.total_padded()), 0.0);
    solver.solve_shifted(1.0, b.raw().data(), z.data());

    Eigen::MatrixXd A = op.to_dense_active();
    auto act = op.active_nodes();
    Eigen::VectorXd bd(act.size());
    for (size_t i = 0; i < act.size(); i++) bd(Eigen::Index(i)) = b.raw()[size_t(act[i])];
    Eigen::VectorXd xd = A.ldlt().solve(bd);
    for (size_t i = 0; i < act.size(); i++)
      REQUIRE_THAT(z[size_t(act[i])],
                   Catch::Matchers::WithinAbs(xd(Eigen::Index(i)), 1e-10));
  }
}

TEST_CASE("DST heat kernel matches the dense matrix exponential", "[dst]") {
  auto g = unit_grid(2, 8);
  auto mask = NodeMask::full(g);
  auto op = assemble_laplacian(mask, 0.0);
  GridFunction v(mask);
  SplitMix64 rng(21);
  v.fill([&](const double*) { return rng.next_sym(); });

  double t = 0.013, q = 2.5;
  DstBoxSolver solver(g);
  std::vector<double> z(size_t(g.total_padded()), 0.0);
  solver.heat(t, q, v.raw().data(), z.data());

  Eigen::MatrixXd A = op.to_dense_active();
  auto act = op.active_nodes();
  Eigen::MatrixXd Aq = A + q * Eigen::MatrixXd::Identity(A.rows(), A.rows());
  Eigen::MatrixXd E = dense::sym_fn(Aq, [t](double lam) { return std::exp(-lam * t); });
  Eigen::VectorXd vd(act.size());
  for (size_t i = 0; i < act.size(); i++) vd(Eigen::Index(i)) = v.raw()[size_t(act[i])];
  Eigen::VectorXd wd = E * vd;
  for (size_t i = 0; i < act.size(); i++)
    REQUIRE_THAT(z[size_t(act[i])],
                 Catch::Matchers::WithinAbs(wd(Eigen::Index(i)), 1e-12));
}

TEST_CASE("DST mode eigenvalues match the operator", "[dst]") {
  auto g = unit_grid(3, 5);
  auto mask = NodeMask::full(g);
  auto op = assemble_laplacian(mask, 0.0);
  DstBoxSolver solver(g);
  // eigenvector sin(pi k . x): apply the operator, compare Rayleigh quotient
  for (std::array<index_t, kMaxDim> k : {std::array<index_t, kMaxDim>{1, 1, 1, 0},
                                         {2, 1, 3, 0},
                                         {4, 4, 4, 0}}) {
    GridFunction v(mask);
    v.fill([&](const double* x) {
      return std::sin(M_PI * k[0] * x[0]) * std::sin(M_PI * k[1] * x[1]) *
             std::sin(M_PI * k[2] * x[2]);
    });
    GridFunction w(mask);
    op.apply(v, w);
    double rq = v.dot(w) / v.dot(v);
    REQUIRE_THAT(rq, Catch::Matchers::WithinRel(solver.mode_lambda(k), 1e-12));
  }
}

TEST_CASE("DST-preconditioned CG solves the perforated problem in few iterations",
          "[dst][cg]") {
  auto g = unit_grid(3, 24);
  auto spec = unit_spec(3, 0.25);
  auto lay = place_holes(spec, HoleShape::make_ball(0.05), 0.1);
  auto perf = NodeMask::perforated(g, lay);
  double q = 4 * M_PI * 0.05 / std::pow(0.25, 3) * 0.05 * 0.05;  // just a shift
  auto op = assemble_laplacian(perf, 0.0).shifted(1.0);

  GridFunction f(NodeMask::full(g));
  f.fill([](const double* x) { return 1.0 + x[0] - x[1] * x[2]; });
  auto b = restrict_to(f, perf);

  DstBoxPrecond pre(perf, 1.0 + q);
  std::vector<double> x(size_t(g.total_padded()), 0.0);
  auto rep = cg_solve(op, b.raw().data(), x.data(), {1e-10, 300}, &pre);
  REQUIRE(rep.converged);
  REQUIRE(rep.iterations <= 25);

  // verify against unpreconditioned CG
  std::vector<double> y(size_t(g.total_padded()), 0.0);
  cg_solve(op, b.raw().data(), y.data(), {1e-11, 20000});
  for (size_t i = 0; i < x.size(); i++)
    REQUIRE_THAT(x[i], Catch::Matchers::WithinAbs(y[i], 1e-7));
}

TEST_CASE("bound-buffer DST works in place on the CG workspace", "[dst]") {
  auto g = unit_grid(2, 16);
  auto mask = NodeMask::full(g);
  AlignedBuffer w(g.total_padded());
  DstBoxSolver bound(g, w.data());
  GridFunction b(mask);
  b.fill([](const double* x) { return std::sin(M_PI * x[0]) * x[1]; });
  std::memcpy(w.data(), b.raw().data(), sizeof(double) * size_t(g.total_padded()));
  bound.solve_shifted(1.0, w.data(), w.data());  // zero-copy path
  DstBoxSolver plain(g);
  std::vector<double> z(size_t(g.total_padded()), 0.0);
  plain.solve_shifted(1.0, b.raw().data(), z.data());
  for (index_t i = 0; i < g.total_padded(); i++)
    REQUIRE_THAT(w.data()[i], Catch::Matchers::WithinAbs(z[size_t(i)], 1e-13));
}

TEST_CASE("multigrid-preconditioned CG solves a masked ball domain", "[mg]") {
  // Dirichlet problem on the unit disk, rasterized on [-1,1]^2
  std::array<double, kMaxDim> lo{-1.0, -1.0, 0, 0}, hi{1.0, 1.0, 0, 0};
  CartesianGrid g(2, lo, hi, 2.0 / 128);
  auto mask = NodeMask::from_predicate(
      g, [](const double* x) { return x[0] * x[0] + x[1] * x[1] < 1.0; });
  auto op = GridOperator(mask, 0.0);

  GridFunction b(mask);
  b.fill([](const double*) { return 1.0; });

  MgPoisson mg(mask, 0.0);
  REQUIRE(mg.level_count() >= 3);
  std::vector<double> x(size_t(g.total_padded()), 0.0);
  auto rep = cg_solve(op, b.raw().data(), x.data(), {1e-10, 120}, &mg);
  REQUIRE(rep.converged);
  REQUIRE(rep.iterations <= 40);

  // oracle: -Laplace u = 1 on the disk has u(0) = 1/4 (= (1-r^2)/4)
  auto st = g.strides();
  index_t center = 64 * st[0] + 64 * st[1];
  REQUIRE_THAT(x[size_t(center)], Catch::Matchers::WithinAbs(0.25, 4e-3));
}

TEST_CASE("multigrid handles shifted operators and 3D", "[mg]") {
  auto g = unit_grid(3, 32);
  auto spec = unit_spec(3, 0.25);
  auto lay = place_holes(spec, HoleShape::make_ball(0.06), 0.1);
  auto perf = NodeMask::perforated(g, lay);
  auto op = GridOperator(perf, 1.0);
  GridFunction b(perf);
  SplitMix64 rng(3);
  b.fill([&](const double*) { return rng.next_sym(); });
  MgPoisson mg(perf, 1.0);
  std::vector<double> x(size_t(g.total_padded()), 0.0);
  auto rep = cg_solve(op, b.raw().data(), x.data(), {1e-10, 100}, &mg);
  REQUIRE(rep.converged);
  REQUIRE(rep.iterations <= 30);
}

TEST_CASE("Neumann cell operator: DCT solver inverts it exactly", "[neumann]") {
  int n = 2;
  index_t m = 16;
  double eps = 0.5;
  NeumannCellOp op(n, eps, m);
  NeumannCellSolver solver(n, eps, m, 1.0);
  SplitMix64 rng(11);
  std::vector<double> b(size_t(op.dim())), z(size_t(op.dim())), w(size_t(op.dim()));
  for (auto& v : b) v = rng.next_sym();
  solver.precondition(b.data(), z.data());
  // check (A + 1) z = b
  op.apply(z.data(), w.data());
  for (index_t i = 0; i < op.dim(); i++)
    REQUIRE_THAT(w[size_t(i)] + z[size_t(i)],
                 Catch::Matchers::WithinAbs(b[size_t(i)], 1e-10));
}

TEST_CASE("cell eigenvalues approach n(pi/eps)^2 and (pi/eps)^2", "[cell]") {
  // ratio eps/h = 32 here (the acceptance suite runs 64); 2% band
  double eps = 0.5;
  index_t m = 32;
  int n = 2;
  // Dirichlet: vertex grid on the cell
  std::array<double, kMaxDim> lo{}, hi{eps, eps, 0, 0};
  CartesianGrid cg(n, lo, hi, eps / double(m));
  auto mask = NodeMask::full(cg);
  auto op = assemble_laplacian(mask, 0.0);
  DstBoxSolver dst(cg);
  double lam1 = dst.mode_lambda({1, 1, 0, 0});
  double target_d = n * sqr(M_PI / eps);
  REQUIRE_THAT(lam1, Catch::Matchers::WithinRel(target_d, 0.02));
  // and the assembled operator agrees with the closed form
  GridFunction v(mask);
  v.fill([&](const double* x) {
    return std::sin(M_PI * x[0] / eps) * std::sin(M_PI * x[1] / eps);
  });
  GridFunction w(mask);
  op.apply(v, w);
  REQUIRE_THAT(v.dot(w) / v.dot(v), Catch::Matchers::WithinRel(lam1, 1e-12));

  // Neumann: second eigenvalue of the cell-centered operator via Lanczos
  NeumannCellOp nop(n, eps, m);
  NeumannCellSolver nsolver(n, eps, m, 1.0);
  EigOptions eo;
  eo.dense_limit = 0;
  eo.block = 2;
  eo.tol = 1e-9;
  auto rep = lowest_eigenpairs(nop, 2, eo, &nsolver);
  REQUIRE_THAT(rep.values[0], Catch::Matchers::WithinAbs(0.0, 1e-8));
  REQUIRE_THAT(rep.values[1], Catch::Matchers::WithinRel(sqr(M_PI / eps), 0.02));
}
