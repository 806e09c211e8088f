#include <catch2/catch_amalgamated.hpp>

#include "perfhom/linalg.hpp"

using namespace perfhom;

namespace {

/// Dense symmetric operator wrapper for tests.
struct DenseOp {
  Eigen::MatrixXd A;
  index_t dim() const { return A.rows(); }
  void apply(const double* x, double* y) const {
    Eigen::Map<const Eigen::VectorXd> xv(x, A.rows());
    Eigen::Map<Eigen::VectorXd> yv(y, A.rows());
    yv = A * xv;
  }
};

Eigen::MatrixXd random_spd(int n, std::uint64_t seed, double shift = 0.1) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++) G(i, j) = rng.next_normal();
  return G * G.transpose() / n + shift * Eigen::MatrixXd::Identity(n, n);
}

/// Independent oracle for the largest singular value: power iteration on
/// M^T M, no SVD involved.
double power_opnorm(const Eigen::MatrixXd& M, int iters = 4000) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(M.cols());
  v(0) = 1.7;  // break symmetry
  double s = 0;
  for (int i = 0; i < iters; i++) {
    v.normalize();
    Eigen::VectorXd w = M.transpose() * (M * v);
    s = std::sqrt(v.dot(w));
    v = w;
  }
  return s;
}

}  // namespace

TEST_CASE("cg recovers a manufactured right-hand side", "[cg]") {
  DenseOp op{random_spd(40, 11)};
  SplitMix64 rng(5);
  Eigen::VectorXd g(40);
  for (int i = 0; i < 40; i++) g(i) = rng.next_sym();
  Eigen::VectorXd b = op.A * g;
  std::vector<double> x(40);
  auto rep = cg_solve(op, b.data(), x.data(), {1e-12, 10000});
  REQUIRE(rep.converged);
  for (int i = 0; i < 40; i++) REQUIRE_THAT(x[i], Catch::Matchers::WithinAbs(g(i), 1e-8));
}

TEST_CASE("cg on zero rhs returns zero in zero iterations", "[cg]") {
  DenseOp op{random_spd(10, 3)};
  std::vector<double> b(10, 0.0), x(10, 42.0);
  auto rep = cg_solve(op, b.data(), x.data());
  REQUIRE(rep.iterations == 0);
  REQUIRE(rep.converged);
  for (double v : x) REQUIRE(v == 0.0);
}

TEST_CASE("cg error decreases monotonically in the operator norm", "[cg]") {
  // run CG step by step by capping max_iter; A-norm of error must not grow
  DenseOp op{random_spd(30, 23)};
  SplitMix64 rng(17);
  Eigen::VectorXd xstar(30);
  for (int i = 0; i < 30; i++) xstar(i) = rng.next_sym();
  Eigen::VectorXd b = op.A * xstar;
  double prev = std::numeric_limits<double>::infinity();
  for (int cap = 1; cap <= 25; cap += 3) {
    std::vector<double> x(30);
    cg_solve(op, b.data(), x.data(), {1e-30, cap, false});
    Eigen::Map<Eigen::VectorXd> xv(x.data(), 30);
    Eigen::VectorXd e = xv - xstar;
    double anorm = std::sqrt(e.dot(op.A * e));
    REQUIRE(anorm <= prev * (1.0 + 1e-12));
    prev = anorm;
  }
}

TEST_CASE("cg reports nonconvergence and keeps best iterate", "[cg]") {
  DenseOp op{random_spd(50, 7)};
  Eigen::VectorXd b = Eigen::VectorXd::Ones(50);
  std::vector<double> x(50);
  CgOptions o;
  o.tol = 1e-14;
  o.max_iter = 2;
  REQUIRE_THROWS_AS(cg_solve(op, b.data(), x.data(), o), Error);
  double nx = vnorm(50, x.data());
  REQUIRE(nx > 0);  // best iterate was written
}

TEST_CASE("lowest_eigenpairs on diag(1,2,3) finds {1,2}", "[eig]") {
  Eigen::MatrixXd D = Eigen::Vector3d(1, 2, 3).asDiagonal();
  DenseOp op{D};
  EigOptions o;
  o.dense_limit = 0;  // force the iterative path even at size 3
  o.block = 2;
  o.max_basis = 3;
  auto rep = lowest_eigenpairs(op, 2, o);
  REQUIRE(rep.values.size() >= 2);
  REQUIRE_THAT(rep.values[0], Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(rep.values[1], Catch::Matchers::WithinAbs(2.0, 1e-9));
  REQUIRE_THAT(rep.mu[0], Catch::Matchers::WithinAbs(0.5, 1e-9));
}

TEST_CASE("iterative eigenpairs match dense diagonalization with multiplicity",
          "[eig]") {
  // spectrum with a triple eigenvalue; block 3 must recover all copies
  int n = 60;
  Eigen::MatrixXd A = random_spd(n, 31);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXd d = es.eigenvalues();
  d(0) = d(1) = d(2) = 0.5;  // engineered multiplicity
  d(3) = 0.9;
  Eigen::MatrixXd B = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  DenseOp op{B};
  EigOptions o;
  o.dense_limit = 0;
  o.block = 3;
  o.tol = 1e-9;
  auto rep = lowest_eigenpairs(op, 5, o);
  REQUIRE(rep.converged);
  Eigen::VectorXd dd = d;
  std::sort(dd.data(), dd.data() + n);
  for (int j = 0; j < 5; j++) {
    INFO("pair " << j);
    REQUIRE_THAT(rep.values[size_t(j)], Catch::Matchers::WithinAbs(dd(j), 1e-7));
    REQUIRE(rep.residuals[size_t(j)] <= 1e-7 * (1 + dd(j)));
  }
}

TEST_CASE("adding q*Id shifts every eigenvalue by exactly q", "[eig]") {
  int n = 25;
  Eigen::MatrixXd A = random_spd(n, 41);
  double q = 5.0;
  DenseOp op{A}, opq{A + q * Eigen::MatrixXd::Identity(n, n)};
  auto r1 = lowest_eigenpairs(op, 4);
  auto r2 = lowest_eigenpairs(opq, 4);
  for (int j = 0; j < 4; j++)
    REQUIRE_THAT(r2.values[size_t(j)] - r1.values[size_t(j)],
                 Catch::Matchers::WithinAbs(q, 1e-10));
}

TEST_CASE("eigensolver is deterministic for a fixed seed", "[eig]") {
  DenseOp op{random_spd(80, 53)};
  EigOptions o;
  o.dense_limit = 0;
  o.seed = 99;
  auto r1 = lowest_eigenpairs(op, 3, o);
  auto r2 = lowest_eigenpairs(op, 3, o);
  REQUIRE(r1.values == r2.values);
  REQUIRE(r1.residuals == r2.residuals);
}

TEST_CASE("disk-backed basis reproduces the RAM result", "[eig]") {
  DenseOp op{random_spd(64, 71)};
  EigOptions ram;
  ram.dense_limit = 0;
  EigOptions disk = ram;
  disk.ram_basis_doubles = 1;  // force the disk store
  disk.disk_path = "basis_test.bin";
  auto r1 = lowest_eigenpairs(op, 3, ram);
  auto r2 = lowest_eigenpairs(op, 3, disk);
  for (int j = 0; j < 3; j++)
    REQUIRE_THAT(r1.values[size_t(j)],
                 Catch::Matchers::WithinAbs(r2.values[size_t(j)], 1e-10));
}

TEST_CASE("semigroup at t=0 is the identity", "[semigroup]") {
  DenseOp op{random_spd(20, 5)};
  std::vector<double> v(20);
  for (int i = 0; i < 20; i++) v[size_t(i)] = std::sin(i + 1.0);
  auto w = semigroup_apply(op, 0.0, v);
  REQUIRE(w == v);
}

TEST_CASE("semigroup on a diagonal operator is componentwise exp", "[semigroup]") {
  Eigen::VectorXd d(6);
  d << 0.0, 0.5, 1.0, 2.0, 7.0, 30.0;
  DenseOp op{Eigen::MatrixXd(d.asDiagonal())};
  std::vector<double> v(6, 1.0);
  double t = 0.7;
  auto w = semigroup_apply(op, t, v, {1e-10});
  for (int i = 0; i < 6; i++)
    REQUIRE_THAT(w[size_t(i)], Catch::Matchers::WithinAbs(std::exp(-d(i) * t), 1e-9));
}

TEST_CASE("semigroup matches the dense eigendecomposition oracle", "[semigroup]") {
  int n = 50;
  Eigen::MatrixXd A = random_spd(n, 77, 0.0);
  A *= 40.0;  // widen the spectrum a bit
  DenseOp op{A};
  SplitMix64 rng(13);
  std::vector<double> v(size_t(n), 0.0);
  for (int i = 0; i < n; i++) v[size_t(i)] = rng.next_sym();
  for (double t : {0.05, 0.3, 1.0}) {
    auto w = semigroup_apply(op, t, v, {1e-10});
    // oracle: full eigendecomposition
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    Eigen::Map<const Eigen::VectorXd> vv(v.data(), n);
    Eigen::VectorXd exact =
        es.eigenvectors() *
        (es.eigenvalues().array() * -t).exp().matrix().asDiagonal() *
        (es.eigenvectors().transpose() * vv);
    for (int i = 0; i < n; i++)
      REQUIRE_THAT(w[size_t(i)], Catch::Matchers::WithinAbs(exact(i), 1e-8));
  }
}

TEST_CASE("semigroup contracts the norm for PSD operators", "[semigroup]") {
  DenseOp op{random_spd(30, 101, 0.0)};
  SplitMix64 rng(3);
  for (int trial = 0; trial < 5; trial++) {
    std::vector<double> v(30);
    for (int i = 0; i < 30; i++) v[size_t(i)] = rng.next_sym();
    double nv = vnorm(30, v.data());
    for (double t : {0.1, 1.0, 5.0}) {
      auto w = semigroup_apply(op, t, v, {1e-10});
      REQUIRE(vnorm(30, w.data()) <= nv * (1.0 + 1e-8));
    }
  }
}

TEST_CASE("dense opnorm: identity and rank-one maps", "[opnorm]") {
  Eigen::VectorXd w1 = Eigen::VectorXd::Constant(7, 0.37);
  REQUIRE_THAT(dense::opnorm_weighted(Eigen::MatrixXd::Identity(7, 7), w1, w1),
               Catch::Matchers::WithinAbs(1.0, 1e-12));
  // rank-one u v^T between weighted spaces: norm = ||u||_{w_out} ||v||_{w_in^{-1}}'
  SplitMix64 rng(8);
  Eigen::VectorXd u(5), v(9), wo(5), wi(9);
  for (int i = 0; i < 5; i++) { u(i) = rng.next_sym(); wo(i) = 0.5 + rng.next_unit(); }
  for (int i = 0; i < 9; i++) { v(i) = rng.next_sym(); wi(i) = 0.5 + rng.next_unit(); }
  Eigen::MatrixXd M = u * v.transpose();
  // sup over f of ||M f||_wo / ||f||_wi = ||u||_wo * sqrt(v' Wi^{-1} v)
  double expect = std::sqrt(u.dot(wo.asDiagonal() * u)) *
                  std::sqrt(v.dot(wi.cwiseInverse().asDiagonal() * v));
  REQUIRE_THAT(dense::opnorm_weighted(M, wo, wi),
               Catch::Matchers::WithinAbs(expect, 1e-12 * expect));
}

TEST_CASE("dense opnorm matches the power-iteration oracle", "[opnorm]") {
  SplitMix64 rng(19);
  Eigen::MatrixXd M(30, 20);
  for (int i = 0; i < 30; i++)
    for (int j = 0; j < 20; j++) M(i, j) = rng.next_normal();
  double svd = dense::opnorm(M);
  double pow = power_opnorm(M);
  REQUIRE_THAT(svd, Catch::Matchers::WithinAbs(pow, 1e-10 * svd));
}

TEST_CASE("hausdorff distance basics", "[hausdorff]") {
  REQUIRE(hausdorff_distance({1, 2, 3}, {1, 2, 3}) == 0.0);
  REQUIRE(hausdorff_distance({0}, {1}) == 1.0);
  REQUIRE(hausdorff_distance({0, 2}, {1}) == 1.0);
  REQUIRE_THROWS_AS(hausdorff_distance({}, {1.0}), Error);
  // symmetry and nonnegativity on random sets
  SplitMix64 rng(4);
  for (int trial = 0; trial < 20; trial++) {
    std::vector<double> X(5), Y(7);
    for (auto& x : X) x = rng.next_sym() * 10;
    for (auto& y : Y) y = rng.next_sym() * 10;
    double d1 = hausdorff_distance(X, Y), d2 = hausdorff_distance(Y, X);
    REQUIRE(d1 == d2);
    REQUIRE(d1 >= 0);
  }
}

TEST_CASE("hausdorff distance characterizes convergence of set families",
          "[hausdorff]") {
  // X_eps = X + perturbation of size eps: distance -> 0 monotonically, and
  // the two conditions hold: isolation of points outside X, and existence of
  // approximating families for points of X
  std::vector<double> X{0.0, 1.0, 2.5};
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.5, 0.25, 0.125, 0.0625}) {
    std::vector<double> Xe;
    for (double x : X) Xe.push_back(x + eps * 0.9);
    double d = hausdorff_distance(X, Xe);
    REQUIRE(d < prev);
    prev = d;
    // condition (i): a point at distance > d from X stays isolated from X_eps
    double lambda0 = 1.75;  // midway between 1 and 2.5
    double dist_to_X = 0.75;
    for (double xe : Xe) REQUIRE(std::abs(xe - lambda0) > dist_to_X - d - 1e-15);
    // condition (ii): every point of X has an approximant within d
    for (double x : X) {
      double best = 1e300;
      for (double xe : Xe) best = std::min(best, std::abs(xe - x));
      REQUIRE(best <= d + 1e-15);
    }
  }
}
