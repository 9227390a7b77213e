#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "htmpc/box_qp.hpp"
#include "htmpc/rng.hpp"

using namespace htmpc;

namespace {

// PD Hessian with approximately the requested condition number.
BoxQp random_qp(Rng& rng, int n, double kappa) {
  Eigen::MatrixXd M = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return rng.normal(); });
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  Eigen::MatrixXd Qo = qr.householderQ();
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    eigs(i) = std::pow(kappa, t);  // 1 .. kappa, log-spaced
  }
  BoxQp qp;
  qp.H = Qo * eigs.asDiagonal() * Qo.transpose();
  qp.H = 0.5 * (qp.H + qp.H.transpose());
  qp.q = Eigen::VectorXd::NullaryExpr(n, [&] { return rng.uniform(-2.0, 2.0) * kappa / 4.0; });
  qp.lo = Eigen::VectorXd::Constant(n, -1.0);
  qp.hi = Eigen::VectorXd::Constant(n, 1.0);
  return qp;
}

}  // namespace

TEST_CASE("one-dimensional projected step hits the bound and stops") {
  BoxQp qp;
  qp.H = Eigen::MatrixXd::Constant(1, 1, 2.0);
  qp.q = Eigen::VectorXd::Constant(1, -6.0);
  qp.lo = Eigen::VectorXd::Constant(1, -1.0);
  qp.hi = Eigen::VectorXd::Constant(1, 1.0);

  const SolveReport rep = pgd(qp, Eigen::VectorXd::Zero(1));
  CHECK(rep.alpha == 0.5);  // 1 / lambda_max, lambda_max = 2
  CHECK(rep.u(0) == 1.0);
  CHECK(rep.converged);
  CHECK(rep.iters == 2);
  CHECK(rep.residuals[0] == 1.0);
  CHECK(rep.residuals[1] == 0.0);
}

TEST_CASE("default step and momentum come from the spectrum") {
  Rng rng(11);
  const BoxQp qp = random_qp(rng, 5, 50.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qp.H);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  const double kappa = lmax / lmin;

  const SolveReport rep = apgd(qp, Eigen::VectorXd::Zero(5));
  CHECK(rep.alpha == doctest::Approx(1.0 / lmax).epsilon(1e-12));
  CHECK(rep.beta ==
        doctest::Approx((std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0)).epsilon(1e-10));
  CHECK(rep.kappa == doctest::Approx(kappa).epsilon(1e-10));
}

TEST_CASE("both solvers reach the enumerated optimum") {
  Rng rng(2024);
  SolveOptions so;
  so.tol = 1e-12;
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    const double kappa = std::pow(10.0, rng.uniform(0.0, 3.0));
    const BoxQp qp = random_qp(rng, n, kappa);
    const Eigen::VectorXd star = active_set_oracle(qp);

    const SolveReport r1 = pgd(qp, Eigen::VectorXd::Zero(n), so);
    const SolveReport r2 = apgd(qp, Eigen::VectorXd::Zero(n), so);
    REQUIRE(r1.converged);
    REQUIRE(r2.converged);
    CHECK((r1.u - star).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((r2.u - star).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("enumeration solves a separable instance in closed form") {
  BoxQp qp;
  qp.H = Eigen::MatrixXd::Identity(2, 2);
  qp.q = Eigen::VectorXd(2);
  qp.q << -3.0, 0.5;  // unconstrained optimum (3, -0.5)
  qp.lo = Eigen::VectorXd::Constant(2, -1.0);
  qp.hi = Eigen::VectorXd::Constant(2, 1.0);
  const Eigen::VectorXd star = active_set_oracle(qp);
  CHECK(star(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(star(1) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("zero momentum reproduces plain descent bitwise") {
  Rng rng(77);
  const BoxQp qp = random_qp(rng, 6, 200.0);
  SolveOptions so;
  so.tol = 1e-11;
  so.record_iterates = true;
  SolveOptions so_b0 = so;
  so_b0.beta = 0.0;

  const SolveReport plain = pgd(qp, Eigen::VectorXd::Zero(6), so);
  const SolveReport accel = apgd(qp, Eigen::VectorXd::Zero(6), so_b0);
  REQUIRE(plain.iters == accel.iters);
  for (std::size_t i = 0; i < plain.iterates.size(); ++i) {
    CHECK(std::memcmp(plain.iterates[i].data(), accel.iterates[i].data(),
                      6 * sizeof(double)) == 0);
  }
  for (std::size_t i = 0; i < plain.residuals.size(); ++i) {
    CHECK(plain.residuals[i] == accel.residuals[i]);
  }
}

TEST_CASE("start point is projected into the box first") {
  Rng rng(8);
  const BoxQp qp = random_qp(rng, 4, 10.0);
  SolveOptions so;
  so.record_iterates = true;
  so.max_iter = 3;
  Eigen::VectorXd u0(4);
  u0 << 5.0, -5.0, 0.5, 0.0;
  const SolveReport rep = apgd(qp, u0, so);
  const Eigen::VectorXd want = project_box(u0, qp.lo, qp.hi);
  CHECK((rep.iterates[0] - want).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("convergence certificates: linear fit, acceleration is steeper") {
  Rng rng(31);
  const int n = 6;
  BoxQp qp = random_qp(rng, n, 300.0);
  // Put the optimum strictly inside the box so the error decays linearly
  // forever instead of landing on a vertex in finitely many steps.
  Eigen::VectorXd target(n);
  for (int i = 0; i < n; ++i) target(i) = rng.uniform(-0.5, 0.5);
  qp.q = -qp.H * target;
  SolveOptions so;
  so.tol = 1e-13;
  so.record_iterates = true;

  const Eigen::VectorXd star = active_set_oracle(qp);
  const SolveReport plain = pgd(qp, Eigen::VectorXd::Zero(n), so);
  const SolveReport accel = apgd(qp, Eigen::VectorXd::Zero(n), so);

  const ConvergenceCert c1 = convergence_cert(plain, star, plain.kappa, false);
  const ConvergenceCert c2 = convergence_cert(accel, star, accel.kappa, true);
  CHECK(c1.pass);
  CHECK(c2.pass);
  CHECK(c1.points >= 10);
  CHECK(c1.rate < 1.0);
  CHECK(c2.rate < c1.rate);  // momentum contracts faster on an ill-conditioned problem
  CHECK(c1.theory_rate == doctest::Approx(1.0 - 1.0 / plain.kappa).epsilon(1e-12));
  CHECK(c2.theory_rate == doctest::Approx(1.0 - 1.0 / std::sqrt(accel.kappa)).epsilon(1e-12));
}

TEST_CASE("solver input validation") {
  BoxQp qp;
  qp.H = Eigen::MatrixXd::Identity(2, 2);
  qp.q = Eigen::VectorXd::Zero(2);
  qp.lo = Eigen::VectorXd::Constant(2, 1.0);
  qp.hi = Eigen::VectorXd::Constant(2, -1.0);  // inverted box
  CHECK_THROWS_AS(pgd(qp, Eigen::VectorXd::Zero(2)), DataError);

  qp.lo = Eigen::VectorXd::Constant(2, -1.0);
  qp.hi = Eigen::VectorXd::Constant(2, 1.0);
  CHECK_THROWS_AS(pgd(qp, Eigen::VectorXd::Zero(3)), DataError);  // wrong u0 size

  qp.H(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(pgd(qp, Eigen::VectorXd::Zero(2)), DataError);

  qp.H << 1.0, 2.0, 2.0, 1.0;  // symmetric but indefinite
  CHECK_THROWS_AS(pgd(qp, Eigen::VectorXd::Zero(2)), NumericError);
}
