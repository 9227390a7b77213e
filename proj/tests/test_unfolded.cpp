#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "htmpc/box_qp.hpp"
#include "htmpc/mpc_core.hpp"
#include "htmpc/nn_runtime.hpp"
#include "htmpc/rng.hpp"
#include "htmpc/unfolded.hpp"

using namespace htmpc;

namespace {

MpcProblem random_problem(Rng& rng, int n_x, int n_u, int N, bool identity_r) {
  MpcProblem p;
  p.sys.A = Eigen::MatrixXd::NullaryExpr(n_x, n_x, [&] { return rng.uniform(-0.7, 0.7); });
  p.sys.B = Eigen::MatrixXd::NullaryExpr(n_x, n_u, [&] { return rng.uniform(-1.0, 1.0); });
  Eigen::MatrixXd Mq = Eigen::MatrixXd::NullaryExpr(n_x, n_x, [&] { return rng.uniform(-1.0, 1.0); });
  p.Q = Mq.transpose() * Mq + 0.05 * Eigen::MatrixXd::Identity(n_x, n_x);
  p.P = p.Q;
  if (identity_r) {
    p.R = Eigen::MatrixXd::Identity(n_u, n_u);
  } else {
    Eigen::MatrixXd Mr = Eigen::MatrixXd::NullaryExpr(n_u, n_u, [&] { return rng.uniform(-1.0, 1.0); });
    p.R = Mr.transpose() * Mr + 0.5 * Eigen::MatrixXd::Identity(n_u, n_u);
  }
  p.N = N;
  p.u_lo = Eigen::VectorXd::Constant(n_u, -1.0);
  p.u_hi = Eigen::VectorXd::Constant(n_u, 1.0);
  return p;
}

Eigen::VectorXd random_state(Rng& rng, int n_x, double scale = 2.0) {
  return Eigen::VectorXd::NullaryExpr(n_x, [&] { return rng.uniform(-scale, scale); });
}

}  // namespace

TEST_CASE("warm start reproduces the solver spectrum choices") {
  Rng rng(1);
  const MpcProblem p = random_problem(rng, 3, 2, 4, false);
  const CondensedQp qp = condense(p);
  const UnfoldedParams params = init_from_mpc(p, qp, std::nullopt, std::nullopt, 4,
                                              UnfoldedVariant::dense,
                                              Eigen::VectorXd::Zero(qp.nu()));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qp.H);
  const double lmax = es.eigenvalues().maxCoeff();
  const double kappa = lmax / es.eigenvalues().minCoeff();
  REQUIRE(params.dense.size() == 3);  // depth = steps + selector
  for (const auto& l : params.dense) {
    CHECK(l.alpha == doctest::Approx(1.0 / lmax).epsilon(1e-12));
    CHECK(l.beta ==
          doctest::Approx((std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0)).epsilon(1e-12));
    CHECK((l.Q1 - qp.H).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((l.Q2 - qp.Q2).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("unfolded forward equals the recorded solver iterate bitwise") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_x = 1 + static_cast<int>(rng.below(3));
    const int n_u = 1 + static_cast<int>(rng.below(2));
    const int N = 2 + static_cast<int>(rng.below(3));
    const int depth = 2 + static_cast<int>(rng.below(5));
    const MpcProblem p = random_problem(rng, n_x, n_u, N, false);
    const CondensedQp qp = condense(p);
    const Eigen::VectorXd x0 = random_state(rng, n_x);

    const UnfoldedParams params = init_from_mpc(p, qp, std::nullopt, std::nullopt, depth,
                                                UnfoldedVariant::dense,
                                                Eigen::VectorXd::Zero(qp.nu()));

    BoxQp box{qp.H, q_of(qp, x0), qp.lo, qp.hi};
    SolveOptions so;
    so.record_iterates = true;
    so.max_iter = depth;  // at least depth-1 iterations recorded
    so.tol = 0.0;
    const SolveReport rep = apgd(box, Eigen::VectorXd::Zero(qp.nu()), so);

    const Eigen::VectorXd out = forward_unfolded(params, x0);
    const Eigen::VectorXd& want = rep.iterates[static_cast<std::size_t>(depth - 1)];
    REQUIRE(out.size() == want.size());
    CHECK(std::memcmp(out.data(), want.data(), sizeof(double) * out.size()) == 0);
  }
}

TEST_CASE("zero momentum reduces the network to plain descent bitwise") {
  Rng rng(3);
  const MpcProblem p = random_problem(rng, 2, 1, 3, false);
  const CondensedQp qp = condense(p);
  const Eigen::VectorXd x0 = random_state(rng, 2);
  const int depth = 5;

  const UnfoldedParams params = init_from_mpc(p, qp, std::nullopt, 0.0, depth,
                                              UnfoldedVariant::dense,
                                              Eigen::VectorXd::Zero(qp.nu()));
  BoxQp box{qp.H, q_of(qp, x0), qp.lo, qp.hi};
  SolveOptions so;
  so.record_iterates = true;
  so.max_iter = depth;
  so.tol = 0.0;
  const SolveReport rep = pgd(box, Eigen::VectorXd::Zero(qp.nu()), so);

  const Eigen::VectorXd out = forward_unfolded(params, x0);
  CHECK(std::memcmp(out.data(), rep.iterates[depth - 1].data(), sizeof(double) * out.size()) == 0);
}

TEST_CASE("factored layers match dense layers when the input weight is the identity") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const MpcProblem p = random_problem(rng, 3, 2, 3, true);  // R = I
    const CondensedQp qp = condense(p);
    const Eigen::VectorXd x0 = random_state(rng, 3);
    const int depth = 4;

    const UnfoldedParams dense = init_from_mpc(p, qp, std::nullopt, std::nullopt, depth,
                                               UnfoldedVariant::dense,
                                               Eigen::VectorXd::Zero(qp.nu()));
    const UnfoldedParams fact = init_from_mpc(p, qp, std::nullopt, std::nullopt, depth,
                                              UnfoldedVariant::structured,
                                              Eigen::VectorXd::Zero(qp.nu()));
    const Eigen::VectorXd a = forward_unfolded(dense, x0);
    const Eigen::VectorXd b = forward_unfolded(fact, x0);
    CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("factored warm start carries the condensation factors") {
  Rng rng(5);
  const MpcProblem p = random_problem(rng, 2, 2, 3, false);
  const CondensedQp qp = condense(p);
  const StackedDynamics s = stack_dynamics(p);
  const UnfoldedParams fact = init_from_mpc(p, qp, std::nullopt, std::nullopt, 3,
                                            UnfoldedVariant::structured,
                                            Eigen::VectorXd::Zero(qp.nu()));
  REQUIRE(fact.structured.size() == 2);
  for (const auto& l : fact.structured) {
    CHECK((l.Q11 - s.F.transpose() * s.W).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK((l.Q12 - s.F).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((l.Q21 - s.G).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("tied-power masks allow exactly the causal blocks") {
  const int n_x = 2, n_u = 1, N = 3;
  const SuperMasks masks = super_masks(n_x, n_u, N);
  REQUIRE(masks.q11.rows() == n_u * N);
  REQUIRE(masks.q11.cols() == n_x * N);
  for (int bi = 0; bi < N; ++bi) {
    for (int bj = 0; bj < N; ++bj) {
      const double want11 = bj >= bi ? 1.0 : 0.0;  // Q11 keeps upper block triangle
      const double want12 = bj <= bi ? 1.0 : 0.0;  // Q12 the lower
      CHECK(masks.q11.block(bi * n_u, bj * n_x, n_u, n_x).maxCoeff() == want11);
      CHECK(masks.q11.block(bi * n_u, bj * n_x, n_u, n_x).minCoeff() == want11);
      CHECK(masks.q12.block(bi * n_x, bj * n_u, n_x, n_u).maxCoeff() == want12);
      CHECK(masks.q12.block(bi * n_x, bj * n_u, n_x, n_u).minCoeff() == want12);
    }
  }
}

TEST_CASE("tied stacks rebuild from the single-step matrix") {
  Rng rng(6);
  const MpcProblem p = random_problem(rng, 2, 1, 4, false);
  const CondensedQp qp = condense(p);
  UnfoldedParams sup = init_from_mpc(p, qp, std::nullopt, std::nullopt, 3,
                                     UnfoldedVariant::super_structured,
                                     Eigen::VectorXd::Zero(qp.nu()));
  CHECK((sup.A_hat - p.sys.A).lpNorm<Eigen::Infinity>() == 0.0);

  sup.A_hat = Eigen::MatrixXd::NullaryExpr(2, 2, [&] { return rng.uniform(-0.5, 0.5); });
  refresh_super(sup);
  const Eigen::MatrixXd want = stack_powers(sup.A_hat, 4);
  for (const auto& l : sup.structured) {
    CHECK((l.Q21 - want).lpNorm<Eigen::Infinity>() == 0.0);
  }

  // stack_powers itself.
  Eigen::MatrixXd Ap = sup.A_hat;
  for (int t = 0; t < 4; ++t) {
    CHECK((want.block(t * 2, 0, 2, 2) - Ap).lpNorm<Eigen::Infinity>() < 1e-15);
    Ap = sup.A_hat * Ap;
  }
}

TEST_CASE("flattening to a plain network preserves the map") {
  Rng rng(7);
  for (int variant = 0; variant < 3; ++variant) {
    const MpcProblem p = random_problem(rng, 2, 2, 3, variant == 1);
    const CondensedQp qp = condense(p);
    const UnfoldedParams params = init_from_mpc(
        p, qp, std::nullopt, std::nullopt, 4, static_cast<UnfoldedVariant>(variant),
        Eigen::VectorXd::Zero(qp.nu()));
    const HtnnSpec net = to_htnn(params);
    CHECK(net.depth() == params.depth());
    CHECK(net.input_dim == 2);
    CHECK(net.output_dim() == qp.nu());

    ForwardEval eval(net);
    for (int s = 0; s < 50; ++s) {
      const Eigen::VectorXd x0 = random_state(rng, 2);
      const Eigen::VectorXd want = forward_unfolded(params, x0);
      const Eigen::VectorXd got = eval.run(x0);
      CHECK((got - want).lpNorm<Eigen::Infinity>() <=
            1e-9 * (1.0 + want.lpNorm<Eigen::Infinity>()));
    }
  }
}

TEST_CASE("effective layer maps reproduce one unrolled step") {
  Rng rng(8);
  const MpcProblem p = random_problem(rng, 2, 1, 3, false);
  const CondensedQp qp = condense(p);
  const int nu = qp.nu();
  for (int variant = 0; variant < 2; ++variant) {
    const UnfoldedParams params = init_from_mpc(
        p, qp, std::nullopt, std::nullopt, 3, static_cast<UnfoldedVariant>(variant),
        Eigen::VectorXd::Zero(nu));
    const auto eff = effective_layers(params);
    REQUIRE(eff.size() == static_cast<std::size_t>(params.depth() - 1));

    const Eigen::VectorXd x0 = random_state(rng, 2);
    const Eigen::VectorXd u_prev = random_state(rng, nu, 0.5);
    const Eigen::VectorXd u_cur = random_state(rng, nu, 0.5);

    // Layer t >= 1 sees y = u_cur + beta (u_cur - u_prev); layer 0 sees u_cur.
    for (std::size_t t = 0; t < eff.size(); ++t) {
      const double alpha = variant == 0 ? params.dense[t].alpha : params.structured[t].alpha;
      const double beta = t == 0 ? 0.0
                                 : (variant == 0 ? params.dense[t].beta : params.structured[t].beta);
      const Eigen::VectorXd y = u_cur + beta * (u_cur - u_prev);
      Eigen::VectorXd z;
      if (variant == 0) {
        const auto& l = params.dense[t];
        z = y - alpha * (l.Q1 * y + l.Q2 * x0);
      } else {
        const auto& l = params.structured[t];
        z = (1.0 - alpha) * y - alpha * (l.Q11 * (l.Q12 * y + l.Q21 * x0));
      }
      const Eigen::VectorXd via_eff = eff[t].W1 * u_prev + eff[t].W2 * u_cur + eff[t].B * x0;
      CHECK((z - via_eff).lpNorm<Eigen::Infinity>() < 1e-11);
    }
  }
}

TEST_CASE("parameter validation") {
  Rng rng(9);
  const MpcProblem p = random_problem(rng, 2, 1, 2, false);
  const CondensedQp qp = condense(p);
  CHECK_THROWS_AS(init_from_mpc(p, qp, std::nullopt, std::nullopt, 1, UnfoldedVariant::dense,
                                Eigen::VectorXd::Zero(qp.nu())),
                  DataError);  // depth must be >= 2

  UnfoldedParams params = init_from_mpc(p, qp, std::nullopt, std::nullopt, 3,
                                        UnfoldedVariant::dense, Eigen::VectorXd::Zero(qp.nu()));
  params.dense[0].Q1 = Eigen::MatrixXd::Zero(1, 1);
  CHECK_THROWS_AS(params.validate(), DataError);

  params = init_from_mpc(p, qp, std::nullopt, std::nullopt, 3, UnfoldedVariant::dense,
                         Eigen::VectorXd::Zero(qp.nu()));
  CHECK_THROWS_AS(forward_unfolded(params, Eigen::VectorXd::Zero(5)), DataError);
}
