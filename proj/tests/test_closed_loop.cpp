#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "htmpc/closed_loop.hpp"
#include "htmpc/nn_runtime.hpp"
#include "htmpc/rng.hpp"

using namespace htmpc;

namespace {

Eigen::VectorXd start_state() {
  Eigen::VectorXd x0(4);
  x0 << 4.0, 10.0, -1.0, -1.0;
  return x0;
}

}  // namespace

TEST_CASE("two-mass chain matches a hand-built continuous model") {
  OscillatingMassesSpec spec;  // defaults: 2 masses, k = 1, c = 0.5, dt = 0.1
  const LtiSystem sys = build_masses_system(spec);
  REQUIRE(sys.n_x() == 4);
  REQUIRE(sys.n_u() == 2);

  // Wall-mass-mass-wall chain, state [p1, v1, p2, v2]:
  //   vdot_1 = -2 k p1 - 2 c v1 + k p2 + c v2 + u1   (left wall + right neighbor)
  Eigen::MatrixXd Ac(4, 4), Bc(4, 2);
  Ac << 0, 1, 0, 0,
       -2, -1, 1, 0.5,
        0, 0, 0, 1,
        1, 0.5, -2, -1;
  Bc << 0, 0,
        1, 0,
        0, 0,
        0, 1;
  const LtiSystem want = zoh_discretize(Ac, Bc, 0.1);
  CHECK((sys.A - want.A).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((sys.B - want.B).lpNorm<Eigen::Infinity>() == 0.0);

  // Discretized chain is open-loop stable (damping), eigenvalues inside the circle.
  const Eigen::VectorXcd ev = sys.A.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) CHECK(std::abs(ev(i)) < 1.0);
}

TEST_CASE("mass problem carries identity weights and the symmetric box") {
  OscillatingMassesSpec spec;
  spec.n_masses = 3;
  const MpcProblem p = make_masses_problem(spec);
  p.validate();
  CHECK(p.sys.n_x() == 6);
  CHECK(p.sys.n_u() == 3);
  CHECK(p.N == 5);
  CHECK((p.Q - Eigen::MatrixXd::Identity(6, 6)).norm() == 0.0);
  CHECK((p.R - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
  CHECK((p.P - Eigen::MatrixXd::Identity(6, 6)).norm() == 0.0);
  CHECK(p.u_lo.minCoeff() == -1.0);
  CHECK(p.u_hi.maxCoeff() == 1.0);
}

TEST_CASE("receding-horizon control stabilizes the aggressive start") {
  OscillatingMassesSpec spec;
  const MpcProblem p = make_masses_problem(spec);
  const Trajectory traj = simulate(p, mpc_controller(p), start_state(), 100);

  REQUIRE(traj.X.cols() == 101);
  REQUIRE(traj.U.cols() == 100);

  // Recorded states follow the plant dynamics exactly.
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd next = p.sys.A * traj.X.col(t) + p.sys.B * traj.U.col(t);
    CHECK((traj.X.col(t + 1) - next).lpNorm<Eigen::Infinity>() < 1e-12);
  }

  const TrajectoryMetrics m = trajectory_metrics(p, traj);
  CHECK(m.violations == 0);
  CHECK(m.terminal_ratio < 0.05);
  CHECK(m.mean_eval_seconds > 0.0);
}

TEST_CASE("network controllers agree with their underlying maps") {
  OscillatingMassesSpec spec;
  const MpcProblem p = make_masses_problem(spec);
  const CondensedQp qp = condense(p);
  const UnfoldedParams params = init_from_mpc(p, qp, std::nullopt, std::nullopt, 4,
                                              UnfoldedVariant::dense,
                                              Eigen::VectorXd::Zero(qp.nu()));
  const HtnnSpec net = to_htnn(params);

  const Controller cu = unfolded_controller(params);
  const Controller cn = net_controller(net);
  CHECK(cu.nu == qp.nu());
  CHECK(cn.nu == qp.nu());

  Rng rng(4);
  for (int s = 0; s < 20; ++s) {
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-2.0, 2.0);
    CHECK((cu.fn(x) - forward_unfolded(params, x)).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((cn.fn(x) - forward(net, x)).lpNorm<Eigen::Infinity>() == 0.0);
  }

  // Both roll out without blowing up.
  const Trajectory t1 = simulate(p, cu, start_state(), 30);
  CHECK(t1.X.allFinite());
}

TEST_CASE("analytic law controller evaluates the min-max expression") {
  MinMaxScalar f;
  f.n_x = 2;
  AffineTerm t1, t2;
  t1.c = (Eigen::VectorXd(2) << -1.0, 0.0).finished();
  t1.d = 0.0;
  t2.c = (Eigen::VectorXd(2) << 0.0, -0.5).finished();
  t2.d = 0.1;
  f.terms = {t1, t2};
  f.groups = {{0, 1}};
  MinMaxVector law;
  law.n_x = 2;
  law.outputs = {f};

  const Controller ctrl = minmax_controller(law);
  Eigen::VectorXd x(2);
  x << 0.5, -0.5;
  CHECK(ctrl.fn(x)(0) == doctest::Approx(std::max(-0.5, 0.35)).epsilon(1e-15));

  // A one-input plant driven by the law.
  MpcProblem p;
  p.sys.A = (Eigen::MatrixXd(2, 2) << 0.9, 0.1, 0.0, 0.8).finished();
  p.sys.B = (Eigen::MatrixXd(2, 1) << 0.0, 0.1).finished();
  p.Q = Eigen::MatrixXd::Identity(2, 2);
  p.R = Eigen::MatrixXd::Identity(1, 1);
  p.P = Eigen::MatrixXd::Identity(2, 2);
  p.N = 1;
  p.u_lo = Eigen::VectorXd::Constant(1, -1.0);
  p.u_hi = Eigen::VectorXd::Constant(1, 1.0);
  const Trajectory traj = simulate(p, ctrl, x, 20);
  CHECK(traj.X.allFinite());
  CHECK(trajectory_metrics(p, traj).violations == 0);
}

TEST_CASE("controller failures carry the step index") {
  OscillatingMassesSpec spec;
  const MpcProblem p = make_masses_problem(spec);
  Controller bad;
  bad.name = "exploder";
  bad.nu = p.nu();
  int calls = 0;
  bad.fn = [&](const Eigen::VectorXd&) -> Eigen::VectorXd {
    if (++calls >= 3) throw NumericError("boom");
    return Eigen::VectorXd::Zero(p.nu());
  };
  try {
    simulate(p, bad, start_state(), 10);
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("exploder") != std::string::npos);
    CHECK(msg.find("step 2") != std::string::npos);
  }
}

TEST_CASE("metrics: degenerate starts, references, and deviation") {
  OscillatingMassesSpec spec;
  const MpcProblem p = make_masses_problem(spec);

  Trajectory traj;
  traj.controller = "still";
  traj.X = Eigen::MatrixXd::Zero(4, 3);
  traj.U = Eigen::MatrixXd::Zero(2, 2);
  const TrajectoryMetrics m0 = trajectory_metrics(p, traj);
  CHECK(m0.terminal_ratio == 0.0);  // 0 / 0 counts as settled
  CHECK(m0.violations == 0);

  Trajectory ref = traj;
  ref.U.array() += 0.25;
  const TrajectoryMetrics md = trajectory_metrics(p, traj, &ref);
  CHECK(md.max_input_deviation == doctest::Approx(0.25).epsilon(1e-14));

  Trajectory out = traj;
  out.U(0, 1) = 7.0;  // outside the box
  const TrajectoryMetrics mv = trajectory_metrics(p, out);
  CHECK(mv.violations == 1);
}
