#include "htmpc/closed_loop.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>

#include "htmpc/nn_runtime.hpp"

namespace htmpc {

void OscillatingMassesSpec::validate() const {
  require(n_masses >= 1, "need at least one mass");
  require(mass > 0.0 && spring_k > 0.0 && damping_c > 0.0, "physical constants must be positive");
  require(dt > 0.0 && std::isfinite(dt), "sampling time must be positive");
  require(u_max > 0.0 && std::isfinite(u_max), "input bound must be positive");
  require(horizon >= 1, "prediction horizon must be positive");
}

LtiSystem build_masses_system(const OscillatingMassesSpec& spec) {
  spec.validate();
  const int n = spec.n_masses;
  const double k = spec.spring_k / spec.mass;
  const double c = spec.damping_c / spec.mass;

  Eigen::MatrixXd Ac = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  Eigen::MatrixXd Bc = Eigen::MatrixXd::Zero(2 * n, n);
  for (int i = 0; i < n; ++i) {
    const int p = 2 * i, v = 2 * i + 1;
    Ac(p, v) = 1.0;
    // Both neighbors pull; a missing neighbor is a wall at rest, which
    // contributes the same restoring terms with zero position and velocity.
    Ac(v, p) = -2.0 * k;
    Ac(v, v) = -2.0 * c;
    if (i > 0) {
      Ac(v, p - 2) = k;
      Ac(v, v - 2) = c;
    }
    if (i + 1 < n) {
      Ac(v, p + 2) = k;
      Ac(v, v + 2) = c;
    }
    Bc(v, i) = 1.0 / spec.mass;
  }
  return zoh_discretize(Ac, Bc, spec.dt);
}

MpcProblem make_masses_problem(const OscillatingMassesSpec& spec) {
  const LtiSystem sys = build_masses_system(spec);
  MpcProblem problem;
  problem.sys = sys;
  problem.Q = Eigen::MatrixXd::Identity(sys.n_x(), sys.n_x());
  problem.R = Eigen::MatrixXd::Identity(sys.n_u(), sys.n_u());
  problem.P = Eigen::MatrixXd::Identity(sys.n_x(), sys.n_x());
  problem.N = spec.horizon;
  problem.u_lo = Eigen::VectorXd::Constant(sys.n_u(), -spec.u_max);
  problem.u_hi = Eigen::VectorXd::Constant(sys.n_u(), spec.u_max);
  problem.validate();
  return problem;
}

Controller mpc_controller(const MpcProblem& problem, const SolveOptions& opts) {
  problem.validate();
  auto qp = std::make_shared<CondensedQp>(condense(problem));
  auto options = std::make_shared<SolveOptions>(opts);
  Controller c;
  c.name = "mpc";
  c.nu = qp->nu();
  c.fn = [qp, options](const Eigen::VectorXd& x) {
    BoxQp box{qp->H, q_of(*qp, x), qp->lo, qp->hi};
    const SolveReport rep = apgd(box, Eigen::VectorXd::Zero(qp->nu()), *options);
    require_numeric(rep.converged, "solver did not converge");
    return rep.u;
  };
  return c;
}

Controller net_controller(const HtnnSpec& net, std::string name) {
  auto holder = std::make_shared<HtnnSpec>(net);
  auto eval = std::make_shared<ForwardEval>(*holder);
  Controller c;
  c.name = std::move(name);
  c.nu = holder->output_dim();
  c.fn = [holder, eval](const Eigen::VectorXd& x) { return eval->run(x); };
  return c;
}

Controller unfolded_controller(const UnfoldedParams& params, std::string name) {
  params.validate();
  auto holder = std::make_shared<UnfoldedParams>(params);
  Controller c;
  c.name = std::move(name);
  c.nu = holder->nu();
  c.fn = [holder](const Eigen::VectorXd& x) { return forward_unfolded(*holder, x); };
  return c;
}

Controller minmax_controller(const MinMaxVector& law, std::string name) {
  law.validate();
  auto holder = std::make_shared<MinMaxVector>(law);
  Controller c;
  c.name = std::move(name);
  c.nu = holder->n_u();
  c.fn = [holder](const Eigen::VectorXd& x) { return eval_vector(*holder, x); };
  return c;
}

Trajectory simulate(const MpcProblem& problem, const Controller& ctrl, const Eigen::VectorXd& x0,
                    int T) {
  problem.validate();
  require(T >= 1, "need at least one step");
  const int n_x = problem.sys.n_x();
  const int n_u = problem.sys.n_u();
  require(x0.size() == n_x, "initial state size mismatch");
  require_numeric(x0.allFinite(), "initial state must be finite");
  require(ctrl.nu >= n_u && ctrl.fn, "controller must produce at least the applied inputs");

  Trajectory traj;
  traj.controller = ctrl.name;
  traj.X.resize(n_x, T + 1);
  traj.U.resize(n_u, T);
  traj.eval_seconds.reserve(static_cast<std::size_t>(T));
  traj.X.col(0) = x0;

  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd plan;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      plan = ctrl.fn(traj.X.col(t));
    } catch (const std::exception& e) {
      throw NumericError("controller '" + ctrl.name + "' failed at step " + std::to_string(t) +
                         ": " + e.what());
    }
    traj.eval_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    require(plan.size() == ctrl.nu, "controller output size mismatch");

    const Eigen::VectorXd u =
        plan.head(n_u).cwiseMax(problem.u_lo).cwiseMin(problem.u_hi);
    traj.U.col(t) = u;
    traj.X.col(t + 1) = problem.sys.A * traj.X.col(t) + problem.sys.B * u;
    require_numeric(traj.X.col(t + 1).allFinite(), "state diverged during simulation");
  }
  return traj;
}

TrajectoryMetrics trajectory_metrics(const MpcProblem& problem, const Trajectory& traj,
                                     const Trajectory* reference) {
  const int T = static_cast<int>(traj.U.cols());
  require(traj.X.cols() == T + 1 && T >= 1, "trajectory shape mismatch");
  require(traj.U.rows() == problem.sys.n_u(), "input size mismatch");

  TrajectoryMetrics m;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < traj.U.rows(); ++i) {
      if (traj.U(i, t) < problem.u_lo(i) || traj.U(i, t) > problem.u_hi(i)) {
        ++m.violations;
        break;
      }
    }
  }

  const double n0 = traj.X.col(0).norm();
  const double nT = traj.X.col(T).norm();
  m.terminal_ratio = n0 > 0.0 ? nT / n0
                              : (nT == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());

  if (reference) {
    require(reference->U.rows() == traj.U.rows() && reference->U.cols() == traj.U.cols(),
            "reference trajectory shape mismatch");
    for (int t = 0; t < T; ++t) {
      m.max_input_deviation = std::max(
          m.max_input_deviation, (traj.U.col(t) - reference->U.col(t)).cwiseAbs().maxCoeff());
    }
  }

  if (!traj.eval_seconds.empty()) {
    double s = 0.0;
    for (double v : traj.eval_seconds) s += v;
    m.mean_eval_seconds = s / static_cast<double>(traj.eval_seconds.size());
  }
  return m;
}

}  // namespace htmpc
