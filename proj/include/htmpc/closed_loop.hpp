#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "htmpc/box_qp.hpp"
#include "htmpc/htnn.hpp"
#include "htmpc/minmax.hpp"
#include "htmpc/mpc_core.hpp"
#include "htmpc/unfolded.hpp"

namespace htmpc {

/// Chain of point masses coupled to their neighbors and to the walls by
/// spring-damper pairs, one force input per mass, sampled with a zero-order
/// hold. State ordering is [p_1, v_1, p_2, v_2, ...].
struct OscillatingMassesSpec {
  int n_masses = 2;
  double mass = 1.0;
  double spring_k = 1.0;
  double damping_c = 0.5;
  double dt = 0.1;
  double u_max = 1.0;
  int horizon = 5;

  void validate() const;
};

LtiSystem build_masses_system(const OscillatingMassesSpec& spec);

/// Identity state, input, and terminal weights over the discretized chain
/// with the symmetric input box.
MpcProblem make_masses_problem(const OscillatingMassesSpec& spec);

/// A state-feedback policy producing the full stacked input plan; the
/// simulator applies the first n_u entries after clamping them to the box.
struct Controller {
  std::string name;
  int nu = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn;
};

/// Receding-horizon controller that solves the condensed problem from a cold
/// start at every step.
Controller mpc_controller(const MpcProblem& problem, const SolveOptions& opts = {});

Controller net_controller(const HtnnSpec& net, std::string name = "htnn");
Controller unfolded_controller(const UnfoldedParams& params, std::string name = "unfolded");
Controller minmax_controller(const MinMaxVector& law, std::string name = "minmax");

struct Trajectory {
  std::string controller;
  Eigen::MatrixXd X;                 // n_x x (T+1)
  Eigen::MatrixXd U;                 // n_u x T, applied (clamped) inputs
  std::vector<double> eval_seconds;  // controller query time per step
};

/// Roll the plant for T steps under the controller. Controller failures are
/// rethrown with the step index attached.
Trajectory simulate(const MpcProblem& problem, const Controller& ctrl, const Eigen::VectorXd& x0,
                    int T);

struct TrajectoryMetrics {
  int violations = 0;              // applied inputs outside the box (clamping keeps this 0)
  double terminal_ratio = 0.0;     // ||x_T|| / ||x_0||
  double max_input_deviation = 0.0;  // max over steps of the sup-norm gap vs the reference
  double mean_eval_seconds = 0.0;
};

TrajectoryMetrics trajectory_metrics(const MpcProblem& problem, const Trajectory& traj,
                                     const Trajectory* reference = nullptr);

}  // namespace htmpc
