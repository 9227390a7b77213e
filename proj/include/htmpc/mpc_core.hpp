#pragma once

#include <Eigen/Dense>

#include "htmpc/common.hpp"

namespace htmpc {

/// Discrete-time LTI dynamics x+ = A x + B u.
struct LtiSystem {
  Eigen::MatrixXd A;  // n_x x n_x
  Eigen::MatrixXd B;  // n_x x n_u

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B.cols()); }
  void validate() const;
};

/// Finite-horizon quadratic regulation problem with per-component input bounds.
/// Cost: sum_{t=0}^{N-1} 0.5 (x_t'Q x_t + u_t'R u_t) + 0.5 x_N'P x_N.
struct MpcProblem {
  LtiSystem sys;
  Eigen::MatrixXd Q;  // n_x x n_x, symmetric PSD
  Eigen::MatrixXd R;  // n_u x n_u, symmetric PD
  Eigen::MatrixXd P;  // n_x x n_x, symmetric PSD terminal weight
  int N = 0;
  Eigen::VectorXd u_lo, u_hi;  // n_u, stage input box

  int nu() const { return N * sys.n_u(); }
  void validate() const;
};

/// Stacked prediction operators for x_1..x_N as a function of u_0..u_{N-1}:
/// X = F U + G x0 with F block lower-triangular Toeplitz (block row t is
/// [A^{t-1}B ... B 0 ... 0]) and G = [A; A^2; ...; A^N]. W is the matching
/// stage-weight block diagonal diag(Q, ..., Q, P).
struct StackedDynamics {
  Eigen::MatrixXd F;  // N n_x x nu
  Eigen::MatrixXd G;  // N n_x x n_x
  Eigen::MatrixXd W;  // N n_x x N n_x
};

StackedDynamics stack_dynamics(const MpcProblem& p);

/// Condensed box-constrained QP over the stacked input sequence u = [u_0; ...; u_{N-1}]:
/// min 0.5 u'H u + (Q2 x0)'u + const(x0)  s.t.  lo <= u <= hi.
struct CondensedQp {
  Eigen::MatrixXd H;   // nu x nu, symmetric positive definite
  Eigen::MatrixXd Q2;  // nu x n_x; the linear term is q(x0) = Q2 x0
  Eigen::VectorXd lo, hi;  // nu, stage bounds tiled N times
  int n_x = 0, n_u = 0, N = 0;

  int nu() const { return N * n_u; }
  void validate() const;
};

/// Exact condensation of the horizon into the input-sequence QP.
/// Throws NumericError when the resulting H is not positive definite.
CondensedQp condense(const MpcProblem& p);

/// Linear term of the condensed objective at initial state x0.
Eigen::VectorXd q_of(const CondensedQp& qp, const Eigen::VectorXd& x0);

/// Cost of rolling the stacked input sequence through the dynamics from x0.
double rollout_cost(const MpcProblem& p, const Eigen::VectorXd& x0, const Eigen::VectorXd& u);

/// Constant term of the condensed objective (rollout cost with u = 0).
double condensed_offset(const MpcProblem& p, const Eigen::VectorXd& x0);

/// Zero-order-hold discretization of continuous dynamics (Ac, Bc) at step dt,
/// via the matrix exponential of the augmented [[Ac, Bc]; [0, 0]] * dt.
LtiSystem zoh_discretize(const Eigen::MatrixXd& Ac, const Eigen::MatrixXd& Bc, double dt);

}  // namespace htmpc
