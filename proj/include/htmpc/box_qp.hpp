#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "htmpc/common.hpp"

namespace htmpc {

/// min 0.5 u'H u + q'u  s.t.  lo <= u <= hi, with H symmetric positive definite.
struct BoxQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd q, lo, hi;

  int nu() const { return static_cast<int>(q.size()); }
  void validate() const;
};

struct SolveOptions {
  int max_iter = 100000;
  double tol = 1e-10;            // stop when ||u_{k+1} - u_k|| <= tol
  bool record_iterates = false;  // keep the full iterate history (u_0 included)
  std::optional<double> alpha;   // default 1 / lambda_max(H)
  std::optional<double> beta;    // default (sqrt(k)-1)/(sqrt(k)+1), k = cond(H)
};

struct SolveReport {
  std::string method;
  double alpha = 0.0, beta = 0.0;
  double lambda_max = 0.0, lambda_min = 0.0, kappa = 0.0;
  int iters = 0;
  bool converged = false;
  Eigen::VectorXd u;
  std::vector<double> residuals;           // ||u_{k+1} - u_k|| per step
  std::vector<Eigen::VectorXd> iterates;   // filled when record_iterates
};

/// Componentwise clamp of v to [lo, hi].
Eigen::VectorXd project_box(const Eigen::VectorXd& v, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi);

/// Projected gradient descent: u+ = clamp(u - alpha (H u + q)).
SolveReport pgd(const BoxQp& qp, const Eigen::VectorXd& u0, const SolveOptions& opts = {});

/// Accelerated variant with constant momentum:
/// u+ = clamp(y - alpha (H y + q)), y+ = u+ + beta (u+ - u).
SolveReport apgd(const BoxQp& qp, const Eigen::VectorXd& u0, const SolveOptions& opts = {});

/// Exact solution by enumeration of active-set patterns. Each coordinate is
/// tried at its lower bound, upper bound, or free (3^nu patterns, nu <= 12).
/// Patterns are scanned in ascending base-3 counter order with coordinate 0 as
/// the most significant digit and digit values lo=0, hi=1, free=2; the first
/// pattern passing the stationarity and sign checks wins ties.
Eigen::VectorXd active_set_oracle(const BoxQp& qp);

/// Least-squares fit of log ||u_k - u_star|| against k over the recorded
/// iterate history (entries below 1e-12 are dropped).
struct ConvergenceCert {
  bool pass = false;     // linear decay: r2 >= 0.95 and negative slope
  double rate = 0.0;     // exp(fitted slope), per-iteration error contraction
  double r2 = 0.0;
  double theory_rate = 0.0;  // 1 - 1/kappa (plain) or 1 - 1/sqrt(kappa) (accelerated)
  int points = 0;
};

ConvergenceCert convergence_cert(const SolveReport& report, const Eigen::VectorXd& u_star,
                                 double kappa, bool accelerated);

}  // namespace htmpc
