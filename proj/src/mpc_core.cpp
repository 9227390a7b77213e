#include "htmpc/mpc_core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include "htmpc/kernels.hpp"

namespace htmpc {

namespace {

void require_symmetric(const Eigen::MatrixXd& M, const char* name, double tol = 1e-12) {
  require(M.rows() == M.cols(), std::string(name) + " must be square");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  require((M - M.transpose()).cwiseAbs().maxCoeff() <= tol * scale,
          std::string(name) + " must be symmetric");
}

void require_psd(const Eigen::MatrixXd& M, const char* name) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  require(es.eigenvalues().minCoeff() >= -1e-12 * scale,
          std::string(name) + " must be positive semidefinite");
}

void require_pd(const Eigen::MatrixXd& M, const char* name) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() > 0.0, std::string(name) + " must be positive definite");
}

}  // namespace

void LtiSystem::validate() const {
  require(A.rows() > 0 && A.rows() == A.cols(), "A must be square and non-empty");
  require(B.rows() == A.rows() && B.cols() > 0, "B must have n_x rows and at least one column");
  require(A.allFinite() && B.allFinite(), "system matrices must be finite");
}

void MpcProblem::validate() const {
  sys.validate();
  require(N >= 1, "horizon N must be >= 1");
  require(Q.rows() == sys.n_x() && P.rows() == sys.n_x(), "Q and P must be n_x x n_x");
  require(R.rows() == sys.n_u(), "R must be n_u x n_u");
  require_symmetric(Q, "Q");
  require_symmetric(R, "R");
  require_symmetric(P, "P");
  require_psd(Q, "Q");
  require_psd(P, "P");
  require_pd(R, "R");
  require(u_lo.size() == sys.n_u() && u_hi.size() == sys.n_u(),
          "input bounds must have n_u entries");
  require((u_lo.array() < u_hi.array()).all(), "input bounds must satisfy lo < hi");
}

void CondensedQp::validate() const {
  const int n = nu();
  require(n > 0 && H.rows() == n && H.cols() == n, "H must be nu x nu");
  require(Q2.rows() == n && Q2.cols() == n_x, "Q2 must be nu x n_x");
  require(lo.size() == n && hi.size() == n, "bounds must have nu entries");
  require((lo.array() < hi.array()).all(), "bounds must satisfy lo < hi");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  require((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, "H must be symmetric");
}

StackedDynamics stack_dynamics(const MpcProblem& p) {
  p.validate();
  const int nx = p.sys.n_x();
  const int nu1 = p.sys.n_u();
  const int N = p.N;

  StackedDynamics s;
  s.F = Eigen::MatrixXd::Zero(N * nx, N * nu1);
  s.G = Eigen::MatrixXd::Zero(N * nx, nx);
  s.W = Eigen::MatrixXd::Zero(N * nx, N * nx);

  // Powers A^t B for t = 0..N-1 and A^t for t = 1..N.
  std::vector<Eigen::MatrixXd> AtB(N);
  AtB[0] = p.sys.B;
  for (int t = 1; t < N; ++t) AtB[t] = p.sys.A * AtB[t - 1];

  Eigen::MatrixXd Apow = p.sys.A;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j <= i; ++j) {
      s.F.block(i * nx, j * nu1, nx, nu1) = AtB[i - j];
    }
    s.G.block(i * nx, 0, nx, nx) = Apow;
    if (i + 1 < N) Apow = p.sys.A * Apow;
    s.W.block(i * nx, i * nx, nx, nx) = (i == N - 1) ? p.P : p.Q;
  }
  return s;
}

CondensedQp condense(const MpcProblem& p) {
  const StackedDynamics s = stack_dynamics(p);
  const int N = p.N;
  const int nu1 = p.sys.n_u();

  CondensedQp qp;
  qp.n_x = p.sys.n_x();
  qp.n_u = nu1;
  qp.N = N;

  Eigen::MatrixXd Rblk = Eigen::MatrixXd::Zero(N * nu1, N * nu1);
  for (int i = 0; i < N; ++i) Rblk.block(i * nu1, i * nu1, nu1, nu1) = p.R;

  Eigen::MatrixXd H = Rblk + s.F.transpose() * s.W * s.F;
  qp.H = 0.5 * (H + H.transpose());  // kill rounding asymmetry
  qp.Q2 = s.F.transpose() * s.W * s.G;

  qp.lo = p.u_lo.replicate(N, 1);
  qp.hi = p.u_hi.replicate(N, 1);

  Eigen::LLT<Eigen::MatrixXd> llt(qp.H);
  require_numeric(llt.info() == Eigen::Success,
                  "condensed Hessian is not positive definite (ill-posed weights)");
  return qp;
}

Eigen::VectorXd q_of(const CondensedQp& qp, const Eigen::VectorXd& x0) {
  require(x0.size() == qp.n_x, "x0 must have n_x entries");
  Eigen::VectorXd q(qp.nu());
  // Through the kernel layer so the value is bitwise identical to the bias
  // injection the unfolded forward pass computes per layer.
  kernels::active().affine(qp.Q2.data(), static_cast<std::size_t>(qp.Q2.rows()),
                           static_cast<std::size_t>(qp.Q2.cols()), x0.data(), nullptr, q.data());
  return q;
}

double rollout_cost(const MpcProblem& p, const Eigen::VectorXd& x0, const Eigen::VectorXd& u) {
  p.validate();
  const int nu1 = p.sys.n_u();
  require(x0.size() == p.sys.n_x(), "x0 must have n_x entries");
  require(u.size() == p.nu(), "u must stack N inputs");

  Eigen::VectorXd x = x0;
  double cost = 0.0;
  for (int t = 0; t < p.N; ++t) {
    const auto ut = u.segment(t * nu1, nu1);
    cost += 0.5 * x.dot(p.Q * x) + 0.5 * ut.dot(p.R * ut);
    x = p.sys.A * x + p.sys.B * ut;
  }
  cost += 0.5 * x.dot(p.P * x);
  return cost;
}

double condensed_offset(const MpcProblem& p, const Eigen::VectorXd& x0) {
  return rollout_cost(p, x0, Eigen::VectorXd::Zero(p.nu()));
}

LtiSystem zoh_discretize(const Eigen::MatrixXd& Ac, const Eigen::MatrixXd& Bc, double dt) {
  require(Ac.rows() > 0 && Ac.rows() == Ac.cols(), "Ac must be square");
  require(Bc.rows() == Ac.rows(), "Bc must have n_x rows");
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive and finite");
  const int nx = static_cast<int>(Ac.rows());
  const int nu1 = static_cast<int>(Bc.cols());

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nx + nu1, nx + nu1);
  M.topLeftCorner(nx, nx) = Ac * dt;
  M.topRightCorner(nx, nu1) = Bc * dt;
  const Eigen::MatrixXd E = M.exp();

  LtiSystem d;
  d.A = E.topLeftCorner(nx, nx);
  d.B = E.topRightCorner(nx, nu1);
  require_numeric(d.A.allFinite() && d.B.allFinite(), "matrix exponential overflowed");
  return d;
}

}  // namespace htmpc
