#include "htmpc/unfolded.hpp"

#include <cmath>

#include "htmpc/kernels.hpp"

namespace htmpc {

void UnfoldedParams::validate() const {
  require(n_x >= 1 && n_u >= 1 && N >= 1, "state, input, and horizon sizes must be positive");
  const int v = nu();
  require(lo.size() == v && hi.size() == v && u0.size() == v,
          "bound and warm-start sizes must match the stacked input size");
  require(lo.allFinite() && hi.allFinite() && u0.allFinite(), "bounds and warm start must be finite");
  for (int i = 0; i < v; ++i) require(lo(i) < hi(i), "box must have lo < hi");

  const bool is_dense = variant == UnfoldedVariant::dense;
  require(is_dense ? (!dense.empty() && structured.empty())
                   : (!structured.empty() && dense.empty()),
          "layer storage must match the variant");

  for (const auto& l : dense) {
    require(std::isfinite(l.alpha) && std::isfinite(l.beta), "layer scalars must be finite");
    require(l.Q1.rows() == v && l.Q1.cols() == v, "Q1 must be nu x nu");
    require(l.Q2.rows() == v && l.Q2.cols() == n_x, "Q2 must be nu x n_x");
    require(l.Q1.allFinite() && l.Q2.allFinite(), "layer matrices must be finite");
  }
  const int s = N * n_x;
  for (const auto& l : structured) {
    require(std::isfinite(l.alpha) && std::isfinite(l.beta), "layer scalars must be finite");
    require(l.Q11.rows() == v && l.Q11.cols() == s, "Q11 must be nu x (N n_x)");
    require(l.Q12.rows() == s && l.Q12.cols() == v, "Q12 must be (N n_x) x nu");
    require(l.Q21.rows() == s && l.Q21.cols() == n_x, "Q21 must be (N n_x) x n_x");
    require(l.Q11.allFinite() && l.Q12.allFinite() && l.Q21.allFinite(),
            "layer matrices must be finite");
  }
  if (variant == UnfoldedVariant::super_structured) {
    require(A_hat.rows() == n_x && A_hat.cols() == n_x && A_hat.allFinite(),
            "A_hat must be a finite n_x x n_x matrix");
  }
}

SuperMasks super_masks(int n_x, int n_u, int N) {
  require(n_x >= 1 && n_u >= 1 && N >= 1, "mask sizes must be positive");
  SuperMasks m;
  m.q11 = Eigen::MatrixXd::Zero(N * n_u, N * n_x);
  m.q12 = Eigen::MatrixXd::Zero(N * n_x, N * n_u);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      if (j >= i) m.q11.block(i * n_u, j * n_x, n_u, n_x).setOnes();
      if (j <= i) m.q12.block(i * n_x, j * n_u, n_x, n_u).setOnes();
    }
  }
  return m;
}

Eigen::MatrixXd stack_powers(const Eigen::MatrixXd& A, int N) {
  require(A.rows() == A.cols() && A.rows() >= 1, "A must be square");
  require(N >= 1, "need at least one power");
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd out(N * n, n);
  Eigen::MatrixXd p = A;
  out.topRows(n) = p;
  for (int t = 1; t < N; ++t) {
    p = A * p;
    out.middleRows(t * n, n) = p;
  }
  return out;
}

void refresh_super(UnfoldedParams& params) {
  require(params.variant == UnfoldedVariant::super_structured,
          "Q21 is tied to A_hat only in the super-structured variant");
  const Eigen::MatrixXd s = stack_powers(params.A_hat, params.N);
  for (auto& l : params.structured) l.Q21 = s;
}

UnfoldedParams init_from_mpc(const MpcProblem& problem, const CondensedQp& qp,
                             std::optional<double> alpha, std::optional<double> beta, int depth,
                             UnfoldedVariant variant, const Eigen::VectorXd& u0) {
  problem.validate();
  qp.validate();
  require(depth >= 2, "need at least one unrolled step plus the selector");
  require(u0.size() == qp.nu(), "warm start size must match the stacked input size");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qp.H);
  require_numeric(es.info() == Eigen::Success, "eigendecomposition failed");
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  require_numeric(lmin > 0.0, "condensed Hessian is not positive definite");
  const double kappa = lmax / lmin;
  const double a = alpha.value_or(1.0 / lmax);
  const double b = beta.value_or((std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0));
  require(std::isfinite(a) && std::isfinite(b), "step and momentum must be finite");

  UnfoldedParams p;
  p.variant = variant;
  p.n_x = qp.n_x;
  p.n_u = qp.n_u;
  p.N = qp.N;
  p.lo = qp.lo;
  p.hi = qp.hi;
  p.u0 = u0;

  const int layers = depth - 1;
  if (variant == UnfoldedVariant::dense) {
    UnfoldedLayer l;
    l.alpha = a;
    l.beta = b;
    l.Q1 = qp.H;
    l.Q2 = qp.Q2;
    p.dense.assign(static_cast<std::size_t>(layers), l);
  } else {
    const StackedDynamics sd = stack_dynamics(problem);
    StructuredLayer l;
    l.alpha = a;
    l.beta = b;
    l.Q11 = sd.F.transpose() * sd.W;
    l.Q12 = sd.F;
    l.Q21 = sd.G;
    p.structured.assign(static_cast<std::size_t>(layers), l);
    if (variant == UnfoldedVariant::super_structured) p.A_hat = problem.sys.A;
  }
  p.validate();
  return p;
}

Eigen::VectorXd forward_unfolded(const UnfoldedParams& params, const Eigen::VectorXd& x0) {
  require(x0.size() == params.n_x, "initial state size mismatch");
  require_numeric(x0.allFinite(), "initial state must be finite");
  const kernels::Backend& k = kernels::active();
  const std::size_t v = static_cast<std::size_t>(params.nu());
  const int layers = params.depth() - 1;

  Eigen::VectorXd u_prev(params.nu()), u_cur(params.nu()), u_next(params.nu());
  Eigen::VectorXd y(params.nu()), z(params.nu()), g(params.nu()), q(params.nu());

  k.clamp_vec(params.u0.data(), params.lo.data(), params.hi.data(), u_cur.data(), v);
  u_prev = u_cur;

  const bool is_dense = params.variant == UnfoldedVariant::dense;
  const int s = params.N * params.n_x;
  Eigen::VectorXd c, w;
  if (!is_dense) {
    c.resize(s);
    w.resize(s);
  }

  for (int t = 0; t < layers; ++t) {
    const double alpha = is_dense ? params.dense[t].alpha : params.structured[t].alpha;
    const double beta = is_dense ? params.dense[t].beta : params.structured[t].beta;

    if (t == 0 || beta == 0.0) {
      y = u_cur;
    } else {
      k.extrapolate(u_cur.data(), u_prev.data(), beta, y.data(), v);
    }

    if (is_dense) {
      const UnfoldedLayer& l = params.dense[t];
      k.affine(l.Q2.data(), v, static_cast<std::size_t>(params.n_x), x0.data(), nullptr, q.data());
      k.affine(l.Q1.data(), v, v, y.data(), q.data(), g.data());
      k.scaled_sum(1.0, y.data(), -alpha, g.data(), z.data(), v);
    } else {
      const StructuredLayer& l = params.structured[t];
      k.affine(l.Q21.data(), static_cast<std::size_t>(s), static_cast<std::size_t>(params.n_x),
               x0.data(), nullptr, c.data());
      k.affine(l.Q12.data(), static_cast<std::size_t>(s), v, y.data(), c.data(), w.data());
      k.affine(l.Q11.data(), v, static_cast<std::size_t>(s), w.data(), nullptr, g.data());
      k.scaled_sum(1.0 - alpha, y.data(), -alpha, g.data(), z.data(), v);
    }
    k.clamp_vec(z.data(), params.lo.data(), params.hi.data(), u_next.data(), v);
    require_numeric(u_next.allFinite(), "non-finite iterate in unfolded forward pass");

    u_prev.swap(u_cur);
    u_cur.swap(u_next);
  }
  return u_cur;
}

std::vector<EffectiveLayer> effective_layers(const UnfoldedParams& params) {
  params.validate();
  const int v = params.nu();
  const int layers = params.depth() - 1;
  const bool is_dense = params.variant == UnfoldedVariant::dense;

  std::vector<EffectiveLayer> out;
  out.reserve(static_cast<std::size_t>(layers));
  for (int t = 0; t < layers; ++t) {
    Eigen::MatrixXd m, bmat;
    double alpha, beta;
    if (is_dense) {
      const UnfoldedLayer& l = params.dense[t];
      alpha = l.alpha;
      beta = l.beta;
      m = Eigen::MatrixXd::Identity(v, v) - alpha * l.Q1;
      bmat = -alpha * l.Q2;
    } else {
      const StructuredLayer& l = params.structured[t];
      alpha = l.alpha;
      beta = l.beta;
      m = (1.0 - alpha) * Eigen::MatrixXd::Identity(v, v) - alpha * (l.Q11 * l.Q12);
      bmat = -alpha * (l.Q11 * l.Q21);
    }
    if (t == 0) beta = 0.0;
    EffectiveLayer e;
    e.W1 = -beta * m;
    e.W2 = (1.0 + beta) * m;
    e.B = std::move(bmat);
    out.push_back(std::move(e));
  }
  return out;
}

HtnnSpec to_htnn(const UnfoldedParams& params) {
  const std::vector<EffectiveLayer> eff = effective_layers(params);
  const int v = params.nu();
  const int n_x = params.n_x;
  const int state = 2 * v + n_x;

  std::vector<ActivationTag> box_tags;
  for (int i = 0; i < v; ++i) box_tags.push_back(ActivationTag::clamp(params.lo(i), params.hi(i)));

  const Eigen::VectorXd u0c = params.u0.cwiseMax(params.lo).cwiseMin(params.hi);

  HtnnSpec net;
  net.input_dim = n_x;

  {
    HtnnLayer first;
    first.W = Eigen::MatrixXd::Zero(state, n_x);
    first.W.middleRows(v, v) = eff[0].B;
    first.W.bottomRows(n_x) = Eigen::MatrixXd::Identity(n_x, n_x);
    first.b = Eigen::VectorXd::Zero(state);
    first.b.head(v) = u0c;
    first.b.segment(v, v) = eff[0].W2 * u0c;
    first.acts.assign(static_cast<std::size_t>(v), ActivationTag::ident());
    first.acts.insert(first.acts.end(), box_tags.begin(), box_tags.end());
    first.acts.insert(first.acts.end(), static_cast<std::size_t>(n_x), ActivationTag::ident());
    net.layers.push_back(std::move(first));
  }

  for (std::size_t t = 1; t < eff.size(); ++t) {
    HtnnLayer mid;
    mid.W = Eigen::MatrixXd::Zero(state, state);
    mid.W.block(0, v, v, v) = Eigen::MatrixXd::Identity(v, v);
    mid.W.block(v, 0, v, v) = eff[t].W1;
    mid.W.block(v, v, v, v) = eff[t].W2;
    mid.W.block(v, 2 * v, v, n_x) = eff[t].B;
    mid.W.bottomRightCorner(n_x, n_x) = Eigen::MatrixXd::Identity(n_x, n_x);
    mid.b = Eigen::VectorXd::Zero(state);
    mid.acts.assign(static_cast<std::size_t>(v), ActivationTag::ident());
    mid.acts.insert(mid.acts.end(), box_tags.begin(), box_tags.end());
    mid.acts.insert(mid.acts.end(), static_cast<std::size_t>(n_x), ActivationTag::ident());
    net.layers.push_back(std::move(mid));
  }

  {
    HtnnLayer sel;
    sel.W = Eigen::MatrixXd::Zero(v, state);
    sel.W.middleCols(v, v) = Eigen::MatrixXd::Identity(v, v);
    sel.b = Eigen::VectorXd::Zero(v);
    sel.acts.assign(static_cast<std::size_t>(v), ActivationTag::ident());
    net.layers.push_back(std::move(sel));
  }

  net.validate();
  return net;
}

}  // namespace htmpc
