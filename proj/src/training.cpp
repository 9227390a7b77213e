#include "htmpc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "htmpc/box_qp.hpp"
#include "htmpc/rng.hpp"

namespace htmpc {

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& M, const std::vector<int>& idx, std::size_t begin,
                       std::size_t count) {
  Eigen::MatrixXd out(M.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < count; ++j) out.col(static_cast<Eigen::Index>(j)) = M.col(idx[begin + j]);
  return out;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& M, const std::vector<int>& idx) {
  return gather(M, idx, 0, idx.size());
}

void put(Eigen::VectorXd& theta, Eigen::Index& pos, const Eigen::MatrixXd& M) {
  theta.segment(pos, M.size()) = Eigen::Map<const Eigen::VectorXd>(M.data(), M.size());
  pos += M.size();
}

void put(Eigen::VectorXd& theta, Eigen::Index& pos, const Eigen::VectorXd& v) {
  theta.segment(pos, v.size()) = v;
  pos += v.size();
}

void take(const Eigen::VectorXd& theta, Eigen::Index& pos, Eigen::MatrixXd& M) {
  M = Eigen::Map<const Eigen::MatrixXd>(theta.data() + pos, M.rows(), M.cols());
  pos += M.size();
}

void take(const Eigen::VectorXd& theta, Eigen::Index& pos, Eigen::VectorXd& v) {
  v = theta.segment(pos, v.size());
  pos += v.size();
}

// Clamp Z in place per the row's activation tag; optionally record the
// derivative mask (1 strictly inside the clamp window, 0 elsewhere).
void clamp_and_mask(Eigen::MatrixXd& Z, const std::vector<ActivationTag>& acts,
                    Eigen::MatrixXd* mask) {
  if (mask) mask->setOnes(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const ActivationTag& tag = acts[static_cast<std::size_t>(i)];
    if (tag.is_identity()) continue;
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const double z = Z(i, j);
      if (mask) (*mask)(i, j) = (z > tag.lo && z < tag.hi) ? 1.0 : 0.0;
      Z(i, j) = z < tag.lo ? tag.lo : (z > tag.hi ? tag.hi : z);
    }
  }
}

void clamp_box_and_mask(Eigen::MatrixXd& Z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                        Eigen::MatrixXd& mask) {
  mask.resize(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const double z = Z(i, j);
      mask(i, j) = (z > lo(i) && z < hi(i)) ? 1.0 : 0.0;
      Z(i, j) = z < lo(i) ? lo(i) : (z > hi(i) ? hi(i) : z);
    }
  }
}

struct NetFwd {
  std::vector<Eigen::MatrixXd> Yin;  // input to each layer
  std::vector<Eigen::MatrixXd> M;    // derivative masks
  Eigen::MatrixXd out;
};

NetFwd net_forward(const HtnnSpec& net, const Eigen::MatrixXd& X, bool keep) {
  NetFwd f;
  Eigen::MatrixXd Y = X;
  for (const auto& layer : net.layers) {
    if (keep) f.Yin.push_back(Y);
    Eigen::MatrixXd Z = (layer.W * Y).colwise() + layer.b;
    Eigen::MatrixXd mask;
    clamp_and_mask(Z, layer.acts, keep ? &mask : nullptr);
    if (keep) f.M.push_back(std::move(mask));
    Y = std::move(Z);
  }
  f.out = std::move(Y);
  return f;
}

struct UnfoldedFwd {
  std::vector<Eigen::MatrixXd> Y;         // extrapolated input per layer
  std::vector<Eigen::MatrixXd> P;         // dense: Q1 Y + Q2 X0
  std::vector<Eigen::MatrixXd> S, T;      // structured: S = Q12 Y + Q21 X0, T = Q11 S
  std::vector<Eigen::MatrixXd> M;         // clamp masks
  std::vector<Eigen::MatrixXd> it;        // iterates U_0 .. U_L
};

UnfoldedFwd unfolded_forward_batch(const UnfoldedParams& p, const Eigen::MatrixXd& X0, bool keep) {
  const int layers = p.depth() - 1;
  const bool is_dense = p.variant == UnfoldedVariant::dense;
  const Eigen::VectorXd u0c = p.u0.cwiseMax(p.lo).cwiseMin(p.hi);

  UnfoldedFwd f;
  f.it.push_back(u0c.replicate(1, X0.cols()));
  for (int t = 0; t < layers; ++t) {
    const double alpha = is_dense ? p.dense[t].alpha : p.structured[t].alpha;
    const double beta = is_dense ? p.dense[t].beta : p.structured[t].beta;
    const Eigen::MatrixXd& ucur = f.it.back();

    Eigen::MatrixXd Y;
    if (t == 0) {
      Y = ucur;
    } else {
      Y = (1.0 + beta) * ucur - beta * f.it[static_cast<std::size_t>(t) - 1];
    }

    Eigen::MatrixXd Z;
    if (is_dense) {
      const UnfoldedLayer& l = p.dense[t];
      Eigen::MatrixXd P = l.Q1 * Y + l.Q2 * X0;
      Z = Y - alpha * P;
      if (keep) f.P.push_back(std::move(P));
    } else {
      const StructuredLayer& l = p.structured[t];
      Eigen::MatrixXd S = l.Q12 * Y + l.Q21 * X0;
      Eigen::MatrixXd T = l.Q11 * S;
      Z = (1.0 - alpha) * Y - alpha * T;
      if (keep) {
        f.S.push_back(std::move(S));
        f.T.push_back(std::move(T));
      }
    }
    Eigen::MatrixXd mask;
    clamp_box_and_mask(Z, p.lo, p.hi, mask);
    if (keep) {
      f.Y.push_back(std::move(Y));
      f.M.push_back(std::move(mask));
    }
    f.it.push_back(std::move(Z));
  }
  return f;
}

double finite_loss(double loss, const char* what) {
  require_numeric(std::isfinite(loss), what);
  return loss;
}

}  // namespace

void Dataset::validate() const {
  require(X.cols() == U.cols(), "state and target counts must match");
  require(X.cols() >= 1, "dataset must be nonempty");
  const int n = size();
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::size_t total = 0;
  for (const auto* part : {&train_idx, &val_idx, &test_idx}) {
    for (int i : *part) {
      require(i >= 0 && i < n, "split index out of range");
      require(!seen[static_cast<std::size_t>(i)], "split indices must be disjoint");
      seen[static_cast<std::size_t>(i)] = 1;
      ++total;
    }
  }
  require(total == static_cast<std::size_t>(n), "split must cover every sample");
  require(X.allFinite() && U.allFinite(), "dataset entries must be finite");
}

Dataset generate_dataset(const MpcProblem& problem, int n_init, int sim_horizon,
                         const Eigen::VectorXd& x0_lo, const Eigen::VectorXd& x0_hi,
                         std::uint64_t seed, int jobs) {
  problem.validate();
  require(n_init >= 1 && sim_horizon >= 1, "need at least one start and one step");
  const int n_x = problem.sys.n_x();
  const int n_u = problem.sys.n_u();
  require(x0_lo.size() == n_x && x0_hi.size() == n_x, "range sizes must match the state size");
  require(x0_lo.allFinite() && x0_hi.allFinite(), "ranges must be finite");
  for (int i = 0; i < n_x; ++i) require(x0_lo(i) <= x0_hi(i), "ranges must satisfy lo <= hi");

  const CondensedQp qp = condense(problem);
  const int nu = qp.nu();
  const int n = n_init * sim_horizon;

  Dataset ds;
  ds.seed = seed;
  ds.X.resize(n_x, n);
  ds.U.resize(nu, n);

  auto run_block = [&](int i0, int i1) {
    BoxQp box;
    box.H = qp.H;
    box.lo = qp.lo;
    box.hi = qp.hi;
    SolveOptions so;
    so.tol = 1e-10;
    so.max_iter = 200000;
    const Eigen::VectorXd cold = Eigen::VectorXd::Zero(nu);
    for (int i = i0; i < i1; ++i) {
      Rng rng(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i + 1));
      Eigen::VectorXd x(n_x);
      for (int c = 0; c < n_x; ++c) x(c) = rng.uniform(x0_lo(c), x0_hi(c));
      for (int t = 0; t < sim_horizon; ++t) {
        box.q = q_of(qp, x);
        const SolveReport rep = apgd(box, cold, so);
        if (!rep.converged) {
          throw NumericError("solver did not converge while generating sample (start " +
                             std::to_string(i) + ", step " + std::to_string(t) + ")");
        }
        const int col = i * sim_horizon + t;
        ds.X.col(col) = x;
        ds.U.col(col) = rep.u;
        x = problem.sys.A * x + problem.sys.B * rep.u.head(n_u);
      }
    }
  };

  if (jobs <= 1 || n_init == 1) {
    run_block(0, n_init);
  } else {
    const int workers = std::min(jobs, n_init);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const int chunk = (n_init + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int i0 = w * chunk;
      const int i1 = std::min(n_init, i0 + chunk);
      pool.emplace_back([&, w, i0, i1] {
        try {
          run_block(i0, i1);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  split_dataset(ds, 0.7, 0.1, seed);
  return ds;
}

void split_dataset(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed) {
  require(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0,
          "fractions must leave room for a test split");
  const int n = ds.size();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed ^ 0xD15EA5E5EEDull);
  rng.shuffle(perm);

  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * n));
  require(n_train >= 1 && n_train + n_val < static_cast<std::size_t>(n),
          "split sizes must leave a nonempty test set");

  ds.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                    perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
}

void AdamConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "moment decays must lie in [0, 1)");
  require(eps > 0.0, "epsilon must be positive");
  require(batch >= 1, "batch size must be positive");
  require(epochs >= 0, "epoch count must be nonnegative");
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               const AdamConfig& cfg) {
  cfg.validate();
  require(params.size() == grad.size(), "parameter/gradient size mismatch");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.t = 0;
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "optimizer state size mismatch");

  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  params.array() -= cfg.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.eps);
}

Eigen::VectorXd flatten_net(const HtnnSpec& net) {
  Eigen::Index total = 0;
  for (const auto& l : net.layers) total += l.W.size() + l.b.size();
  Eigen::VectorXd theta(total);
  Eigen::Index pos = 0;
  for (const auto& l : net.layers) {
    put(theta, pos, l.W);
    put(theta, pos, l.b);
  }
  return theta;
}

void unflatten_net(HtnnSpec& net, const Eigen::VectorXd& theta) {
  Eigen::Index pos = 0;
  for (auto& l : net.layers) {
    take(theta, pos, l.W);
    take(theta, pos, l.b);
  }
  require(pos == theta.size(), "flat parameter size mismatch");
}

Eigen::VectorXd flatten_params(const UnfoldedParams& params) {
  const bool super = params.variant == UnfoldedVariant::super_structured;
  Eigen::Index total = 0;
  for (const auto& l : params.dense) total += 2 + l.Q1.size() + l.Q2.size();
  for (const auto& l : params.structured) {
    total += 2 + l.Q11.size() + l.Q12.size() + (super ? 0 : l.Q21.size());
  }
  if (super) total += params.A_hat.size();

  Eigen::VectorXd theta(total);
  Eigen::Index pos = 0;
  for (const auto& l : params.dense) {
    theta(pos++) = l.alpha;
    theta(pos++) = l.beta;
    put(theta, pos, l.Q1);
    put(theta, pos, l.Q2);
  }
  for (const auto& l : params.structured) {
    theta(pos++) = l.alpha;
    theta(pos++) = l.beta;
    put(theta, pos, l.Q11);
    put(theta, pos, l.Q12);
    if (!super) put(theta, pos, l.Q21);
  }
  if (super) put(theta, pos, params.A_hat);
  return theta;
}

void unflatten_params(UnfoldedParams& params, const Eigen::VectorXd& theta) {
  const bool super = params.variant == UnfoldedVariant::super_structured;
  Eigen::Index pos = 0;
  for (auto& l : params.dense) {
    l.alpha = theta(pos++);
    l.beta = theta(pos++);
    take(theta, pos, l.Q1);
    take(theta, pos, l.Q2);
  }
  for (auto& l : params.structured) {
    l.alpha = theta(pos++);
    l.beta = theta(pos++);
    take(theta, pos, l.Q11);
    take(theta, pos, l.Q12);
    if (!super) take(theta, pos, l.Q21);
  }
  if (super) {
    take(theta, pos, params.A_hat);
    apply_masks(params);
    refresh_super(params);
  }
  require(pos == theta.size(), "flat parameter size mismatch");
}

void apply_masks(UnfoldedParams& params) {
  if (params.variant != UnfoldedVariant::super_structured) return;
  const SuperMasks masks = super_masks(params.n_x, params.n_u, params.N);
  for (auto& l : params.structured) {
    l.Q11 = l.Q11.cwiseProduct(masks.q11);
    l.Q12 = l.Q12.cwiseProduct(masks.q12);
  }
}

double mse_loss(const HtnnSpec& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) {
  require(X.cols() == U.cols() && X.cols() >= 1, "batch must be nonempty with matched columns");
  require(X.rows() == net.input_dim && U.rows() == net.output_dim(), "batch dimension mismatch");
  const NetFwd f = net_forward(net, X, false);
  return finite_loss((f.out - U).squaredNorm() / static_cast<double>(X.cols()),
                     "non-finite loss");
}

double mse_loss(const UnfoldedParams& params, const Eigen::MatrixXd& X0, const Eigen::MatrixXd& U) {
  require(X0.cols() == U.cols() && X0.cols() >= 1, "batch must be nonempty with matched columns");
  require(X0.rows() == params.n_x && U.rows() == params.nu(), "batch dimension mismatch");
  const UnfoldedFwd f = unfolded_forward_batch(params, X0, false);
  return finite_loss((f.it.back() - U).squaredNorm() / static_cast<double>(X0.cols()),
                     "non-finite loss");
}

BatchGrad backprop_htnn(const HtnnSpec& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) {
  require(X.cols() == U.cols() && X.cols() >= 1, "batch must be nonempty with matched columns");
  require(X.rows() == net.input_dim && U.rows() == net.output_dim(), "batch dimension mismatch");
  const double B = static_cast<double>(X.cols());
  const NetFwd f = net_forward(net, X, true);

  BatchGrad out;
  out.loss = finite_loss((f.out - U).squaredNorm() / B, "non-finite loss");

  const int L = net.depth();
  std::vector<Eigen::MatrixXd> gW(static_cast<std::size_t>(L));
  std::vector<Eigen::VectorXd> gb(static_cast<std::size_t>(L));

  Eigen::MatrixXd G = (2.0 / B) * (f.out - U);
  for (int t = L - 1; t >= 0; --t) {
    const Eigen::MatrixXd GZ = G.cwiseProduct(f.M[static_cast<std::size_t>(t)]);
    gW[static_cast<std::size_t>(t)] = GZ * f.Yin[static_cast<std::size_t>(t)].transpose();
    gb[static_cast<std::size_t>(t)] = GZ.rowwise().sum();
    if (t > 0) G = net.layers[static_cast<std::size_t>(t)].W.transpose() * GZ;
  }

  Eigen::Index total = 0;
  for (int t = 0; t < L; ++t) total += gW[static_cast<std::size_t>(t)].size() + gb[static_cast<std::size_t>(t)].size();
  out.grad.resize(total);
  Eigen::Index pos = 0;
  for (int t = 0; t < L; ++t) {
    put(out.grad, pos, gW[static_cast<std::size_t>(t)]);
    put(out.grad, pos, gb[static_cast<std::size_t>(t)]);
  }
  return out;
}

BatchGrad backprop_unfolded(const UnfoldedParams& params, const Eigen::MatrixXd& X0,
                            const Eigen::MatrixXd& U) {
  require(X0.cols() == U.cols() && X0.cols() >= 1, "batch must be nonempty with matched columns");
  require(X0.rows() == params.n_x && U.rows() == params.nu(), "batch dimension mismatch");
  const double B = static_cast<double>(X0.cols());
  const bool is_dense = params.variant == UnfoldedVariant::dense;
  const bool super = params.variant == UnfoldedVariant::super_structured;
  const int L = params.depth() - 1;
  const UnfoldedFwd f = unfolded_forward_batch(params, X0, true);

  BatchGrad out;
  out.loss = finite_loss((f.it.back() - U).squaredNorm() / B, "non-finite loss");

  std::vector<double> g_alpha(static_cast<std::size_t>(L), 0.0);
  std::vector<double> g_beta(static_cast<std::size_t>(L), 0.0);
  std::vector<Eigen::MatrixXd> gQ1(is_dense ? static_cast<std::size_t>(L) : 0);
  std::vector<Eigen::MatrixXd> gQ2(is_dense ? static_cast<std::size_t>(L) : 0);
  std::vector<Eigen::MatrixXd> gQ11(is_dense ? 0 : static_cast<std::size_t>(L));
  std::vector<Eigen::MatrixXd> gQ12(is_dense ? 0 : static_cast<std::size_t>(L));
  std::vector<Eigen::MatrixXd> gQ21(is_dense ? 0 : static_cast<std::size_t>(L));

  Eigen::MatrixXd g_next = (2.0 / B) * (f.it.back() - U);
  Eigen::MatrixXd g_cur = Eigen::MatrixXd::Zero(params.nu(), X0.cols());

  for (int t = L - 1; t >= 0; --t) {
    const std::size_t ti = static_cast<std::size_t>(t);
    const Eigen::MatrixXd GZ = g_next.cwiseProduct(f.M[ti]);
    Eigen::MatrixXd GY;
    double alpha, beta;
    if (is_dense) {
      const UnfoldedLayer& l = params.dense[t];
      alpha = l.alpha;
      beta = l.beta;
      g_alpha[ti] = -GZ.cwiseProduct(f.P[ti]).sum();
      gQ1[ti] = -alpha * (GZ * f.Y[ti].transpose());
      gQ2[ti] = -alpha * (GZ * X0.transpose());
      GY = GZ - alpha * (l.Q1.transpose() * GZ);
    } else {
      const StructuredLayer& l = params.structured[t];
      alpha = l.alpha;
      beta = l.beta;
      g_alpha[ti] = -GZ.cwiseProduct(f.Y[ti] + f.T[ti]).sum();
      gQ11[ti] = -alpha * (GZ * f.S[ti].transpose());
      const Eigen::MatrixXd GS = -alpha * (l.Q11.transpose() * GZ);
      gQ12[ti] = GS * f.Y[ti].transpose();
      gQ21[ti] = GS * X0.transpose();
      GY = (1.0 - alpha) * GZ + l.Q12.transpose() * GS;
    }

    if (t >= 1) {
      g_beta[ti] = GY.cwiseProduct(f.it[ti] - f.it[ti - 1]).sum();
      const Eigen::MatrixXd next = g_cur + (1.0 + beta) * GY;
      g_cur = -beta * GY;
      g_next = next;
    }
    // Layer 0 reads only the constant warm start; nothing flows further back.
  }

  if (super) {
    const SuperMasks masks = super_masks(params.n_x, params.n_u, params.N);
    for (auto& g : gQ11) g = g.cwiseProduct(masks.q11);
    for (auto& g : gQ12) g = g.cwiseProduct(masks.q12);
  }

  Eigen::MatrixXd gA;
  if (super) {
    Eigen::MatrixXd gQ21_total = Eigen::MatrixXd::Zero(params.N * params.n_x, params.n_x);
    for (const auto& g : gQ21) gQ21_total += g;
    // Powers A^0 .. A^{N-1} for the product-rule sweep through the stack.
    std::vector<Eigen::MatrixXd> pw;
    pw.push_back(Eigen::MatrixXd::Identity(params.n_x, params.n_x));
    for (int j = 1; j < params.N; ++j) pw.push_back(params.A_hat * pw.back());
    gA = Eigen::MatrixXd::Zero(params.n_x, params.n_x);
    for (int t = 1; t <= params.N; ++t) {
      const Eigen::MatrixXd Gt = gQ21_total.middleRows((t - 1) * params.n_x, params.n_x);
      for (int j = 0; j <= t - 1; ++j) {
        gA += pw[static_cast<std::size_t>(j)].transpose() * Gt *
              pw[static_cast<std::size_t>(t - 1 - j)].transpose();
      }
    }
  }

  Eigen::Index total = 0;
  for (int t = 0; t < L; ++t) {
    if (is_dense) {
      total += 2 + gQ1[static_cast<std::size_t>(t)].size() + gQ2[static_cast<std::size_t>(t)].size();
    } else {
      total += 2 + gQ11[static_cast<std::size_t>(t)].size() + gQ12[static_cast<std::size_t>(t)].size() +
               (super ? 0 : gQ21[static_cast<std::size_t>(t)].size());
    }
  }
  if (super) total += gA.size();

  out.grad.resize(total);
  Eigen::Index pos = 0;
  for (int t = 0; t < L; ++t) {
    const std::size_t ti = static_cast<std::size_t>(t);
    out.grad(pos++) = g_alpha[ti];
    out.grad(pos++) = g_beta[ti];
    if (is_dense) {
      put(out.grad, pos, gQ1[ti]);
      put(out.grad, pos, gQ2[ti]);
    } else {
      put(out.grad, pos, gQ11[ti]);
      put(out.grad, pos, gQ12[ti]);
      if (!super) put(out.grad, pos, gQ21[ti]);
    }
  }
  if (super) put(out.grad, pos, gA);
  return out;
}

HtnnSpec make_trainable_htnn(int input_dim, int output_dim, int depth, int width,
                             const Eigen::VectorXd& out_lo, const Eigen::VectorXd& out_hi,
                             std::uint64_t seed, double init_scale) {
  require(input_dim >= 1 && output_dim >= 1 && depth >= 1 && width >= 1, "sizes must be positive");
  require(out_lo.size() == output_dim && out_hi.size() == output_dim, "output box size mismatch");
  for (int i = 0; i < output_dim; ++i) {
    require(std::isfinite(out_lo(i)) && std::isfinite(out_hi(i)) && out_lo(i) < out_hi(i),
            "output box must be finite with lo < hi");
  }
  require(init_scale > 0.0 && std::isfinite(init_scale), "init scale must be positive");

  Rng rng(seed);
  HtnnSpec net;
  net.input_dim = input_dim;
  for (int t = 0; t < depth; ++t) {
    const int in = t == 0 ? input_dim : width;
    const int rows = t == depth - 1 ? output_dim : width;
    const double s = init_scale / std::sqrt(static_cast<double>(in));
    HtnnLayer layer;
    layer.W.resize(rows, in);
    for (int j = 0; j < in; ++j) {
      for (int i = 0; i < rows; ++i) layer.W(i, j) = rng.uniform(-s, s);
    }
    layer.b = Eigen::VectorXd::Zero(rows);
    if (t == depth - 1) {
      for (int i = 0; i < rows; ++i) layer.acts.push_back(ActivationTag::clamp(out_lo(i), out_hi(i)));
    } else {
      layer.acts.assign(static_cast<std::size_t>(rows), ActivationTag::clamp(-1.0, 1.0));
    }
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

void perturb_params(UnfoldedParams& params, double noise, std::uint64_t seed) {
  params.validate();
  require(noise >= 0.0 && std::isfinite(noise), "noise scale must be nonnegative");
  if (noise == 0.0) return;
  Rng rng(seed);
  auto jitter = [&](Eigen::MatrixXd& M) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, j) += noise * rng.normal();
    }
  };
  for (auto& l : params.dense) {
    jitter(l.Q1);
    jitter(l.Q2);
  }
  const bool super = params.variant == UnfoldedVariant::super_structured;
  for (auto& l : params.structured) {
    jitter(l.Q11);
    jitter(l.Q12);
    if (!super) jitter(l.Q21);
  }
  if (super) {
    jitter(params.A_hat);
    apply_masks(params);
    refresh_super(params);
  }
}

namespace {

template <class Flatten, class Unflatten, class Loss, class Grad>
TrainReport run_training(const Dataset& ds, const AdamConfig& cfg, Flatten flatten,
                         Unflatten unflatten, Loss loss, Grad grad) {
  ds.validate();
  cfg.validate();
  require(!ds.train_idx.empty() && !ds.val_idx.empty() && !ds.test_idx.empty(),
          "training needs nonempty train, val, and test splits");

  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::MatrixXd Xtr = gather(ds.X, ds.train_idx), Utr = gather(ds.U, ds.train_idx);
  const Eigen::MatrixXd Xva = gather(ds.X, ds.val_idx), Uva = gather(ds.U, ds.val_idx);
  const Eigen::MatrixXd Xte = gather(ds.X, ds.test_idx), Ute = gather(ds.U, ds.test_idx);

  TrainReport rep;
  rep.train_mse.push_back(loss(Xtr, Utr));
  rep.val_mse.push_back(loss(Xva, Uva));
  rep.best_val = rep.val_mse.front();
  rep.best_epoch = 0;
  Eigen::VectorXd best_theta = flatten();

  Rng rng(cfg.seed);
  AdamState state;
  std::vector<int> perm = ds.train_idx;
  Eigen::VectorXd theta = flatten();

  for (int e = 1; e <= cfg.epochs; ++e) {
    rng.shuffle(perm);
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch),
                                                      perm.size() - start);
      const Eigen::MatrixXd Xb = gather(ds.X, perm, start, count);
      const Eigen::MatrixXd Ub = gather(ds.U, perm, start, count);
      const BatchGrad bg = grad(Xb, Ub);
      if (!std::isfinite(bg.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(e));
      }
      adam_step(theta, bg.grad, state, cfg);
      unflatten(theta);
      theta = flatten();  // constraint re-application may have adjusted entries
    }
    const double tr = loss(Xtr, Utr);
    const double va = loss(Xva, Uva);
    if (!std::isfinite(tr) || !std::isfinite(va)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(e));
    }
    rep.train_mse.push_back(tr);
    rep.val_mse.push_back(va);
    if (va < rep.best_val) {
      rep.best_val = va;
      rep.best_epoch = e;
      best_theta = theta;
    }
  }

  unflatten(best_theta);
  rep.test_mse = loss(Xte, Ute);

  // Diagnostic: 5-epoch moving average of the train curve should not rise.
  const auto& tm = rep.train_mse;
  if (tm.size() >= 6) {
    auto window = [&](std::size_t end5) {
      double s = 0.0;
      for (std::size_t i = end5 - 5; i < end5; ++i) s += tm[i];
      return s / 5.0;
    };
    for (std::size_t end5 = 6; end5 <= tm.size(); ++end5) {
      if (window(end5) > window(end5 - 1) * (1.0 + 1e-9) + 1e-12) {
        rep.train_avg_monotone = false;
        break;
      }
    }
  }

  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace

TrainReport train_htnn(HtnnSpec& net, const Dataset& ds, const AdamConfig& cfg) {
  net.validate();
  return run_training(
      ds, cfg, [&] { return flatten_net(net); },
      [&](const Eigen::VectorXd& th) { unflatten_net(net, th); },
      [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) { return mse_loss(net, X, U); },
      [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) { return backprop_htnn(net, X, U); });
}

TrainReport train_unfolded(UnfoldedParams& params, const Dataset& ds, const AdamConfig& cfg) {
  params.validate();
  return run_training(
      ds, cfg, [&] { return flatten_params(params); },
      [&](const Eigen::VectorXd& th) { unflatten_params(params, th); },
      [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) { return mse_loss(params, X, U); },
      [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) {
        return backprop_unfolded(params, X, U);
      });
}

}  // namespace htmpc
