#include "htmpc/nn_runtime.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "htmpc/common.hpp"
#include "htmpc/kernels.hpp"
#include "htmpc/rng.hpp"

namespace htmpc {

ForwardEval::ForwardEval(const HtnnSpec& net) : net_(&net) {
  net.validate();
  const double inf = std::numeric_limits<double>::infinity();
  int max_w = net.input_dim;
  for (const auto& layer : net.layers) {
    Eigen::VectorXd lo(layer.width()), hi(layer.width());
    for (int i = 0; i < layer.width(); ++i) {
      const ActivationTag& tag = layer.acts[static_cast<std::size_t>(i)];
      lo(i) = tag.is_identity() ? -inf : tag.lo;
      hi(i) = tag.is_identity() ? inf : tag.hi;
    }
    lo_.push_back(std::move(lo));
    hi_.push_back(std::move(hi));
    max_w = std::max(max_w, layer.width());
  }
  buf_a_.resize(max_w);
  buf_b_.resize(max_w);
  out_.resize(net.output_dim());
}

const Eigen::VectorXd& ForwardEval::run(const Eigen::VectorXd& x) {
  require(x.size() == net_->input_dim, "input dimension mismatch");
  const kernels::Backend& k = kernels::active();

  double* cur = buf_a_.data();
  double* nxt = buf_b_.data();
  std::memcpy(cur, x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
  std::size_t n = static_cast<std::size_t>(x.size());

  for (std::size_t t = 0; t < net_->layers.size(); ++t) {
    const HtnnLayer& layer = net_->layers[t];
    const std::size_t w = static_cast<std::size_t>(layer.width());
    k.affine(layer.W.data(), w, n, cur, layer.b.data(), nxt);
    for (std::size_t i = 0; i < w; ++i) {
      if (!std::isfinite(nxt[i])) {
        throw NumericError("non-finite pre-activation in layer " + std::to_string(t));
      }
    }
    k.clamp_vec(nxt, lo_[t].data(), hi_[t].data(), nxt, w);
    std::swap(cur, nxt);
    n = w;
  }

  std::memcpy(out_.data(), cur, sizeof(double) * n);
  return out_;
}

Eigen::VectorXd forward(const HtnnSpec& net, const Eigen::VectorXd& x) {
  ForwardEval eval(net);
  return eval.run(x);
}

double spectral_norm(const Eigen::MatrixXd& M) {
  if (M.rows() == 0 || M.cols() == 0) return 0.0;
  require_numeric(M.allFinite(), "spectral norm of a non-finite matrix");

  Rng rng(0x5eedULL);
  Eigen::VectorXd v(M.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  double nv = v.norm();
  if (nv == 0.0) {
    v.setOnes();
    nv = v.norm();
  }
  v /= nv;

  double sigma = -1.0;
  for (int it = 0; it < 10000; ++it) {
    const Eigen::VectorXd mv = M * v;
    const double s = mv.norm();
    if (s == 0.0) return 0.0;
    const Eigen::VectorXd w = M.transpose() * mv;
    const double nw = w.norm();
    if (nw == 0.0) return s;
    v = w / nw;
    if (std::abs(s - sigma) <= 1e-10 * std::max(1.0, s)) return s;
    sigma = s;
  }
  return Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()(0);
}

LipschitzCert lipschitz_cert(const HtnnSpec& net) {
  net.validate();
  LipschitzCert cert;
  cert.L = 1.0;
  for (const auto& layer : net.layers) {
    const double s = spectral_norm(layer.W);
    cert.per_layer.push_back(s);
    cert.L *= s;
  }
  return cert;
}

PerturbationCheck perturbation_check(const HtnnSpec& net, const BoxDomain& X, int n_samples,
                                     double eps, std::uint64_t seed) {
  X.validate();
  require(X.dim() == net.input_dim, "box/network dimension mismatch");
  require(n_samples >= 1, "need at least one sample");
  require(eps > 0.0 && std::isfinite(eps), "perturbation size must be positive");

  PerturbationCheck result;
  result.L = lipschitz_cert(net).L;

  ForwardEval eval(net);
  Rng rng(seed);
  const int n = X.dim();
  Eigen::VectorXd x(n), d(n), x2(n), y1, y2;

  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < n; ++i) x(i) = rng.uniform(X.lo(i), X.hi(i));
    for (int i = 0; i < n; ++i) d(i) = rng.normal();
    const double nd = d.norm();
    if (nd == 0.0) continue;
    x2 = x + (eps / nd) * d;
    const double denom = (x2 - x).norm();
    if (denom == 0.0) continue;
    y1 = eval.run(x);
    y2 = eval.run(x2);
    const double ratio = (y2 - y1).norm() / denom;
    result.max_ratio = std::max(result.max_ratio, ratio);
    ++result.samples;
  }

  result.ok = result.max_ratio <= result.L * (1.0 + 1e-9) + 1e-12;
  return result;
}

}  // namespace htmpc
