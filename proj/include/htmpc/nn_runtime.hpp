#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "htmpc/htnn.hpp"

namespace htmpc {

/// Reusable evaluator for one network. Preallocates ping-pong buffers and
/// per-layer clamp bound arrays (identity neurons get +-infinity, which the
/// clamp kernel passes through unchanged), so repeated calls allocate
/// nothing. The network must outlive the evaluator.
///
/// Throws NumericError if any layer produces a non-finite pre-activation.
class ForwardEval {
 public:
  explicit ForwardEval(const HtnnSpec& net);

  const Eigen::VectorXd& run(const Eigen::VectorXd& x);

  const HtnnSpec& net() const { return *net_; }

 private:
  const HtnnSpec* net_;
  std::vector<Eigen::VectorXd> lo_, hi_;
  Eigen::VectorXd buf_a_, buf_b_, out_;
};

/// One-shot forward pass. For repeated evaluation build a ForwardEval.
Eigen::VectorXd forward(const HtnnSpec& net, const Eigen::VectorXd& x);

/// Largest singular value. Power iteration (relative tolerance 1e-10, at most
/// 1e4 rounds) with an SVD fallback if the iteration has not settled.
double spectral_norm(const Eigen::MatrixXd& M);

/// Global Lipschitz bound: product of per-layer spectral norms. Both
/// activation kinds are 1-Lipschitz, so the product bounds the whole map on
/// all of R^n, not just a training box.
struct LipschitzCert {
  std::vector<double> per_layer;
  double L = 0.0;
};

LipschitzCert lipschitz_cert(const HtnnSpec& net);

/// Empirical soundness probe for a Lipschitz certificate: sampled difference
/// quotients over the box X (finite differences of size eps in random
/// directions) must not exceed L. The bound is global, so stepping slightly
/// outside X is still covered.
struct PerturbationCheck {
  double max_ratio = 0.0;
  double L = 0.0;
  bool ok = false;
  int samples = 0;
};

PerturbationCheck perturbation_check(const HtnnSpec& net, const BoxDomain& X, int n_samples,
                                     double eps, std::uint64_t seed);

}  // namespace htmpc
