#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "htmpc/htnn.hpp"
#include "htmpc/mpc_core.hpp"
#include "htmpc/unfolded.hpp"

namespace htmpc {

/// Supervised pairs (x0, u_star) stored column-wise, plus a disjoint and
/// exhaustive train/val/test index split.
struct Dataset {
  Eigen::MatrixXd X;  // n_x x n
  Eigen::MatrixXd U;  // nu x n
  std::vector<int> train_idx, val_idx, test_idx;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(X.cols()); }
  void validate() const;
};

/// Roll the plant under the accelerated-solver controller from n_init random
/// starts (uniform per coordinate in [x0_lo, x0_hi]) for sim_horizon steps,
/// recording the state and the full solved input stack at every step. Sample
/// order and values depend only on the seed, not on the job count. Throws
/// NumericError if the solver fails to converge at any step.
Dataset generate_dataset(const MpcProblem& problem, int n_init, int sim_horizon,
                         const Eigen::VectorXd& x0_lo, const Eigen::VectorXd& x0_hi,
                         std::uint64_t seed, int jobs = 1);

/// Seeded-shuffle split by fractions (remainder goes to test).
void split_dataset(Dataset& ds, double train_frac, double val_frac, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 64;
  int epochs = 0;
  std::uint64_t seed = 0;
  void validate() const;
};

struct AdamState {
  Eigen::VectorXd m, v;
  long long t = 0;
};

/// One bias-corrected moment update, in place. State is lazily sized on the
/// first call.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               const AdamConfig& cfg);

struct TrainReport {
  std::vector<double> train_mse, val_mse;  // entry 0 = before any update
  double test_mse = 0.0;
  double best_val = 0.0;
  int best_epoch = 0;  // 0 means initialization was never beaten
  bool train_avg_monotone = true;  // 5-epoch moving average nonincreasing (diagnostic only)
  double wall_seconds = 0.0;
};

/// Flat parameter layout, per layer: [vec(W) column-major, b].
Eigen::VectorXd flatten_net(const HtnnSpec& net);
void unflatten_net(HtnnSpec& net, const Eigen::VectorXd& theta);

/// Flat layout per layer: [alpha, beta, vec(Q1), vec(Q2)] (dense) or
/// [alpha, beta, vec(Q11), vec(Q12), vec(Q21)] (structured). The
/// super-structured variant drops vec(Q21) from every layer and appends
/// vec(A_hat) once at the end; unflattening rebuilds the tied Q21 stacks.
Eigen::VectorXd flatten_params(const UnfoldedParams& params);
void unflatten_params(UnfoldedParams& params, const Eigen::VectorXd& theta);

/// Zero out the entries the super-structured patterns forbid. No-op for the
/// other variants.
void apply_masks(UnfoldedParams& params);

/// Mean over columns of the squared Euclidean error.
double mse_loss(const HtnnSpec& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& U);
double mse_loss(const UnfoldedParams& params, const Eigen::MatrixXd& X0, const Eigen::MatrixXd& U);

/// Loss and its exact reverse-mode gradient in flat layout. The clamp
/// derivative is 1 strictly inside (lo, hi) and 0 outside or at either
/// boundary; super-structured gradients are masked and routed through the
/// power stack tying Q21 to A_hat.
struct BatchGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

BatchGrad backprop_htnn(const HtnnSpec& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& U);
BatchGrad backprop_unfolded(const UnfoldedParams& params, const Eigen::MatrixXd& X0,
                            const Eigen::MatrixXd& U);

/// Generic trainable network: hidden layers clamp to [-1, 1], the output
/// layer clamps to the given box (so its outputs are feasible by shape).
/// Weights are uniform with scale init_scale / sqrt(fan_in), biases zero.
HtnnSpec make_trainable_htnn(int input_dim, int output_dim, int depth, int width,
                             const Eigen::VectorXd& out_lo, const Eigen::VectorXd& out_hi,
                             std::uint64_t seed, double init_scale = 1.0);

/// Additive Gaussian noise on the trainable matrices (masked entries and the
/// tied Q21 stacks excluded; A_hat perturbed and the tie re-applied).
void perturb_params(UnfoldedParams& params, double noise, std::uint64_t seed);

/// Minibatch epochs over the train split; the best-validation parameters are
/// restored into the model before returning. Throws NumericError on a
/// non-finite loss.
TrainReport train_htnn(HtnnSpec& net, const Dataset& ds, const AdamConfig& cfg);
TrainReport train_unfolded(UnfoldedParams& params, const Dataset& ds, const AdamConfig& cfg);

}  // namespace htmpc
