#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "htmpc/htnn.hpp"
#include "htmpc/mpc_core.hpp"

namespace htmpc {

enum class UnfoldedVariant { dense, structured, super_structured };

/// One unrolled solver step with a full gradient matrix:
/// z = y - alpha (Q1 y + Q2 x0), u+ = clamp(z), then y+ extrapolated by beta.
struct UnfoldedLayer {
  double alpha = 0.0;
  double beta = 0.0;       // forms the y entering this layer; unused on layer 0
  Eigen::MatrixXd Q1;      // nu x nu
  Eigen::MatrixXd Q2;      // nu x n_x
};

/// Factored step: z = (1 - alpha) y - alpha Q11 (Q12 y + Q21 x0).
/// At the condensation factors (Q11 = F'W, Q12 = F, Q21 = G) this matches the
/// dense step whenever the control weight is the identity.
struct StructuredLayer {
  double alpha = 0.0;
  double beta = 0.0;
  Eigen::MatrixXd Q11;  // nu x (N n_x)
  Eigen::MatrixXd Q12;  // (N n_x) x nu
  Eigen::MatrixXd Q21;  // (N n_x) x n_x
};

/// Parameters of an unfolded solver network. depth() counts the unrolled
/// steps plus the final selector, so a depth-z network emits the iterate the
/// solver would reach after z-1 steps from u0.
struct UnfoldedParams {
  UnfoldedVariant variant = UnfoldedVariant::dense;
  int n_x = 0, n_u = 0, N = 0;
  Eigen::VectorXd lo, hi, u0;

  std::vector<UnfoldedLayer> dense;            // used when variant == dense
  std::vector<StructuredLayer> structured;     // used otherwise
  Eigen::MatrixXd A_hat;                       // super_structured only: Q21 = stack of its powers

  int nu() const { return n_u * N; }
  int depth() const {
    return static_cast<int>(variant == UnfoldedVariant::dense ? dense.size()
                                                              : structured.size()) + 1;
  }
  void validate() const;
};

/// Sparsity patterns the super-structured variant trains under: Q11 keeps
/// only block columns at or after the block row (upper block triangle), Q12
/// the transpose pattern. Entries are 1.0 where a weight may be nonzero.
struct SuperMasks {
  Eigen::MatrixXd q11;  // nu x (N n_x)
  Eigen::MatrixXd q12;  // (N n_x) x nu
};

SuperMasks super_masks(int n_x, int n_u, int N);

/// Rows of powers [A; A^2; ...; A^N], the shape Q21 takes when tied to a
/// learnable single-step matrix.
Eigen::MatrixXd stack_powers(const Eigen::MatrixXd& A, int N);

/// Recompute every layer's Q21 from A_hat. Call after updating A_hat.
void refresh_super(UnfoldedParams& params);

/// Build an unfolded network warm-started at the exact solver: dense layers
/// get Q1 = H and Q2 from the condensed problem, factored layers the
/// condensation factors, and A_hat the system matrix. alpha and beta default
/// to the solver's own step and momentum choices.
UnfoldedParams init_from_mpc(const MpcProblem& problem, const CondensedQp& qp,
                             std::optional<double> alpha, std::optional<double> beta, int depth,
                             UnfoldedVariant variant, const Eigen::VectorXd& u0);

/// Run the network: identical kernel call sequence as the accelerated solver
/// (so equal parameters give bitwise equal iterates).
Eigen::VectorXd forward_unfolded(const UnfoldedParams& params, const Eigen::VectorXd& x0);

/// Per-layer affine form on the carried state: z = W1 u_prev + W2 u_cur + B x0.
struct EffectiveLayer {
  Eigen::MatrixXd W1, W2, B;
};

std::vector<EffectiveLayer> effective_layers(const UnfoldedParams& params);

/// Flatten to a plain network over the state [u_prev; u_cur; x0]: layer 1
/// seeds the state from x0 (u0 folded into its bias), hidden layers advance
/// it with box clamps as hardtanh tags, the last layer selects u_cur.
HtnnSpec to_htnn(const UnfoldedParams& params);

}  // namespace htmpc
