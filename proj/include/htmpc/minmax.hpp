#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "htmpc/common.hpp"

namespace htmpc {

/// One affine piece c'x + d.
struct AffineTerm {
  Eigen::VectorXd c;
  double d = 0.0;
};

/// Axis-aligned box domain for the state/input of a piecewise function.
struct BoxDomain {
  Eigen::VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  void validate() const;
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
};

/// Scalar min-max law: f(x) = min_i max_{j in groups[i]} terms[j](x).
/// Groups may reuse terms; every group must be non-empty.
struct MinMaxScalar {
  int n_x = 0;
  std::vector<AffineTerm> terms;
  std::vector<std::vector<int>> groups;

  void validate() const;
};

/// Componentwise stack of scalar min-max laws sharing the input dimension.
struct MinMaxVector {
  int n_x = 0;
  std::vector<MinMaxScalar> outputs;

  int n_u() const { return static_cast<int>(outputs.size()); }
  void validate() const;
};

double eval_scalar(const MinMaxScalar& f, const Eigen::VectorXd& x);
Eigen::VectorXd eval_vector(const MinMaxVector& f, const Eigen::VectorXd& x);

struct ValueBounds {
  double lo = 0.0, hi = 0.0;
};

/// Exact range of an affine term over a box (attained at box vertices).
ValueBounds affine_bounds(const AffineTerm& t, const BoxDomain& X);

/// Random instances for property tests and benchmarks. Requires m >= l so
/// every group is non-empty; groups partition the terms and then gain a few
/// extra shared memberships.
MinMaxScalar random_minmax_scalar(int n_x, int m, int l, std::uint64_t seed);
MinMaxVector random_minmax_vector(int n_x, int n_u, int m, int l, std::uint64_t seed);

}  // namespace htmpc
