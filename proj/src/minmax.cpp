#include "htmpc/minmax.hpp"

#include <algorithm>
#include <limits>

#include "htmpc/rng.hpp"

namespace htmpc {

void BoxDomain::validate() const {
  require(lo.size() > 0 && lo.size() == hi.size(), "box must be non-empty with matching sizes");
  require((lo.array() < hi.array()).all(), "box must satisfy lo < hi");
  require(lo.allFinite() && hi.allFinite(), "box bounds must be finite");
}

bool BoxDomain::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != lo.size()) return false;
  return (x.array() >= lo.array() - tol).all() && (x.array() <= hi.array() + tol).all();
}

void MinMaxScalar::validate() const {
  require(n_x >= 1, "n_x must be >= 1");
  require(!terms.empty(), "need at least one term");
  for (const auto& t : terms) {
    require(t.c.size() == n_x, "term coefficient size mismatch");
    require(t.c.allFinite() && std::isfinite(t.d), "term must be finite");
  }
  require(!groups.empty(), "need at least one group");
  for (const auto& g : groups) {
    require(!g.empty(), "groups must be non-empty");
    for (int j : g) require(j >= 0 && j < static_cast<int>(terms.size()), "group index out of range");
  }
}

void MinMaxVector::validate() const {
  require(n_x >= 1, "n_x must be >= 1");
  require(!outputs.empty(), "need at least one output");
  for (const auto& f : outputs) {
    f.validate();
    require(f.n_x == n_x, "outputs must share the input dimension");
  }
}

double eval_scalar(const MinMaxScalar& f, const Eigen::VectorXd& x) {
  require(x.size() == f.n_x, "input size mismatch");
  double best_min = std::numeric_limits<double>::infinity();
  for (const auto& g : f.groups) {
    double best_max = -std::numeric_limits<double>::infinity();
    for (int j : g) {
      const double v = f.terms[j].c.dot(x) + f.terms[j].d;
      best_max = std::max(best_max, v);
    }
    best_min = std::min(best_min, best_max);
  }
  return best_min;
}

Eigen::VectorXd eval_vector(const MinMaxVector& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(f.n_u());
  for (int i = 0; i < f.n_u(); ++i) out(i) = eval_scalar(f.outputs[i], x);
  return out;
}

ValueBounds affine_bounds(const AffineTerm& t, const BoxDomain& X) {
  X.validate();
  require(t.c.size() == X.dim(), "term/domain dimension mismatch");
  ValueBounds b{t.d, t.d};
  for (int i = 0; i < X.dim(); ++i) {
    if (t.c(i) >= 0.0) {
      b.lo += t.c(i) * X.lo(i);
      b.hi += t.c(i) * X.hi(i);
    } else {
      b.lo += t.c(i) * X.hi(i);
      b.hi += t.c(i) * X.lo(i);
    }
  }
  return b;
}

MinMaxScalar random_minmax_scalar(int n_x, int m, int l, std::uint64_t seed) {
  require(n_x >= 1 && m >= 1 && l >= 1, "bad generator arguments");
  require(m >= l, "need at least one term per group");
  Rng rng(seed);

  MinMaxScalar f;
  f.n_x = n_x;
  f.terms.resize(m);
  for (auto& t : f.terms) {
    t.c = Eigen::VectorXd::NullaryExpr(n_x, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); });
    t.d = rng.uniform(-1.0, 1.0);
  }

  // Deal every term into a group, then add a few shared memberships.
  std::vector<int> order(m);
  for (int j = 0; j < m; ++j) order[j] = j;
  rng.shuffle(order);
  f.groups.assign(l, {});
  for (int j = 0; j < m; ++j) f.groups[j % l].push_back(order[j]);
  const int extras = static_cast<int>(rng.below(static_cast<std::uint64_t>(m) + 1));
  for (int e = 0; e < extras; ++e) {
    auto& g = f.groups[rng.below(l)];
    const int cand = static_cast<int>(rng.below(m));
    if (std::find(g.begin(), g.end(), cand) == g.end()) g.push_back(cand);
  }
  f.validate();
  return f;
}

MinMaxVector random_minmax_vector(int n_x, int n_u, int m, int l, std::uint64_t seed) {
  require(n_u >= 1, "need at least one output");
  MinMaxVector f;
  f.n_x = n_x;
  Rng mix(seed);
  for (int i = 0; i < n_u; ++i) {
    // Vary shape a little between outputs while staying within (m, l).
    const int mi = 1 + static_cast<int>(mix.below(static_cast<std::uint64_t>(m)));
    const int li = 1 + static_cast<int>(mix.below(static_cast<std::uint64_t>(std::min(l, mi))));
    f.outputs.push_back(random_minmax_scalar(n_x, mi, li, mix.next_u64()));
  }
  f.validate();
  return f;
}

}  // namespace htmpc
