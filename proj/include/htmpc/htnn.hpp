#pragma once

#include <Eigen/Dense>
#include <vector>

#include "htmpc/minmax.hpp"

namespace htmpc {

/// Per-neuron activation: pass-through or saturation to [lo, hi].
struct ActivationTag {
  enum class Kind { identity, hardtanh };
  Kind kind = Kind::identity;
  double lo = 0.0, hi = 0.0;

  static ActivationTag ident() { return {}; }
  static ActivationTag clamp(double lo, double hi);
  bool is_identity() const { return kind == Kind::identity; }
  double apply(double v) const {
    if (kind == Kind::identity) return v;
    return v < lo ? lo : (v > hi ? hi : v);
  }
};

struct HtnnLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  std::vector<ActivationTag> acts;

  int width() const { return static_cast<int>(W.rows()); }
};

/// Feedforward network of affine stages with per-neuron identity/hardtanh tags.
struct HtnnSpec {
  int input_dim = 0;
  std::vector<HtnnLayer> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().width(); }
  void validate() const;
};

/// Actual network sizes plus the certified ceilings they must stay under.
/// depth counts affine stages, width the widest hidden (non-final) layer, and
/// hardtanh_count every hardtanh-tagged neuron in the network.
struct SizeReport {
  int depth = 0, width = 0, hardtanh_count = 0;
  long long depth_bound = 0, width_bound = 0, hardtanh_bound = 0;

  bool within_bounds() const {
    return depth <= depth_bound && width <= width_bound && hardtanh_count <= hardtanh_bound;
  }
};

/// Network plus construction metadata: per-neuron propagated value ranges
/// (sound over the build domain) and the size report.
struct BuiltHtnn {
  HtnnSpec net;
  SizeReport size;
  std::vector<std::vector<ValueBounds>> neuron_bounds;  // one entry per layer
  std::vector<ValueBounds> output_bounds;
};

/// Hardtanh neurons needed to take the max of p bounded values:
/// r(1) = 0, r(p) = p + r(ceil(p/2)).
long long r_of(long long p);

/// Checks r(p) < 2(2p - 1) for every p in 1..p_max.
bool r_bound_check(long long p_max);

/// Actual sizes of a network (bound fields left zero).
SizeReport measure(const HtnnSpec& net);

/// Exact network for max_j (c_j'x + d_j) over the box X.
/// Sizes: depth = ceil(log2 m) + 1, hidden width <= m, hardtanh count <= r(m).
BuiltHtnn build_max_affine(const std::vector<AffineTerm>& terms, const BoxDomain& X);

/// Serial composition outer(inner(x)). When inner ends in an identity-tagged
/// affine stage (all builders here do), outer's first affine map is absorbed
/// into it and depth = d_inner + d_outer - 1; otherwise the stages are
/// concatenated and depth = d_inner + d_outer.
BuiltHtnn compose(const BuiltHtnn& outer, const BuiltHtnn& inner);

/// Side-by-side stacking of networks over a shared input. Shallower nets are
/// padded to the common depth with pass-through hardtanh neurons whose bounds
/// enclose the carried value (identity tags when a range is degenerate, which
/// a hardtanh tag cannot express). Requires output_bounds on every net.
BuiltHtnn parallel(const std::vector<BuiltHtnn>& nets);

/// Exact network for a scalar min-max law over box X: parallel max-affine
/// blocks composed with a min stage (min v = -max(-v), the negation folded
/// into the surrounding affine maps).
BuiltHtnn build_scalar_minmax(const MinMaxScalar& f, const BoxDomain& X);

/// Componentwise parallel stack of scalar min-max networks.
BuiltHtnn build_vector_minmax(const MinMaxVector& f, const BoxDomain& X);

}  // namespace htmpc
