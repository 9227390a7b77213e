#include "htmpc/htnn.hpp"

#include <algorithm>
#include <cmath>

namespace htmpc {

namespace {

int ceil_log2_ll(long long p) {
  int k = 0;
  while ((1LL << k) < p) ++k;
  return k;
}

void check_size(const SizeReport& s) {
  // A violated ceiling is a construction bug, not a data problem.
  if (!s.within_bounds()) throw std::logic_error("network size exceeded its certified bound");
}

double clamp_to(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// A value tracked during construction: an affine combination of the current
// frontier's neuron outputs (empty w encodes a literal constant) together with
// a sound enclosure of its range over the build domain.
struct Value {
  Eigen::VectorXd w;
  double b = 0.0;
  ValueBounds iv{0.0, 0.0};

  bool literal() const { return w.size() == 0; }
  bool degenerate() const { return !(iv.lo < iv.hi); }
};

struct PendingRow {
  Eigen::VectorXd w;
  double b;
  ActivationTag tag;
  ValueBounds out;
};

// How a reduced value is assembled from the level's neurons.
struct Recipe {
  enum Kind { konst, single, pair_sum } kind;
  int n1 = -1, n2 = -1;
  double cst = 0.0;
  ValueBounds iv{0.0, 0.0};
};

class Builder {
 public:
  explicit Builder(int input_dim) : frontier_(input_dim) {}

  // Pairwise max levels until one value remains.
  void reduce(std::vector<Value>& values) {
    while (values.size() > 1) level(values);
  }

  void finish_scalar(const Value& v, bool negate) {
    HtnnLayer out;
    out.W.resize(1, frontier_);
    out.W.row(0) = negate ? (-wired(v)).eval() : wired(v);
    out.b.resize(1);
    out.b(0) = negate ? -v.b : v.b;
    out.acts.push_back(ActivationTag::ident());
    layers_.push_back(std::move(out));
    bounds_.push_back({negate ? ValueBounds{-v.iv.hi, -v.iv.lo} : v.iv});
  }

  BuiltHtnn take(int input_dim) {
    BuiltHtnn built;
    built.net.input_dim = input_dim;
    built.net.layers = std::move(layers_);
    built.neuron_bounds = std::move(bounds_);
    built.output_bounds = built.neuron_bounds.back();
    built.size = measure(built.net);
    return built;
  }

 private:
  Eigen::VectorXd wired(const Value& v) const {
    return v.literal() ? Eigen::VectorXd::Zero(frontier_).eval() : v.w;
  }

  static ActivationTag pass_tag(const ValueBounds& iv) {
    // A hardtanh whose bounds enclose the reachable range is an exact
    // pass-through; a degenerate range cannot form a valid tag, so fall back
    // to an identity neuron (equally exact).
    if (iv.lo < iv.hi && std::isfinite(iv.lo) && std::isfinite(iv.hi)) {
      return ActivationTag::clamp(iv.lo, iv.hi);
    }
    return ActivationTag::ident();
  }

  int push_row(std::vector<PendingRow>& rows, Eigen::VectorXd w, double b, ActivationTag tag,
               ValueBounds out) {
    rows.push_back({std::move(w), b, tag, out});
    return static_cast<int>(rows.size()) - 1;
  }

  Recipe pass(const Value& v, std::vector<PendingRow>& rows) {
    if (v.literal()) return {Recipe::konst, -1, -1, v.b, v.iv};
    const int n = push_row(rows, v.w, v.b, pass_tag(v.iv), v.iv);
    return {Recipe::single, n, -1, 0.0, v.iv};
  }

  Recipe pair_max(const Value& a, const Value& b, std::vector<PendingRow>& rows) {
    // One side never reaches the other's floor: the max is the dominant side.
    if (b.iv.hi <= a.iv.lo) return pass(a, rows);
    if (a.iv.hi <= b.iv.lo) return pass(b, rows);

    // Overlapping ranges. max(p, q) = clamp(q - p, 0, q.hi - p.lo) + clamp(p),
    // exact for any enclosing bounds; p must have a non-degenerate range to
    // host the clamp term.
    const Value* pp = !a.degenerate() ? &a : (!b.degenerate() ? &b : nullptr);
    if (!pp) {
      // Two constants with overlapping (hence equal) degenerate ranges.
      return pass(a.iv.lo >= b.iv.lo ? a : b, rows);
    }
    const Value& p = *pp;
    const Value& q = (&p == &a) ? b : a;

    const double diff_hi = q.iv.hi - p.iv.lo;  // > 0 by the overlap test
    const ValueBounds pre{q.iv.lo - p.iv.hi, q.iv.hi - p.iv.lo};
    const ValueBounds out1{clamp_to(pre.lo, 0.0, diff_hi), clamp_to(pre.hi, 0.0, diff_hi)};
    const int n1 = push_row(rows, (wired(q) - wired(p)).eval(), q.b - p.b,
                            ActivationTag::clamp(0.0, diff_hi), out1);
    const int n2 = push_row(rows, wired(p), p.b, ActivationTag::clamp(p.iv.lo, p.iv.hi), p.iv);
    return {Recipe::pair_sum, n1, n2, 0.0,
            {std::max(a.iv.lo, b.iv.lo), std::max(a.iv.hi, b.iv.hi)}};
  }

  void level(std::vector<Value>& values) {
    std::vector<PendingRow> rows;
    std::vector<Recipe> recipes;
    recipes.reserve((values.size() + 1) / 2);
    for (std::size_t t = 0; t + 1 < values.size(); t += 2) {
      recipes.push_back(pair_max(values[t], values[t + 1], rows));
    }
    if (values.size() % 2 == 1) recipes.push_back(pass(values.back(), rows));

    if (!rows.empty()) {
      HtnnLayer layer;
      layer.W.resize(static_cast<int>(rows.size()), frontier_);
      layer.b.resize(static_cast<int>(rows.size()));
      std::vector<ValueBounds> lb;
      lb.reserve(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        layer.W.row(static_cast<int>(i)) = rows[i].w;
        layer.b(static_cast<int>(i)) = rows[i].b;
        layer.acts.push_back(rows[i].tag);
        lb.push_back(rows[i].out);
      }
      layers_.push_back(std::move(layer));
      bounds_.push_back(std::move(lb));
      frontier_ = static_cast<int>(rows.size());
    }

    std::vector<Value> next;
    next.reserve(recipes.size());
    for (const Recipe& r : recipes) {
      Value v;
      v.iv = r.iv;
      if (r.kind == Recipe::konst) {
        v.b = r.cst;
      } else {
        v.w = Eigen::VectorXd::Zero(frontier_);
        v.w(r.n1) = 1.0;
        if (r.kind == Recipe::pair_sum) v.w(r.n2) += 1.0;
      }
      next.push_back(std::move(v));
    }
    values = std::move(next);
  }

  int frontier_;
  std::vector<HtnnLayer> layers_;
  std::vector<std::vector<ValueBounds>> bounds_;
};

// Max of wired input values with known enclosures; negate_io folds min = -max(-.)
// into the first and last affine maps.
BuiltHtnn build_extremum_of_values(const std::vector<ValueBounds>& in, bool negate_io) {
  const int l = static_cast<int>(in.size());
  Builder bld(l);
  std::vector<Value> values(l);
  for (int i = 0; i < l; ++i) {
    values[i].w = Eigen::VectorXd::Zero(l);
    values[i].w(i) = negate_io ? -1.0 : 1.0;
    values[i].b = 0.0;
    values[i].iv = negate_io ? ValueBounds{-in[i].hi, -in[i].lo} : in[i];
  }
  bld.reduce(values);
  bld.finish_scalar(values[0], negate_io);
  BuiltHtnn built = bld.take(l);
  built.size.depth_bound = ceil_log2_ll(l) + 1;
  built.size.width_bound = l > 1 ? l : 0;
  built.size.hardtanh_bound = r_of(l);
  check_size(built.size);
  return built;
}

}  // namespace

ActivationTag ActivationTag::clamp(double lo, double hi) {
  require(lo < hi && std::isfinite(lo) && std::isfinite(hi),
          "hardtanh bounds must be finite with lo < hi");
  return {Kind::hardtanh, lo, hi};
}

void HtnnSpec::validate() const {
  require(input_dim >= 1, "input_dim must be >= 1");
  require(!layers.empty(), "network needs at least one layer");
  int prev = input_dim;
  for (const auto& layer : layers) {
    require(layer.W.cols() == prev, "layer input width mismatch");
    require(layer.W.rows() >= 1, "layer must have at least one neuron");
    require(layer.b.size() == layer.W.rows(), "bias size mismatch");
    require(static_cast<int>(layer.acts.size()) == layer.W.rows(), "activation count mismatch");
    require(layer.W.allFinite() && layer.b.allFinite(), "layer weights must be finite");
    for (const auto& tag : layer.acts) {
      if (!tag.is_identity()) {
        require(tag.lo < tag.hi && std::isfinite(tag.lo) && std::isfinite(tag.hi),
                "hardtanh bounds must be finite with lo < hi");
      }
    }
    prev = layer.width();
  }
}

long long r_of(long long p) {
  require(p >= 1, "r is defined for p >= 1");
  long long total = 0;
  while (p > 1) {
    total += p;
    p = (p + 1) / 2;
  }
  return total;
}

bool r_bound_check(long long p_max) {
  for (long long p = 1; p <= p_max; ++p) {
    if (!(r_of(p) < 2 * (2 * p - 1))) return false;
  }
  return true;
}

SizeReport measure(const HtnnSpec& net) {
  SizeReport s;
  s.depth = net.depth();
  for (int t = 0; t < net.depth(); ++t) {
    const auto& layer = net.layers[t];
    if (t + 1 < net.depth()) s.width = std::max(s.width, layer.width());
    for (const auto& tag : layer.acts) {
      if (!tag.is_identity()) ++s.hardtanh_count;
    }
  }
  return s;
}

BuiltHtnn build_max_affine(const std::vector<AffineTerm>& terms, const BoxDomain& X) {
  X.validate();
  require(!terms.empty(), "need at least one term");
  const int n_x = X.dim();
  const long long m = static_cast<long long>(terms.size());

  Builder bld(n_x);
  std::vector<Value> values;
  values.reserve(terms.size());
  for (const auto& t : terms) {
    require(t.c.size() == n_x, "term/domain dimension mismatch");
    Value v;
    const ValueBounds iv = affine_bounds(t, X);
    if (!t.c.isZero(0.0)) v.w = t.c;
    v.b = t.d;
    v.iv = iv;
    values.push_back(std::move(v));
  }
  bld.reduce(values);
  bld.finish_scalar(values[0], false);

  BuiltHtnn built = bld.take(n_x);
  built.size.depth_bound = ceil_log2_ll(m) + 1;
  built.size.width_bound = m > 1 ? m : 0;
  built.size.hardtanh_bound = r_of(m);
  check_size(built.size);
  return built;
}

BuiltHtnn compose(const BuiltHtnn& outer, const BuiltHtnn& inner) {
  inner.net.validate();
  outer.net.validate();
  require(inner.net.output_dim() == outer.net.input_dim,
          "inner output dimension must match outer input dimension");

  const HtnnLayer& last = inner.net.layers.back();
  const bool absorb = std::all_of(last.acts.begin(), last.acts.end(),
                                  [](const ActivationTag& t) { return t.is_identity(); });

  BuiltHtnn built;
  built.net.input_dim = inner.net.input_dim;
  built.net.layers.assign(inner.net.layers.begin(), inner.net.layers.end() - (absorb ? 1 : 0));
  built.neuron_bounds.assign(inner.neuron_bounds.begin(),
                             inner.neuron_bounds.end() - (absorb ? 1 : 0));

  if (absorb) {
    const HtnnLayer& first = outer.net.layers.front();
    HtnnLayer merged;
    merged.W = first.W * last.W;
    merged.b = first.W * last.b + first.b;
    merged.acts = first.acts;
    built.net.layers.push_back(std::move(merged));
    built.neuron_bounds.push_back(outer.neuron_bounds.front());
    built.net.layers.insert(built.net.layers.end(), outer.net.layers.begin() + 1,
                            outer.net.layers.end());
    built.neuron_bounds.insert(built.neuron_bounds.end(), outer.neuron_bounds.begin() + 1,
                               outer.neuron_bounds.end());
  } else {
    built.net.layers.insert(built.net.layers.end(), outer.net.layers.begin(),
                            outer.net.layers.end());
    built.neuron_bounds.insert(built.neuron_bounds.end(), outer.neuron_bounds.begin(),
                               outer.neuron_bounds.end());
  }

  built.output_bounds = outer.output_bounds;
  built.size = measure(built.net);
  const int inner_last_w = absorb ? 0 : last.width();
  built.size.depth_bound = inner.size.depth + outer.size.depth - (absorb ? 1 : 0);
  built.size.width_bound =
      std::max({inner.size.width, inner_last_w, outer.size.width});
  built.size.hardtanh_bound = inner.size.hardtanh_count + outer.size.hardtanh_count;
  check_size(built.size);
  return built;
}

BuiltHtnn parallel(const std::vector<BuiltHtnn>& nets) {
  require(!nets.empty(), "parallel needs at least one network");
  const int in_dim = nets.front().net.input_dim;
  int depth = 0;
  for (const auto& n : nets) {
    n.net.validate();
    require(n.net.input_dim == in_dim, "parallel networks must share the input dimension");
    require(static_cast<int>(n.output_bounds.size()) == n.net.output_dim(),
            "parallel needs output bounds on every network");
    depth = std::max(depth, n.net.depth());
  }

  // Pad each net to the common depth: its final affine stage becomes a
  // pass-through hardtanh layer, identity carries follow, and a fresh identity
  // affine stage lands on the last level.
  std::vector<std::vector<HtnnLayer>> padded(nets.size());
  std::vector<std::vector<std::vector<ValueBounds>>> padded_bounds(nets.size());
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto& n = nets[i];
    const int m = n.net.output_dim();
    padded[i] = n.net.layers;
    padded_bounds[i] = n.neuron_bounds;
    if (n.net.depth() == depth) continue;

    auto& chain = padded[i];
    std::vector<ActivationTag> pass_tags;
    for (const auto& ob : n.output_bounds) {
      if (ob.lo < ob.hi && std::isfinite(ob.lo) && std::isfinite(ob.hi)) {
        pass_tags.push_back(ActivationTag::clamp(ob.lo, ob.hi));
      } else {
        pass_tags.push_back(ActivationTag::ident());
      }
    }
    chain.back().acts = pass_tags;  // exact: bounds enclose the reachable range
    for (int t = n.net.depth() + 1; t < depth; ++t) {
      HtnnLayer carry;
      carry.W = Eigen::MatrixXd::Identity(m, m);
      carry.b = Eigen::VectorXd::Zero(m);
      carry.acts = pass_tags;
      chain.push_back(std::move(carry));
      padded_bounds[i].push_back(n.output_bounds);
    }
    HtnnLayer out;
    out.W = Eigen::MatrixXd::Identity(m, m);
    out.b = Eigen::VectorXd::Zero(m);
    out.acts.assign(m, ActivationTag::ident());
    chain.push_back(std::move(out));
    padded_bounds[i].push_back(n.output_bounds);
  }

  BuiltHtnn built;
  built.net.input_dim = in_dim;
  for (int t = 0; t < depth; ++t) {
    int rows = 0, cols = 0;
    for (std::size_t i = 0; i < nets.size(); ++i) {
      rows += padded[i][t].width();
      cols += static_cast<int>(padded[i][t].W.cols());
    }
    HtnnLayer layer;
    layer.b.resize(rows);
    std::vector<ValueBounds> lb;
    lb.reserve(rows);
    if (t == 0) {
      layer.W.resize(rows, in_dim);
      int r0 = 0;
      for (std::size_t i = 0; i < nets.size(); ++i) {
        const auto& src = padded[i][0];
        layer.W.middleRows(r0, src.width()) = src.W;
        layer.b.segment(r0, src.width()) = src.b;
        layer.acts.insert(layer.acts.end(), src.acts.begin(), src.acts.end());
        lb.insert(lb.end(), padded_bounds[i][0].begin(), padded_bounds[i][0].end());
        r0 += src.width();
      }
    } else {
      layer.W = Eigen::MatrixXd::Zero(rows, cols);
      int r0 = 0, c0 = 0;
      for (std::size_t i = 0; i < nets.size(); ++i) {
        const auto& src = padded[i][t];
        layer.W.block(r0, c0, src.width(), src.W.cols()) = src.W;
        layer.b.segment(r0, src.width()) = src.b;
        layer.acts.insert(layer.acts.end(), src.acts.begin(), src.acts.end());
        lb.insert(lb.end(), padded_bounds[i][t].begin(), padded_bounds[i][t].end());
        r0 += src.width();
        c0 += static_cast<int>(src.W.cols());
      }
    }
    built.net.layers.push_back(std::move(layer));
    built.neuron_bounds.push_back(std::move(lb));
  }

  for (const auto& n : nets) {
    built.output_bounds.insert(built.output_bounds.end(), n.output_bounds.begin(),
                               n.output_bounds.end());
  }

  built.size = measure(built.net);
  built.size.depth_bound = depth;
  built.size.width_bound = 0;
  built.size.hardtanh_bound = 0;
  for (const auto& n : nets) {
    const long long m = n.net.output_dim();
    built.size.width_bound += std::max<long long>(n.size.width, 2 * m);
    built.size.hardtanh_bound += n.size.hardtanh_count + 2 * m * (depth - n.net.depth());
  }
  check_size(built.size);
  return built;
}

BuiltHtnn build_scalar_minmax(const MinMaxScalar& f, const BoxDomain& X) {
  f.validate();
  X.validate();
  require(f.n_x == X.dim(), "law/domain dimension mismatch");

  const long long l = static_cast<long long>(f.groups.size());
  const long long m = static_cast<long long>(f.terms.size());

  std::vector<BuiltHtnn> blocks;
  blocks.reserve(f.groups.size());
  for (const auto& g : f.groups) {
    std::vector<AffineTerm> sel;
    sel.reserve(g.size());
    for (int j : g) sel.push_back(f.terms[j]);
    blocks.push_back(build_max_affine(sel, X));
  }

  BuiltHtnn built;
  if (l == 1) {
    built = std::move(blocks.front());
  } else {
    BuiltHtnn par = parallel(blocks);
    BuiltHtnn min_stage = build_extremum_of_values(par.output_bounds, true);
    built = compose(min_stage, par);
  }

  built.size.depth_bound = ceil_log2_ll(l) + ceil_log2_ll(m) + 1;
  built.size.width_bound = l * std::max<long long>(m, 2);
  built.size.hardtanh_bound = 2 * l * (1 + 2 * m + ceil_log2_ll(m)) - 2;
  check_size(built.size);
  return built;
}

BuiltHtnn build_vector_minmax(const MinMaxVector& f, const BoxDomain& X) {
  f.validate();
  X.validate();
  require(f.n_x == X.dim(), "law/domain dimension mismatch");

  std::vector<BuiltHtnn> parts;
  parts.reserve(f.outputs.size());
  for (const auto& out : f.outputs) parts.push_back(build_scalar_minmax(out, X));
  if (parts.size() == 1) return std::move(parts.front());
  return parallel(parts);
}

}  // namespace htmpc
