#include "htmpc/serialize.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace htmpc {

namespace {

template <typename F>
auto guarded(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

// Shortest round-trip double formatting (same as the JSON artifacts use).
std::string num(double v) { return json(v).dump(); }

double parse_num(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) throw DataError("malformed number '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

json tag_json(const ActivationTag& tag) {
  if (tag.is_identity()) return json{{"kind", "identity"}};
  return json{{"kind", "hardtanh"}, {"lo", tag.lo}, {"hi", tag.hi}};
}

ActivationTag tag_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return ActivationTag::ident();
  if (kind == "hardtanh") {
    return ActivationTag::clamp(j.at("lo").get<double>(), j.at("hi").get<double>());
  }
  throw DataError("unknown activation kind '" + kind + "'");
}

std::vector<int> ints_from_json(const json& j) {
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

}  // namespace

json matrix_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  return guarded("matrix", [&] {
    require(j.is_array() && !j.empty(), "matrix must be a nonempty array of rows");
    const std::size_t cols = j.front().size();
    require(cols >= 1, "matrix rows must be nonempty");
    Eigen::MatrixXd M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
      require(j[i].size() == cols, "matrix rows must have equal length");
      for (std::size_t c = 0; c < cols; ++c) {
        M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
      }
    }
    return M;
  });
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  return guarded("vector", [&] {
    require(j.is_array(), "vector must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
  });
}

json problem_to_json(const MpcProblem& p) {
  return json{{"A", matrix_json(p.sys.A)}, {"B", matrix_json(p.sys.B)},
              {"Q", matrix_json(p.Q)},     {"R", matrix_json(p.R)},
              {"P", matrix_json(p.P)},     {"N", p.N},
              {"u_lo", vector_json(p.u_lo)}, {"u_hi", vector_json(p.u_hi)}};
}

MpcProblem problem_from_json(const json& j) {
  return guarded("mpc problem", [&] {
    MpcProblem p;
    p.sys.A = matrix_from_json(j.at("A"));
    p.sys.B = matrix_from_json(j.at("B"));
    p.Q = matrix_from_json(j.at("Q"));
    p.R = matrix_from_json(j.at("R"));
    p.P = matrix_from_json(j.at("P"));
    p.N = j.at("N").get<int>();
    p.u_lo = vector_from_json(j.at("u_lo"));
    p.u_hi = vector_from_json(j.at("u_hi"));
    p.validate();
    return p;
  });
}

json qp_to_json(const CondensedQp& qp) {
  return json{{"H", matrix_json(qp.H)}, {"Q2", matrix_json(qp.Q2)},
              {"lo", vector_json(qp.lo)}, {"hi", vector_json(qp.hi)},
              {"n_x", qp.n_x},            {"n_u", qp.n_u},
              {"N", qp.N}};
}

CondensedQp qp_from_json(const json& j) {
  return guarded("condensed qp", [&] {
    CondensedQp qp;
    qp.H = matrix_from_json(j.at("H"));
    qp.Q2 = matrix_from_json(j.at("Q2"));
    qp.lo = vector_from_json(j.at("lo"));
    qp.hi = vector_from_json(j.at("hi"));
    qp.n_x = j.at("n_x").get<int>();
    qp.n_u = j.at("n_u").get<int>();
    qp.N = j.at("N").get<int>();
    qp.validate();
    return qp;
  });
}

json minmax_to_json(const MinMaxVector& f, const BoxDomain* domain) {
  json outputs = json::array();
  for (const auto& out : f.outputs) {
    json terms = json::array();
    for (const auto& t : out.terms) terms.push_back(json{{"c", vector_json(t.c)}, {"d", t.d}});
    json groups = json::array();
    for (const auto& g : out.groups) groups.push_back(g);
    outputs.push_back(json{{"terms", std::move(terms)}, {"groups", std::move(groups)}});
  }
  json j{{"n_x", f.n_x}, {"outputs", std::move(outputs)}};
  if (domain) j["domain"] = json{{"lo", vector_json(domain->lo)}, {"hi", vector_json(domain->hi)}};
  return j;
}

MinMaxVector minmax_from_json(const json& j) {
  return guarded("minmax law", [&] {
    MinMaxVector f;
    f.n_x = j.at("n_x").get<int>();
    for (const auto& out : j.at("outputs")) {
      MinMaxScalar s;
      s.n_x = f.n_x;
      for (const auto& t : out.at("terms")) {
        s.terms.push_back({vector_from_json(t.at("c")), t.at("d").get<double>()});
      }
      for (const auto& g : out.at("groups")) s.groups.push_back(ints_from_json(g));
      f.outputs.push_back(std::move(s));
    }
    f.validate();
    return f;
  });
}

std::optional<BoxDomain> minmax_domain_from_json(const json& j) {
  return guarded("minmax domain", [&]() -> std::optional<BoxDomain> {
    if (!j.contains("domain")) return std::nullopt;
    BoxDomain X;
    X.lo = vector_from_json(j.at("domain").at("lo"));
    X.hi = vector_from_json(j.at("domain").at("hi"));
    X.validate();
    return X;
  });
}

json htnn_to_json(const HtnnSpec& net, const SizeReport* size) {
  json layers = json::array();
  for (const auto& layer : net.layers) {
    json acts = json::array();
    for (const auto& tag : layer.acts) acts.push_back(tag_json(tag));
    layers.push_back(json{{"W", matrix_json(layer.W)},
                          {"b", vector_json(layer.b)},
                          {"acts", std::move(acts)}});
  }
  json j{{"input_dim", net.input_dim}, {"layers", std::move(layers)}};
  if (size) {
    j["size"] = json{{"depth", size->depth},
                     {"width", size->width},
                     {"hardtanh_count", size->hardtanh_count},
                     {"depth_bound", size->depth_bound},
                     {"width_bound", size->width_bound},
                     {"hardtanh_bound", size->hardtanh_bound}};
  }
  return j;
}

HtnnSpec htnn_from_json(const json& j) {
  return guarded("network", [&] {
    HtnnSpec net;
    net.input_dim = j.at("input_dim").get<int>();
    for (const auto& l : j.at("layers")) {
      HtnnLayer layer;
      layer.W = matrix_from_json(l.at("W"));
      layer.b = vector_from_json(l.at("b"));
      for (const auto& a : l.at("acts")) layer.acts.push_back(tag_from_json(a));
      net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
  });
}

namespace {

const char* variant_name(UnfoldedVariant v) {
  switch (v) {
    case UnfoldedVariant::dense: return "dense";
    case UnfoldedVariant::structured: return "structured";
    case UnfoldedVariant::super_structured: return "super_structured";
  }
  throw DataError("unknown variant");
}

UnfoldedVariant variant_from_name(const std::string& s) {
  if (s == "dense") return UnfoldedVariant::dense;
  if (s == "structured") return UnfoldedVariant::structured;
  if (s == "super_structured") return UnfoldedVariant::super_structured;
  throw DataError("unknown variant '" + s + "'");
}

}  // namespace

json unfolded_to_json(const UnfoldedParams& p) {
  json layers = json::array();
  for (const auto& l : p.dense) {
    layers.push_back(json{{"alpha", l.alpha},
                          {"beta", l.beta},
                          {"Q1", matrix_json(l.Q1)},
                          {"Q2", matrix_json(l.Q2)}});
  }
  for (const auto& l : p.structured) {
    layers.push_back(json{{"alpha", l.alpha},
                          {"beta", l.beta},
                          {"Q11", matrix_json(l.Q11)},
                          {"Q12", matrix_json(l.Q12)},
                          {"Q21", matrix_json(l.Q21)}});
  }
  json j{{"variant", variant_name(p.variant)},
         {"n_x", p.n_x},
         {"n_u", p.n_u},
         {"N", p.N},
         {"lo", vector_json(p.lo)},
         {"hi", vector_json(p.hi)},
         {"u0", vector_json(p.u0)},
         {"layers", std::move(layers)}};
  if (p.variant == UnfoldedVariant::super_structured) j["A_hat"] = matrix_json(p.A_hat);
  return j;
}

UnfoldedParams unfolded_from_json(const json& j) {
  return guarded("unfolded parameters", [&] {
    UnfoldedParams p;
    p.variant = variant_from_name(j.at("variant").get<std::string>());
    p.n_x = j.at("n_x").get<int>();
    p.n_u = j.at("n_u").get<int>();
    p.N = j.at("N").get<int>();
    p.lo = vector_from_json(j.at("lo"));
    p.hi = vector_from_json(j.at("hi"));
    p.u0 = vector_from_json(j.at("u0"));
    for (const auto& l : j.at("layers")) {
      if (p.variant == UnfoldedVariant::dense) {
        UnfoldedLayer d;
        d.alpha = l.at("alpha").get<double>();
        d.beta = l.at("beta").get<double>();
        d.Q1 = matrix_from_json(l.at("Q1"));
        d.Q2 = matrix_from_json(l.at("Q2"));
        p.dense.push_back(std::move(d));
      } else {
        StructuredLayer s;
        s.alpha = l.at("alpha").get<double>();
        s.beta = l.at("beta").get<double>();
        s.Q11 = matrix_from_json(l.at("Q11"));
        s.Q12 = matrix_from_json(l.at("Q12"));
        s.Q21 = matrix_from_json(l.at("Q21"));
        p.structured.push_back(std::move(s));
      }
    }
    if (p.variant == UnfoldedVariant::super_structured) {
      p.A_hat = matrix_from_json(j.at("A_hat"));
    }
    p.validate();
    return p;
  });
}

json solve_report_to_json(const SolveReport& r) {
  json residuals = json::array();
  for (double v : r.residuals) residuals.push_back(v);
  return json{{"method", r.method},
              {"alpha", r.alpha},
              {"beta", r.beta},
              {"lambda_max", r.lambda_max},
              {"lambda_min", r.lambda_min},
              {"kappa", r.kappa},
              {"iters", r.iters},
              {"converged", r.converged},
              {"u", vector_json(r.u)},
              {"residuals", std::move(residuals)}};
}

SolveReport solve_report_from_json(const json& j) {
  return guarded("solve report", [&] {
    SolveReport r;
    r.method = j.at("method").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.beta = j.at("beta").get<double>();
    r.lambda_max = j.at("lambda_max").get<double>();
    r.lambda_min = j.at("lambda_min").get<double>();
    r.kappa = j.at("kappa").get<double>();
    r.iters = j.at("iters").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.u = vector_from_json(j.at("u"));
    for (const auto& v : j.at("residuals")) r.residuals.push_back(v.get<double>());
    return r;
  });
}

json cert_to_json(const ConvergenceCert& c) {
  return json{{"pass", c.pass},
              {"rate", c.rate},
              {"r2", c.r2},
              {"theory_rate", c.theory_rate},
              {"points", c.points}};
}

ConvergenceCert cert_from_json(const json& j) {
  return guarded("convergence certificate", [&] {
    ConvergenceCert c;
    c.pass = j.at("pass").get<bool>();
    c.rate = j.at("rate").get<double>();
    c.r2 = j.at("r2").get<double>();
    c.theory_rate = j.at("theory_rate").get<double>();
    c.points = j.at("points").get<int>();
    return c;
  });
}

json train_report_to_json(const TrainReport& r) {
  json tr = json::array(), va = json::array();
  for (double v : r.train_mse) tr.push_back(v);
  for (double v : r.val_mse) va.push_back(v);
  return json{{"train_mse", std::move(tr)},
              {"val_mse", std::move(va)},
              {"test_mse", r.test_mse},
              {"best_val", r.best_val},
              {"best_epoch", r.best_epoch},
              {"train_avg_monotone", r.train_avg_monotone},
              {"wall_seconds", r.wall_seconds}};
}

TrainReport train_report_from_json(const json& j) {
  return guarded("train report", [&] {
    TrainReport r;
    for (const auto& v : j.at("train_mse")) r.train_mse.push_back(v.get<double>());
    for (const auto& v : j.at("val_mse")) r.val_mse.push_back(v.get<double>());
    r.test_mse = j.at("test_mse").get<double>();
    r.best_val = j.at("best_val").get<double>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.train_avg_monotone = j.at("train_avg_monotone").get<bool>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  });
}

json lipschitz_to_json(const LipschitzCert& c) {
  json per = json::array();
  for (double v : c.per_layer) per.push_back(v);
  return json{{"per_layer", std::move(per)}, {"L", c.L}};
}

LipschitzCert lipschitz_from_json(const json& j) {
  return guarded("lipschitz certificate", [&] {
    LipschitzCert c;
    for (const auto& v : j.at("per_layer")) c.per_layer.push_back(v.get<double>());
    c.L = j.at("L").get<double>();
    return c;
  });
}

json metrics_to_json(const TrajectoryMetrics& m) {
  return json{{"violations", m.violations},
              {"terminal_ratio", m.terminal_ratio},
              {"max_input_deviation", m.max_input_deviation},
              {"mean_eval_seconds", m.mean_eval_seconds}};
}

TrajectoryMetrics metrics_from_json(const json& j) {
  return guarded("trajectory metrics", [&] {
    TrajectoryMetrics m;
    m.violations = j.at("violations").get<int>();
    m.terminal_ratio = j.at("terminal_ratio").get<double>();
    m.max_input_deviation = j.at("max_input_deviation").get<double>();
    m.mean_eval_seconds = j.at("mean_eval_seconds").get<double>();
    return m;
  });
}

void save_dataset(const Dataset& ds, const std::string& samples_path,
                  const std::string& manifest_path) {
  ds.validate();
  std::ofstream out(samples_path);
  if (!out) throw DataError("cannot write file: " + samples_path);
  for (int i = 0; i < ds.size(); ++i) {
    const json line{{"x0", vector_json(ds.X.col(i))}, {"u", vector_json(ds.U.col(i))}};
    out << line.dump() << '\n';
  }
  out.flush();
  if (!out) throw DataError("write failed: " + samples_path);

  json manifest{{"count", ds.size()},
                {"n_x", static_cast<int>(ds.X.rows())},
                {"nu", static_cast<int>(ds.U.rows())},
                {"seed", ds.seed},
                {"train", ds.train_idx},
                {"val", ds.val_idx},
                {"test", ds.test_idx}};
  save_json(manifest, manifest_path);
}

Dataset load_dataset(const std::string& samples_path, const std::string& manifest_path) {
  const json manifest = load_json(manifest_path);
  return guarded("dataset", [&] {
    Dataset ds;
    const int n = manifest.at("count").get<int>();
    const int n_x = manifest.at("n_x").get<int>();
    const int nu = manifest.at("nu").get<int>();
    require(n >= 1 && n_x >= 1 && nu >= 1, "manifest sizes must be positive");
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.train_idx = ints_from_json(manifest.at("train"));
    ds.val_idx = ints_from_json(manifest.at("val"));
    ds.test_idx = ints_from_json(manifest.at("test"));
    ds.X.resize(n_x, n);
    ds.U.resize(nu, n);

    std::ifstream in(samples_path);
    if (!in) throw DataError("cannot read file: " + samples_path);
    std::string line;
    int i = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      require(i < n, "more samples than the manifest declares");
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError("invalid JSON line in " + samples_path + ": " + e.what());
      }
      const Eigen::VectorXd x = vector_from_json(rec.at("x0"));
      const Eigen::VectorXd u = vector_from_json(rec.at("u"));
      require(x.size() == n_x && u.size() == nu, "sample size mismatch");
      ds.X.col(i) = x;
      ds.U.col(i) = u;
      ++i;
    }
    require(i == n, "fewer samples than the manifest declares");
    ds.validate();
    return ds;
  });
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  const int T = static_cast<int>(traj.U.cols());
  const int n_x = static_cast<int>(traj.X.rows());
  const int n_u = static_cast<int>(traj.U.rows());
  require(traj.X.cols() == T + 1 && T >= 1, "trajectory shape mismatch");

  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << "# controller=" << traj.controller << '\n';
  out << 't';
  for (int i = 1; i <= n_x; ++i) out << ",x_" << i;
  for (int i = 1; i <= n_u; ++i) out << ",u_" << i;
  out << '\n';
  for (int t = 0; t <= T; ++t) {
    out << t;
    for (int i = 0; i < n_x; ++i) out << ',' << num(traj.X(i, t));
    for (int i = 0; i < n_u; ++i) {
      out << ',';
      if (t < T) out << num(traj.U(i, t));
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read file: " + path);

  Trajectory traj;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty trajectory file");
  if (line.rfind("# controller=", 0) == 0) {
    traj.controller = line.substr(std::string("# controller=").size());
    require(static_cast<bool>(std::getline(in, line)), "missing trajectory header");
  }

  const std::vector<std::string> header = split_csv(line);
  require(!header.empty() && header[0] == "t", "trajectory header must start with t");
  int n_x = 0, n_u = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i].rfind("x_", 0) == 0) {
      ++n_x;
    } else if (header[i].rfind("u_", 0) == 0) {
      ++n_u;
    } else {
      throw DataError("unexpected trajectory column '" + header[i] + "'");
    }
  }
  require(n_x >= 1 && n_u >= 1, "trajectory must have state and input columns");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv(line));
  }
  require(rows.size() >= 2, "trajectory must have at least two rows");
  const int T = static_cast<int>(rows.size()) - 1;

  traj.X.resize(n_x, T + 1);
  traj.U.resize(n_u, T);
  for (int t = 0; t <= T; ++t) {
    const auto& cells = rows[static_cast<std::size_t>(t)];
    require(cells.size() == static_cast<std::size_t>(1 + n_x + n_u), "trajectory row width mismatch");
    require(parse_num(cells[0]) == static_cast<double>(t), "trajectory rows must be consecutive");
    for (int i = 0; i < n_x; ++i) traj.X(i, t) = parse_num(cells[static_cast<std::size_t>(1 + i)]);
    if (t < T) {
      for (int i = 0; i < n_u; ++i) {
        traj.U(i, t) = parse_num(cells[static_cast<std::size_t>(1 + n_x + i)]);
      }
    }
  }
  return traj;
}

void save_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
}

}  // namespace htmpc
