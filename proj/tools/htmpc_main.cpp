#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "htmpc/box_qp.hpp"
#include "htmpc/closed_loop.hpp"
#include "htmpc/htnn.hpp"
#include "htmpc/kernels.hpp"
#include "htmpc/minmax.hpp"
#include "htmpc/mpc_core.hpp"
#include "htmpc/nn_runtime.hpp"
#include "htmpc/serialize.hpp"
#include "htmpc/training.hpp"
#include "htmpc/unfolded.hpp"

namespace {

using namespace htmpc;

Eigen::VectorXd parse_vec(const std::string& s) {
  std::vector<double> vals;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cur, &used);
    } catch (const std::exception&) {
      throw DataError("malformed number '" + cur + "' in vector argument");
    }
    if (used != cur.size()) throw DataError("malformed number '" + cur + "' in vector argument");
    vals.push_back(v);
    cur.clear();
  };
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      flush();
    } else {
      cur += ch;
    }
  }
  flush();
  if (vals.empty()) throw DataError("empty vector argument");
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

// Relative artifact paths land in $HTMPC_OUT_DIR when that is set.
std::string artifact_path(const std::string& p) {
  if (p.empty() || p.front() == '/') return p;
  if (const char* dir = std::getenv("HTMPC_OUT_DIR")) return std::string(dir) + "/" + p;
  return p;
}

void write_residuals_csv(const SolveReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << "iter,residual\n";
  for (std::size_t i = 0; i < rep.residuals.size(); ++i) {
    out << (i + 1) << ',' << json(rep.residuals[i]).dump() << '\n';
  }
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

UnfoldedVariant variant_of(const std::string& arch) {
  if (arch == "dense") return UnfoldedVariant::dense;
  if (arch == "structured") return UnfoldedVariant::structured;
  if (arch == "super_structured") return UnfoldedVariant::super_structured;
  throw DataError("unknown architecture '" + arch + "'");
}

Eigen::VectorXd reference_start(int n_x) {
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n_x);
  const double pattern[4] = {4.0, 10.0, -1.0, -1.0};
  for (int i = 0; i < n_x && i < 4; ++i) x0(i) = pattern[i];
  return x0;
}

struct CondenseArgs {
  std::string problem, out = "qp.json";
};

struct SolveArgs {
  std::string problem, x0, method = "apgd", out = "solve_report.json", residuals;
  std::optional<double> alpha, beta;
  double tol = 1e-10;
  int max_iter = 100000;
};

struct CompileArgs {
  std::string law, out = "htnn.json";
};

struct DatasetArgs {
  std::string problem, x0_lo, x0_hi;
  std::string out_samples = "dataset.jsonl", out_manifest = "dataset.manifest.json";
  int n_init = 50, horizon = 30, jobs = 1;
  std::uint64_t seed = 1;
  bool full = false;
};

struct TrainArgs {
  std::string dataset, manifest, problem, arch = "htnn";
  std::string out = "model.json", report = "train_report.json";
  int depth = 0, width = 4, epochs = 50, batch = 64;
  double lr = 1e-3, noise = 0.0, init_scale = 1.0;
  std::optional<double> alpha, beta;
  std::uint64_t seed = 1;
};

struct SimulateArgs {
  std::string problem, x0, net, params, reference;
  std::string out = "trajectory.csv", metrics = "metrics.json";
  int steps = 100;
  bool use_mpc = false;
  double tol = 1e-10;
};

struct CertifyArgs {
  std::string problem, x0, net, method = "apgd", box_lo, box_hi;
  std::string out = "certificate.json";
  double tol = 1e-12, eps = 1e-4;
  int max_iter = 20000, samples = 0;
  std::uint64_t seed = 1;
};

struct ReproArgs {
  std::string out_dir = "repro", x0;
  int masses = 2, epochs = 150, depth = 3, jobs = 1;
  double lr = 1e-3, noise = 0.01, init_scale = 0.8;
  std::uint64_t seed = 1;
  bool full = false;
};

void run_condense(const CondenseArgs& a) {
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const CondensedQp qp = condense(p);
  const std::string out = artifact_path(a.out);
  save_json(qp_to_json(qp), out);
  std::cout << "condensed: nu=" << qp.nu() << " n_x=" << qp.n_x << " N=" << qp.N << " -> " << out
            << "\n";
}

void run_solve(const SolveArgs& a) {
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const CondensedQp qp = condense(p);
  const Eigen::VectorXd x0 = parse_vec(a.x0);
  require(x0.size() == qp.n_x, "x0 size must match the state dimension");

  BoxQp box{qp.H, q_of(qp, x0), qp.lo, qp.hi};
  SolveOptions so;
  so.tol = a.tol;
  so.max_iter = a.max_iter;
  so.alpha = a.alpha;
  so.beta = a.beta;

  SolveReport rep;
  if (a.method == "pgd") {
    rep = pgd(box, Eigen::VectorXd::Zero(qp.nu()), so);
  } else if (a.method == "apgd") {
    rep = apgd(box, Eigen::VectorXd::Zero(qp.nu()), so);
  } else {
    throw DataError("unknown method '" + a.method + "' (expected pgd or apgd)");
  }

  const std::string out = artifact_path(a.out);
  save_json(solve_report_to_json(rep), out);
  if (!a.residuals.empty()) write_residuals_csv(rep, artifact_path(a.residuals));
  std::cout << rep.method << ": iters=" << rep.iters << " converged=" << std::boolalpha
            << rep.converged << " kappa=" << rep.kappa << " -> " << out << "\n";
}

void run_compile(const CompileArgs& a) {
  const json j = load_json(a.law);
  const MinMaxVector law = minmax_from_json(j);
  const auto domain = minmax_domain_from_json(j);
  require(domain.has_value(), "law file must include a domain box");

  const BuiltHtnn built = build_vector_minmax(law, *domain);
  const std::string out = artifact_path(a.out);
  save_json(htnn_to_json(built.net, &built.size), out);
  std::cout << "compiled: depth=" << built.size.depth << "/" << built.size.depth_bound
            << " width=" << built.size.width << "/" << built.size.width_bound
            << " hardtanh=" << built.size.hardtanh_count << "/" << built.size.hardtanh_bound
            << " -> " << out << "\n";
}

void run_dataset(const DatasetArgs& a) {
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const Eigen::VectorXd lo = parse_vec(a.x0_lo);
  const Eigen::VectorXd hi = parse_vec(a.x0_hi);
  const int n_init = a.full ? 500 : a.n_init;
  const int horizon = a.full ? 100 : a.horizon;

  const Dataset ds = generate_dataset(p, n_init, horizon, lo, hi, a.seed, a.jobs);
  const std::string samples = artifact_path(a.out_samples);
  const std::string manifest = artifact_path(a.out_manifest);
  save_dataset(ds, samples, manifest);
  std::cout << "dataset: " << ds.size() << " pairs, split " << ds.train_idx.size() << "/"
            << ds.val_idx.size() << "/" << ds.test_idx.size() << " -> " << samples << "\n";
}

void run_train(const TrainArgs& a) {
  const Dataset ds = load_dataset(a.dataset, a.manifest);
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const CondensedQp qp = condense(p);
  require(ds.X.rows() == qp.n_x && ds.U.rows() == qp.nu(),
          "dataset dimensions do not match the problem");

  AdamConfig cfg;
  cfg.lr = a.lr;
  cfg.batch = a.batch;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;

  TrainReport rep;
  const std::string out = artifact_path(a.out);
  if (a.arch == "htnn") {
    const int depth = a.depth > 0 ? a.depth : 7;
    HtnnSpec net = make_trainable_htnn(qp.n_x, qp.nu(), depth, a.width, qp.lo, qp.hi, a.seed,
                                       a.init_scale);
    rep = train_htnn(net, ds, cfg);
    save_json(htnn_to_json(net), out);
  } else {
    const int depth = a.depth > 0 ? a.depth : 3;
    UnfoldedParams params = init_from_mpc(p, qp, a.alpha, a.beta, depth, variant_of(a.arch),
                                          Eigen::VectorXd::Zero(qp.nu()));
    perturb_params(params, a.noise, a.seed);
    rep = train_unfolded(params, ds, cfg);
    save_json(unfolded_to_json(params), out);
  }
  save_json(train_report_to_json(rep), artifact_path(a.report));
  std::cout << "trained " << a.arch << ": val " << rep.val_mse.front() << " -> " << rep.best_val
            << " (epoch " << rep.best_epoch << "), test " << rep.test_mse << " -> " << out << "\n";
}

Controller pick_controller(const SimulateArgs& a, const MpcProblem& p) {
  const int given = static_cast<int>(a.use_mpc) + static_cast<int>(!a.net.empty()) +
                    static_cast<int>(!a.params.empty());
  require(given == 1, "pick exactly one controller: --mpc, --net, or --params");
  if (a.use_mpc) {
    SolveOptions so;
    so.tol = a.tol;
    return mpc_controller(p, so);
  }
  if (!a.net.empty()) return net_controller(htnn_from_json(load_json(a.net)));
  return unfolded_controller(unfolded_from_json(load_json(a.params)));
}

void run_simulate(const SimulateArgs& a) {
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const Controller ctrl = pick_controller(a, p);
  const Eigen::VectorXd x0 = parse_vec(a.x0);

  const Trajectory traj = simulate(p, ctrl, x0, a.steps);
  const std::string out = artifact_path(a.out);
  save_trajectory_csv(traj, out);

  TrajectoryMetrics m;
  if (!a.reference.empty()) {
    const Trajectory ref = load_trajectory_csv(a.reference);
    m = trajectory_metrics(p, traj, &ref);
  } else {
    m = trajectory_metrics(p, traj);
  }
  save_json(metrics_to_json(m), artifact_path(a.metrics));
  std::cout << "simulated " << ctrl.name << ": terminal_ratio=" << m.terminal_ratio
            << " violations=" << m.violations << " -> " << out << "\n";
}

void run_certify(const CertifyArgs& a) {
  const std::string out = artifact_path(a.out);
  if (!a.net.empty()) {
    const HtnnSpec net = htnn_from_json(load_json(a.net));
    const LipschitzCert cert = lipschitz_cert(net);
    json j = lipschitz_to_json(cert);
    if (a.samples > 0) {
      require(!a.box_lo.empty() && !a.box_hi.empty(),
              "perturbation check needs --box-lo and --box-hi");
      BoxDomain X{parse_vec(a.box_lo), parse_vec(a.box_hi)};
      const PerturbationCheck pc = perturbation_check(net, X, a.samples, a.eps, a.seed);
      j["check"] = json{{"max_ratio", pc.max_ratio},
                        {"ok", pc.ok},
                        {"samples", pc.samples}};
    }
    save_json(j, out);
    std::cout << "lipschitz: L=" << cert.L << " -> " << out << "\n";
    return;
  }

  require(!a.problem.empty() && !a.x0.empty(),
          "certify needs either --net or --problem with --x0");
  const MpcProblem p = problem_from_json(load_json(a.problem));
  const CondensedQp qp = condense(p);
  const Eigen::VectorXd x0 = parse_vec(a.x0);
  require(x0.size() == qp.n_x, "x0 size must match the state dimension");

  BoxQp box{qp.H, q_of(qp, x0), qp.lo, qp.hi};
  SolveOptions so;
  so.tol = a.tol;
  so.max_iter = a.max_iter;
  so.record_iterates = true;
  const bool accelerated = a.method != "pgd";
  const SolveReport rep = accelerated ? apgd(box, Eigen::VectorXd::Zero(qp.nu()), so)
                                      : pgd(box, Eigen::VectorXd::Zero(qp.nu()), so);

  Eigen::VectorXd u_star;
  if (qp.nu() <= 12) {
    u_star = active_set_oracle(box);
  } else {
    SolveOptions ref;
    ref.tol = 1e-13;
    ref.max_iter = 2000000;
    u_star = apgd(box, Eigen::VectorXd::Zero(qp.nu()), ref).u;
  }

  const ConvergenceCert cert = convergence_cert(rep, u_star, rep.kappa, accelerated);
  json j = cert_to_json(cert);
  j["method"] = rep.method;
  save_json(j, out);
  std::cout << "certified " << rep.method << ": pass=" << std::boolalpha << cert.pass
            << " rate=" << cert.rate << " theory=" << cert.theory_rate << " r2=" << cert.r2
            << " -> " << out << "\n";
}

void run_repro(const ReproArgs& a) {
  const std::string dir = artifact_path(a.out_dir);
  std::filesystem::create_directories(dir);
  auto path = [&](const std::string& name) { return dir + "/" + name; };

  OscillatingMassesSpec spec;
  spec.n_masses = a.masses;
  const MpcProblem problem = make_masses_problem(spec);
  const CondensedQp qp = condense(problem);
  save_json(problem_to_json(problem), path("problem.json"));
  save_json(qp_to_json(qp), path("qp.json"));

  const int n_x = problem.sys.n_x();
  Eigen::VectorXd x0_lo(n_x), x0_hi(n_x);
  for (int i = 0; i < n_x; i += 2) {
    x0_lo(i) = -4.0;  // positions
    x0_hi(i) = 4.0;
    x0_lo(i + 1) = -10.0;  // velocities
    x0_hi(i + 1) = 10.0;
  }

  const int n_init = a.full ? 500 : 50;
  const int horizon = a.full ? 100 : 30;
  std::cout << "generating dataset (" << n_init << " x " << horizon << ")...\n";
  const Dataset ds = generate_dataset(problem, n_init, horizon, x0_lo, x0_hi, a.seed, a.jobs);
  save_dataset(ds, path("dataset.jsonl"), path("dataset.manifest.json"));

  const Eigen::VectorXd x0 = a.x0.empty() ? reference_start(n_x) : parse_vec(a.x0);
  const int T = 100;
  const Trajectory ref = simulate(problem, mpc_controller(problem), x0, T);
  save_trajectory_csv(ref, path("traj_mpc.csv"));

  json metrics;
  metrics["seed"] = a.seed;
  metrics["dataset"] = json{{"count", ds.size()},
                            {"train", ds.train_idx.size()},
                            {"val", ds.val_idx.size()},
                            {"test", ds.test_idx.size()}};
  {
    const TrajectoryMetrics m = trajectory_metrics(problem, ref);
    metrics["controllers"]["mpc"] =
        json{{"violations", m.violations}, {"terminal_ratio", m.terminal_ratio}};
  }
  json timings;
  timings["mpc"] = json{{"mean_eval_seconds", trajectory_metrics(problem, ref).mean_eval_seconds}};

  AdamConfig cfg;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;

  const std::vector<std::string> archs = {"htnn", "dense", "structured", "super_structured"};
  for (const std::string& arch : archs) {
    std::cout << "training " << arch << "...\n";
    TrainReport rep;
    Controller ctrl;
    if (arch == "htnn") {
      HtnnSpec net =
          make_trainable_htnn(qp.n_x, qp.nu(), 7, 4, qp.lo, qp.hi, a.seed, a.init_scale);
      rep = train_htnn(net, ds, cfg);
      save_json(htnn_to_json(net), path(arch + "_model.json"));
      ctrl = net_controller(net, arch);
    } else {
      UnfoldedParams params = init_from_mpc(problem, qp, std::nullopt, std::nullopt, a.depth,
                                            variant_of(arch), Eigen::VectorXd::Zero(qp.nu()));
      perturb_params(params, a.noise, a.seed);
      rep = train_unfolded(params, ds, cfg);
      save_json(unfolded_to_json(params), path(arch + "_model.json"));
      ctrl = unfolded_controller(params, arch);
    }
    save_json(train_report_to_json(rep), path(arch + "_train_report.json"));

    const Trajectory traj = simulate(problem, ctrl, x0, T);
    save_trajectory_csv(traj, path("traj_" + arch + ".csv"));
    const TrajectoryMetrics m = trajectory_metrics(problem, traj, &ref);
    metrics["controllers"][arch] = json{{"violations", m.violations},
                                        {"terminal_ratio", m.terminal_ratio},
                                        {"max_input_deviation", m.max_input_deviation},
                                        {"init_val_mse", rep.val_mse.front()},
                                        {"best_val_mse", rep.best_val},
                                        {"test_mse", rep.test_mse}};
    timings[arch] = json{{"mean_eval_seconds", m.mean_eval_seconds},
                         {"train_wall_seconds", rep.wall_seconds}};
    std::cout << "  " << arch << ": val " << rep.val_mse.front() << " -> " << rep.best_val
              << ", terminal_ratio=" << m.terminal_ratio << " violations=" << m.violations
              << "\n";
  }

  save_json(metrics, path("metrics.json"));
  save_json(timings, path("timings.json"));
  std::cout << "artifacts in " << dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"box-constrained MPC, first-order solvers, and hardtanh network tooling"};
  app.require_subcommand(1);
  std::string kernels = "auto";
  app.add_option("--kernels", kernels, "kernel backend: auto|scalar|avx2")->capture_default_str();

  CondenseArgs cond;
  auto* c_cond = app.add_subcommand("condense", "condense an MPC problem to a box QP");
  c_cond->add_option("--problem", cond.problem, "MPC problem JSON")->required();
  c_cond->add_option("--out", cond.out, "output QP JSON")->capture_default_str();

  SolveArgs sol;
  auto* c_sol = app.add_subcommand("solve", "solve the condensed QP at a given state");
  c_sol->add_option("--problem", sol.problem, "MPC problem JSON")->required();
  c_sol->add_option("--x0", sol.x0, "initial state, comma separated")->required();
  c_sol->add_option("--method", sol.method, "pgd or apgd")->capture_default_str();
  c_sol->add_option("--alpha", sol.alpha, "step size override");
  c_sol->add_option("--beta", sol.beta, "momentum override");
  c_sol->add_option("--tol", sol.tol, "stopping tolerance")->capture_default_str();
  c_sol->add_option("--max-iter", sol.max_iter, "iteration cap")->capture_default_str();
  c_sol->add_option("--out", sol.out, "output report JSON")->capture_default_str();
  c_sol->add_option("--residuals", sol.residuals, "optional residual CSV path");

  CompileArgs comp;
  auto* c_comp = app.add_subcommand("compile-exact", "compile a min-max law into a network");
  c_comp->add_option("--law", comp.law, "min-max law JSON (with domain)")->required();
  c_comp->add_option("--out", comp.out, "output network JSON")->capture_default_str();

  DatasetArgs dat;
  auto* c_dat = app.add_subcommand("dataset", "generate a supervised dataset from solved MPC");
  c_dat->add_option("--problem", dat.problem, "MPC problem JSON")->required();
  c_dat->add_option("--x0-lo", dat.x0_lo, "initial-state lower bounds")->required();
  c_dat->add_option("--x0-hi", dat.x0_hi, "initial-state upper bounds")->required();
  c_dat->add_option("--n-init", dat.n_init, "number of initial states")->capture_default_str();
  c_dat->add_option("--horizon", dat.horizon, "steps per initial state")->capture_default_str();
  c_dat->add_option("--seed", dat.seed, "random seed")->capture_default_str();
  c_dat->add_option("--jobs", dat.jobs, "parallel workers")->capture_default_str();
  c_dat->add_flag("--full", dat.full, "use the full 500 x 100 protocol");
  c_dat->add_option("--out-samples", dat.out_samples, "samples JSONL path")->capture_default_str();
  c_dat->add_option("--out-manifest", dat.out_manifest, "manifest JSON path")
      ->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a network on a dataset");
  c_tr->add_option("--dataset", tr.dataset, "samples JSONL")->required();
  c_tr->add_option("--manifest", tr.manifest, "manifest JSON")->required();
  c_tr->add_option("--problem", tr.problem, "MPC problem JSON")->required();
  c_tr->add_option("--arch", tr.arch, "htnn, dense, structured, or super_structured")
      ->capture_default_str();
  c_tr->add_option("--depth", tr.depth, "layers (default 7 for htnn, 3 for unfolded)");
  c_tr->add_option("--width", tr.width, "hidden width (htnn)")->capture_default_str();
  c_tr->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
  c_tr->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  c_tr->add_option("--batch", tr.batch, "batch size")->capture_default_str();
  c_tr->add_option("--seed", tr.seed, "random seed")->capture_default_str();
  c_tr->add_option("--noise", tr.noise, "init noise (unfolded)")->capture_default_str();
  c_tr->add_option("--init-scale", tr.init_scale, "init scale (htnn)")->capture_default_str();
  c_tr->add_option("--alpha", tr.alpha, "step size override (unfolded)");
  c_tr->add_option("--beta", tr.beta, "momentum override (unfolded)");
  c_tr->add_option("--out", tr.out, "output model JSON")->capture_default_str();
  c_tr->add_option("--report", tr.report, "output train report JSON")->capture_default_str();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "closed-loop simulation under a controller");
  c_sim->add_option("--problem", sim.problem, "MPC problem JSON")->required();
  c_sim->add_option("--x0", sim.x0, "initial state")->required();
  c_sim->add_option("--steps", sim.steps, "simulation steps")->capture_default_str();
  c_sim->add_flag("--mpc", sim.use_mpc, "use the receding-horizon solver controller");
  c_sim->add_option("--net", sim.net, "network controller JSON");
  c_sim->add_option("--params", sim.params, "unfolded controller JSON");
  c_sim->add_option("--reference", sim.reference, "reference trajectory CSV for deviation");
  c_sim->add_option("--tol", sim.tol, "solver tolerance (mpc controller)")->capture_default_str();
  c_sim->add_option("--out", sim.out, "output trajectory CSV")->capture_default_str();
  c_sim->add_option("--metrics", sim.metrics, "output metrics JSON")->capture_default_str();

  CertifyArgs cert;
  auto* c_cert = app.add_subcommand("certify", "convergence or Lipschitz certificates");
  c_cert->add_option("--problem", cert.problem, "MPC problem JSON (convergence mode)");
  c_cert->add_option("--x0", cert.x0, "initial state (convergence mode)");
  c_cert->add_option("--method", cert.method, "pgd or apgd")->capture_default_str();
  c_cert->add_option("--tol", cert.tol, "stopping tolerance")->capture_default_str();
  c_cert->add_option("--max-iter", cert.max_iter, "iteration cap")->capture_default_str();
  c_cert->add_option("--net", cert.net, "network JSON (Lipschitz mode)");
  c_cert->add_option("--samples", cert.samples, "perturbation-check sample count");
  c_cert->add_option("--box-lo", cert.box_lo, "perturbation-check box lower bounds");
  c_cert->add_option("--box-hi", cert.box_hi, "perturbation-check box upper bounds");
  c_cert->add_option("--eps", cert.eps, "perturbation size")->capture_default_str();
  c_cert->add_option("--seed", cert.seed, "random seed")->capture_default_str();
  c_cert->add_option("--out", cert.out, "output certificate JSON")->capture_default_str();

  ReproArgs rep;
  auto* c_rep = app.add_subcommand("repro", "end-to-end oscillating-masses reproduction");
  c_rep->add_option("--masses", rep.masses, "number of masses")->capture_default_str();
  c_rep->add_option("--seed", rep.seed, "random seed")->capture_default_str();
  c_rep->add_option("--epochs", rep.epochs, "training epochs")->capture_default_str();
  c_rep->add_option("--depth", rep.depth, "unfolded depth")->capture_default_str();
  c_rep->add_option("--lr", rep.lr, "learning rate")->capture_default_str();
  c_rep->add_option("--noise", rep.noise, "unfolded init noise")->capture_default_str();
  c_rep->add_option("--init-scale", rep.init_scale, "htnn init scale")->capture_default_str();
  c_rep->add_option("--jobs", rep.jobs, "parallel workers")->capture_default_str();
  c_rep->add_option("--x0", rep.x0, "simulation start state");
  c_rep->add_flag("--full", rep.full, "full 500 x 100 dataset protocol");
  c_rep->add_option("--out-dir", rep.out_dir, "artifact directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    kernels::force(kernels.c_str());
    if (c_cond->parsed()) run_condense(cond);
    if (c_sol->parsed()) run_solve(sol);
    if (c_comp->parsed()) run_compile(comp);
    if (c_dat->parsed()) run_dataset(dat);
    if (c_tr->parsed()) run_train(tr);
    if (c_sim->parsed()) run_simulate(sim);
    if (c_cert->parsed()) run_certify(cert);
    if (c_rep->parsed()) run_repro(rep);
  } catch (const DataError& e) {
    std::cerr << json{{"error", {{"type", "data"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << json{{"error", {{"type", "numeric"}, {"message", e.what()}}}}.dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"type", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
  return 0;
}
