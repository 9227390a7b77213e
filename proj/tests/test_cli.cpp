#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "htmpc/htnn.hpp"
#include "htmpc/minmax.hpp"
#include "htmpc/serialize.hpp"

using namespace htmpc;
namespace fs = std::filesystem;

namespace {

const std::string cli = HTMPC_CLI_PATH;
const std::string data_dir = HTMPC_DATA_DIR;

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("htmpc_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& stderr_file = "") {
  std::string cmd = cli + " " + args;
  if (!stderr_file.empty()) cmd += " 2> " + stderr_file;
  cmd += stderr_file.empty() ? " > /dev/null 2>&1" : " > /dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string masses2() { return data_dir + "/masses2.json"; }

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("") == 1);
  CHECK(run("no-such-command") == 1);
  CHECK(run("solve") == 1);  // missing required options
  CHECK(run("--help") == 0);
}

TEST_CASE("condense emits a loadable QP") {
  TempDir tmp;
  const std::string out = tmp.path("qp.json");
  REQUIRE(fs::exists(masses2()));
  CHECK(run("condense --problem " + masses2() + " --out " + out) == 0);
  const CondensedQp qp = qp_from_json(load_json(out));
  CHECK(qp.nu() == 10);  // 2 inputs over a horizon of 5
  CHECK(qp.H.rows() == 10);
  qp.validate();
}

TEST_CASE("solve then certify round trip") {
  TempDir tmp;
  const std::string rep_path = tmp.path("report.json");
  const std::string res_path = tmp.path("residuals.csv");
  CHECK(run("solve --problem " + masses2() + " --x0 4,10,-1,-1 --out " + rep_path +
            " --residuals " + res_path) == 0);
  const SolveReport rep = solve_report_from_json(load_json(rep_path));
  CHECK(rep.method == "apgd");
  CHECK(rep.converged);
  CHECK(rep.u.size() == 10);
  CHECK(fs::exists(res_path));

  // The bundled plant is too well conditioned to produce a long residual
  // trail, so certify against a stiff double integrator with a cheap input.
  MpcProblem stiff;
  stiff.sys.A = (Eigen::MatrixXd(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
  stiff.sys.B = (Eigen::MatrixXd(2, 1) << 0.005, 0.1).finished();
  stiff.Q = Eigen::MatrixXd::Identity(2, 2);
  stiff.P = Eigen::MatrixXd::Identity(2, 2);
  stiff.R = Eigen::MatrixXd::Constant(1, 1, 0.01);
  stiff.N = 20;
  stiff.u_lo = Eigen::VectorXd::Constant(1, -1.0);
  stiff.u_hi = Eigen::VectorXd::Constant(1, 1.0);
  const std::string stiff_path = tmp.path("stiff.json");
  save_json(problem_to_json(stiff), stiff_path);

  const std::string cert_path = tmp.path("cert.json");
  CHECK(run("certify --problem " + stiff_path + " --x0 0.02,-0.01 --out " + cert_path) == 0);
  const json j = load_json(cert_path);
  CHECK(j.at("pass").get<bool>());
  CHECK(j.at("rate").get<double>() < 1.0);
  CHECK(j.at("points").get<int>() >= 10);
}

TEST_CASE("dataset, train, simulate pipeline") {
  TempDir tmp;
  const std::string samples = tmp.path("ds.jsonl");
  const std::string manifest = tmp.path("ds.manifest.json");
  CHECK(run("dataset --problem " + masses2() +
            " --x0-lo -1,-2,-1,-2 --x0-hi 1,2,1,2 --n-init 2 --horizon 5 --seed 3 "
            "--out-samples " + samples + " --out-manifest " + manifest) == 0);
  CHECK(load_json(manifest).at("count").get<int>() == 10);

  const std::string model = tmp.path("model.json");
  const std::string report = tmp.path("train.json");
  CHECK(run("train --dataset " + samples + " --manifest " + manifest + " --problem " +
            masses2() + " --arch dense --epochs 2 --batch 4 --seed 1 --noise 0.01 --out " +
            model + " --report " + report) == 0);
  const TrainReport tr = train_report_from_json(load_json(report));
  CHECK(tr.val_mse.size() == 3);

  const std::string traj = tmp.path("traj.csv");
  const std::string metrics = tmp.path("metrics.json");
  CHECK(run("simulate --problem " + masses2() + " --params " + model +
            " --x0 1,1,-1,0 --steps 20 --out " + traj + " --metrics " + metrics) == 0);
  const TrajectoryMetrics m = metrics_from_json(load_json(metrics));
  CHECK(m.violations == 0);
  CHECK(load_trajectory_csv(traj).U.cols() == 20);
}

TEST_CASE("compile a law and certify the network") {
  TempDir tmp;
  const MinMaxVector law = random_minmax_vector(2, 1, 4, 2, 11);
  BoxDomain X;
  X.lo = Eigen::VectorXd::Constant(2, -1.0);
  X.hi = Eigen::VectorXd::Constant(2, 1.0);
  const std::string law_path = tmp.path("law.json");
  save_json(minmax_to_json(law, &X), law_path);

  const std::string net_path = tmp.path("net.json");
  CHECK(run("compile-exact --law " + law_path + " --out " + net_path) == 0);
  const json j = load_json(net_path);
  CHECK(j.contains("size"));
  const HtnnSpec net = htnn_from_json(j);
  net.validate();

  const std::string cert_path = tmp.path("lip.json");
  CHECK(run("certify --net " + net_path + " --samples 200 --box-lo -1,-1 --box-hi 1,1 --out " +
            cert_path) == 0);
  const json cj = load_json(cert_path);
  CHECK(cj.at("L").get<double>() > 0.0);
  CHECK(cj.at("check").at("ok").get<bool>());

  // Laws without a stored domain cannot be compiled.
  const std::string bare = tmp.path("bare.json");
  save_json(minmax_to_json(law), bare);
  CHECK(run("compile-exact --law " + bare + " --out " + net_path) == 2);
}

TEST_CASE("data failures exit 2 with a machine-readable reason") {
  TempDir tmp;
  const std::string err = tmp.path("err.json");
  CHECK(run("condense --problem /nonexistent.json --out " + tmp.path("x.json"), err) == 2);
  std::ifstream in(err);
  json j;
  in >> j;
  CHECK(j.at("error").at("type").get<std::string>() == "data");
  CHECK(!j.at("error").at("message").get<std::string>().empty());

  const std::string junk = tmp.path("junk.json");
  std::ofstream(junk) << "{ nope";
  CHECK(run("condense --problem " + junk + " --out " + tmp.path("y.json")) == 2);

  CHECK(run("--kernels warp9 condense --problem " + masses2() + " --out " +
            tmp.path("z.json")) == 2);
}

TEST_CASE("numeric failures exit 3") {
  TempDir tmp;
  // A network whose first stage overflows to infinity on the start state.
  HtnnSpec net;
  net.input_dim = 4;
  HtnnLayer l;
  l.W = Eigen::MatrixXd::Constant(2, 4, 1e308);
  l.b = Eigen::VectorXd::Zero(2);
  l.acts = {ActivationTag::ident(), ActivationTag::ident()};
  net.layers = {l};
  const std::string net_path = tmp.path("hot.json");
  save_json(htnn_to_json(net), net_path);

  const std::string err = tmp.path("err.json");
  CHECK(run("simulate --problem " + masses2() + " --net " + net_path +
            " --x0 4,10,-1,-1 --steps 3 --out " + tmp.path("t.csv") + " --metrics " +
            tmp.path("m.json"),
            err) == 3);
  std::ifstream in(err);
  json j;
  in >> j;
  CHECK(j.at("error").at("type").get<std::string>() == "numeric");
}

TEST_CASE("relative artifact paths honor the output directory variable") {
  TempDir tmp;
  const std::string cmd = "HTMPC_OUT_DIR=" + tmp.dir.string() + " " + cli +
                          " condense --problem " + masses2() +
                          " --out sub.json > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  CHECK(WEXITSTATUS(rc) == 0);
  CHECK(fs::exists(tmp.path("sub.json")));
}
