#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "htmpc/box_qp.hpp"
#include "htmpc/closed_loop.hpp"
#include "htmpc/htnn.hpp"
#include "htmpc/minmax.hpp"
#include "htmpc/mpc_core.hpp"
#include "htmpc/nn_runtime.hpp"
#include "htmpc/training.hpp"
#include "htmpc/unfolded.hpp"

// JSON and CSV (de)serialization for every artifact the tools exchange.
// Doubles go through the library's shortest round-trip formatting, so a
// save/load cycle reproduces values bit for bit. All loaders throw DataError
// on malformed input.
namespace htmpc {

using json = nlohmann::json;

json matrix_json(const Eigen::MatrixXd& M);  // nested arrays, row by row
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

json problem_to_json(const MpcProblem& p);
MpcProblem problem_from_json(const json& j);

json qp_to_json(const CondensedQp& qp);
CondensedQp qp_from_json(const json& j);

json minmax_to_json(const MinMaxVector& f, const BoxDomain* domain = nullptr);
MinMaxVector minmax_from_json(const json& j);
std::optional<BoxDomain> minmax_domain_from_json(const json& j);

json htnn_to_json(const HtnnSpec& net, const SizeReport* size = nullptr);
HtnnSpec htnn_from_json(const json& j);

json unfolded_to_json(const UnfoldedParams& p);
UnfoldedParams unfolded_from_json(const json& j);

/// Iterate histories are not serialized; everything else round-trips.
json solve_report_to_json(const SolveReport& r);
SolveReport solve_report_from_json(const json& j);

json cert_to_json(const ConvergenceCert& c);
ConvergenceCert cert_from_json(const json& j);

json train_report_to_json(const TrainReport& r);
TrainReport train_report_from_json(const json& j);

json lipschitz_to_json(const LipschitzCert& c);
LipschitzCert lipschitz_from_json(const json& j);

json metrics_to_json(const TrajectoryMetrics& m);
TrajectoryMetrics metrics_from_json(const json& j);

/// Samples as JSON lines ({"x0": [...], "u": [...]} per line); the manifest
/// carries sizes, seed, and the split index lists.
void save_dataset(const Dataset& ds, const std::string& samples_path,
                  const std::string& manifest_path);
Dataset load_dataset(const std::string& samples_path, const std::string& manifest_path);

/// Columns t, x_1.., u_1..; the final row carries the terminal state with
/// empty input cells. A leading "# controller=..." comment names the policy.
void save_trajectory_csv(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory_csv(const std::string& path);

void save_json(const json& j, const std::string& path);
json load_json(const std::string& path);

}  // namespace htmpc
