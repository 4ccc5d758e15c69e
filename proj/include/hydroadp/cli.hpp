#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hydroadp::cli {

/// Resolved run description; every command echoes it (minus runtime knobs)
/// into the output directory so reruns are reproducible from files alone.
struct RunConfig {
  std::string system_path;
  std::string inflow_path;
  std::string method = "pca";  // kmeans|pca
  int hydro_states = 0;
  std::uint64_t seed = 0;
  std::vector<int> grid_steps;
  int noise_draws = 10;
  int trials = 105;
  double ridge = -1.0;
  Eigen::VectorXd x0;          // explicit storage; empty means use fraction
  double x0_fraction = 0.5;
  int e0 = 0;
  std::string out_dir = "out";
  int workers = 0;             // 0: machine parallelism
  std::vector<double> sweep_fractions;  // reservoir-0 initial level sweep
  std::string model_path;      // defaults to <out>/model.json
  std::string policy_path;     // defaults to <out>/policy.json
};

RunConfig load_run_config(const std::string& path);
int resolve_workers(int workers);

void cmd_estimate(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_simulate(const RunConfig& cfg, const std::string& policy_kind,
                  const std::string& mode);
void cmd_compare(const std::vector<std::string>& report_paths,
                 const std::string& bound_path, const std::string& out_dir);

/// Full argument parsing plus exit-code mapping:
/// 0 success, 2 config error, 3 data error, 4 numerical failure.
int run_cli(int argc, char** argv);

}  // namespace hydroadp::cli
