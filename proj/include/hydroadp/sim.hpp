#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hydroadp/adp.hpp"
#include "hydroadp/hydrology.hpp"
#include "hydroadp/model.hpp"
#include "hydroadp/rng.hpp"

namespace hydroadp::sim {

/// A policy maps (stage, hydrologic state, storage, observed inflow) to a
/// control; it must be deterministic and must not consume scenario rng.
using PolicyFn = std::function<model::Control(
    int k, int e, const Eigen::VectorXd& x, const Eigen::VectorXd& w)>;

PolicyFn make_greedy_policy(const model::ReservoirSystem& sys,
                            const Eigen::MatrixXd& transition,
                            const adp::TrainedPolicy& policy);
PolicyFn make_myopic_policy(const model::ReservoirSystem& sys);

/// Scenario draws are policy-independent (common random numbers): per stage,
/// the next hydrologic state is drawn first, then the inflow for the current
/// state, both from the same stream.
struct Scenario {
  std::vector<int> hydro_states;       // K+1
  std::vector<Eigen::VectorXd> inflows;  // K, reservoir-mapped
};

Scenario generate_scenario(const model::ReservoirSystem& sys,
                           const Eigen::MatrixXd& transition,
                           const hydrology::InflowSampler& sampler, int e0,
                           Rng& rng);

struct Trajectory {
  Eigen::MatrixXd states;               // (K+1) x n
  std::vector<model::Control> controls;  // K
  std::vector<Eigen::VectorXd> inflows;  // K
  std::vector<int> hydro_states;         // K+1
  Eigen::VectorXd stage_costs;           // K
  double total = 0.0;
};

Trajectory simulate_trajectory(const model::ReservoirSystem& sys,
                               const PolicyFn& act,
                               const Eigen::MatrixXd& transition,
                               const hydrology::InflowSampler& sampler,
                               const Eigen::VectorXd& x0, int e0, Rng& rng);

Trajectory rollout_on_scenario(const model::ReservoirSystem& sys,
                               const PolicyFn& act, const Scenario& sc,
                               const Eigen::VectorXd& x0);

/// Scenario identity for common-random-number comparisons.
struct ScenarioKey {
  Eigen::VectorXd x0;
  int e0 = 0;
  std::uint64_t seed = 0;
  int trials = 0;
  bool matches(const ScenarioKey& other) const;
};

struct SimulationReport {
  std::string policy_name;
  int trials = 0;
  double mean_total = 0.0;
  double sample_dev = 0.0;       // sample standard deviation
  double band_halfwidth = 0.0;   // standard error, sigma/sqrt(T)
  double paper_band = 0.0;       // sqrt(sigma)/T side field
  std::vector<double> per_trial_totals;
  std::vector<double> terminal_storage;  // sum over reservoirs at stage K
  int skipped_trials = 0;
  ScenarioKey key;
};

SimulationReport monte_carlo(const model::ReservoirSystem& sys,
                             const std::string& name, const PolicyFn& act,
                             const Eigen::MatrixXd& transition,
                             const hydrology::InflowSampler& sampler,
                             const Eigen::VectorXd& x0, int e0, int trials,
                             std::uint64_t seed, int workers);

/// One trial per complete historical year: inflows verbatim from the record,
/// hydrologic states from the stored label sequence. Years with missing or
/// NA-labeled weeks are skipped and counted.
SimulationReport replay_historical(const model::ReservoirSystem& sys,
                                   const std::string& name, const PolicyFn& act,
                                   const hydrology::InflowDataset& ds,
                                   const std::vector<int>& labels,
                                   const Eigen::VectorXd& x0);

/// Perfect-foresight bound per scenario, on the same scenario streams as
/// monte_carlo (seed-aligned for paired comparison).
SimulationReport bound_report(const model::ReservoirSystem& sys,
                              const Eigen::MatrixXd& transition,
                              const hydrology::InflowSampler& sampler,
                              const Eigen::VectorXd& x0, int e0, int trials,
                              std::uint64_t seed, int workers);

/// CSV table of mean totals and percentage deltas; refuses reports whose
/// scenario keys differ (deltas would be noise-dominated).
std::string compare_policies(const std::vector<SimulationReport>& reports,
                             const SimulationReport* bound);

std::string report_to_json(const SimulationReport& r);
SimulationReport report_from_json(const std::string& text);
void save_report(const SimulationReport& r, const std::string& path);
SimulationReport load_report(const std::string& path);
std::string trials_to_csv(const SimulationReport& r);

}  // namespace hydroadp::sim
