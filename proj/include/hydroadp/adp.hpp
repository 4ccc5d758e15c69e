#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hydroadp/hydrology.hpp"
#include "hydroadp/model.hpp"
#include "hydroadp/qp.hpp"
#include "hydroadp/vfit.hpp"

namespace hydroadp::adp {

struct TrainingConfig {
  std::vector<int> grid_steps;  // sample points per reservoir axis
  int noise_draws = 10;         // inflow draws averaged per grid point
  double ridge = -1.0;          // < 0: scale-derived default per fit
  std::uint64_t seed = 0;
  int workers = 1;              // grid evaluation parallelism
};

struct StageFit {
  double objective = 0.0;
  int iterations = 0;
  bool projection_active = false;
  int clamped_betas = 0;  // negative sample means clipped to zero
};

/// Complete value-function table: values[k][e] approximates the expected
/// cost-to-go from stage k in hydrologic state e.
struct TrainedPolicy {
  int K = 0;
  int E = 0;
  int n = 0;
  std::vector<std::vector<vfit::QuadraticValueFunction>> values;
  vfit::QuadraticValueFunction terminal;
  std::vector<std::vector<StageFit>> fit_info;
  long long qp_count = 0;
  TrainingConfig config;
  std::string model_digest;

  const vfit::QuadraticValueFunction& value(int k, int e) const;
  static TrainedPolicy zero(int K, int E, int n);  // forces V identically 0
};

/// One-stage subproblem over z = [r; s; t; d]: stage cost plus the
/// transition-weighted next-stage quadratic, with the affine next state
/// substituted in. `constant` carries the z-independent part of the value.
struct OneStageProblem {
  qp::QpProblem qp;
  double constant = 0.0;
};

OneStageProblem one_stage_problem(
    const model::ReservoirSystem& sys,
    const std::vector<vfit::QuadraticValueFunction>& vnext,
    const Eigen::VectorXd& trans_row, int k, const Eigen::VectorXd& x,
    const Eigen::VectorXd& w);

double sample_bellman(const model::ReservoirSystem& sys,
                      const std::vector<vfit::QuadraticValueFunction>& vnext,
                      const Eigen::VectorXd& trans_row, int k,
                      const Eigen::VectorXd& x, const Eigen::VectorXd& w);

/// Mean of `draws` one-stage optima at state x, inflows sampled for
/// (week k mod 52, e). Per-draw rng streams derive from (seed, k, e,
/// grid_index, draw), so results are identical at any worker count.
vfit::SamplePair average_samples(
    const model::ReservoirSystem& sys,
    const std::vector<vfit::QuadraticValueFunction>& vnext,
    const Eigen::VectorXd& trans_row, const hydrology::InflowSampler& sampler,
    int k, int e, int grid_index, const Eigen::VectorXd& x, int draws,
    std::uint64_t seed, int* clamped = nullptr);

TrainedPolicy backward_pass(const model::ReservoirSystem& sys,
                            const hydrology::HydroMarkovModel& markov,
                            const hydrology::InflowSampler& sampler,
                            const TrainingConfig& cfg);

struct ActionResult {
  model::Control u;
  double objective = 0.0;  // stage cost + expected cost-to-go estimate
};

ActionResult greedy_action(const model::ReservoirSystem& sys,
                           const Eigen::MatrixXd& transition,
                           const TrainedPolicy& policy, int k, int e,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& w);

ActionResult myopic_action(const model::ReservoirSystem& sys, int k,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& w);

struct LowerBoundResult {
  std::vector<model::Control> controls;
  double cost = 0.0;
};

/// Deterministic K-stage problem with the whole inflow sequence known in
/// advance: a lower bound on any causal policy's cost for that sequence.
LowerBoundResult lower_bound(const model::ReservoirSystem& sys,
                             const Eigen::VectorXd& x0,
                             const std::vector<Eigen::VectorXd>& w_sequence);

/// Evaluates the K-stage objective of a fixed control sequence on a fixed
/// inflow sequence (replay check against lower_bound).
double replay_cost(const model::ReservoirSystem& sys,
                   const Eigen::VectorXd& x0,
                   const std::vector<model::Control>& controls,
                   const std::vector<Eigen::VectorXd>& w_sequence);

std::string policy_to_json(const TrainedPolicy& p);
TrainedPolicy policy_from_json(const std::string& text);
void save_policy(const TrainedPolicy& p, const std::string& path);
TrainedPolicy load_policy(const std::string& path);

std::uint64_t fnv1a64(const std::string& data);

}  // namespace hydroadp::adp
