#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hydroadp::model {

struct SystemDims {
  int n_reservoirs = 0;
  int n_controls = 0;    // 2n + 1: releases, spills, thermal
  int n_inflows = 0;     // p measured sites, p <= n
  int horizon = 0;       // K stages
  int n_hydro_states = 0;  // E
};

/// Immutable after build_system; all operations on it are pure functions.
struct ReservoirSystem {
  SystemDims dims;
  Eigen::MatrixXd coupling;     // B, n x n routing matrix
  Eigen::VectorXd capacity;     // hm3
  Eigen::VectorXd release_max;  // hm3/week
  Eigen::VectorXd spill_max;    // hm3/week
  Eigen::VectorXd conversion;   // MWh per hm3 released
  Eigen::VectorXd demand;       // MWh/week, length K
  double thermal_cost = 0.0;    // currency/MWh
  double thermal_max = 0.0;     // MWh/week
  double deficit_cost = 0.0;    // currency/MWh
  std::vector<int> inflow_map;  // site j feeds reservoir inflow_map[j]
  std::string name;
  std::vector<std::string> build_warnings;
};

struct StorageState {
  Eigen::VectorXd x;  // hm3, within [0, capacity]
};

struct Control {
  Eigen::VectorXd r;  // releases, hm3/week
  Eigen::VectorXd s;  // spills, hm3/week
  double t = 0.0;     // thermal, MWh/week
  double d = 0.0;     // deficit slack, MWh/week
};

struct InflowVector {
  Eigen::VectorXd w;  // hm3/week, zeros at unmeasured reservoirs
};

/// Linear feasible set over the stacked decision z = [r; s; t; d].
struct ConstraintSet {
  Eigen::MatrixXd eq_A;
  Eigen::VectorXd eq_b;
  Eigen::MatrixXd in_A;
  Eigen::VectorXd in_b;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  bool contains(const Eigen::VectorXd& z, double tol) const;
};

/// Decision vector layout helpers; z has length 2n + 2.
int decision_size(const ReservoirSystem& sys);
Eigen::VectorXd control_to_z(const Control& u);
Control z_to_control(const ReservoirSystem& sys, const Eigen::VectorXd& z);

ReservoirSystem build_system(const std::string& json_text);
ReservoirSystem load_system(const std::string& path);
std::string system_to_json(const ReservoirSystem& sys);

StorageState dynamics(const ReservoirSystem& sys, const StorageState& x,
                      const Control& u, const InflowVector& w);

ConstraintSet feasible_set(const ReservoirSystem& sys, int k,
                           const StorageState& x, const InflowVector& w);

double stage_cost(const ReservoirSystem& sys, int k, const Control& u);

/// Coefficients of the stage cost over z; stage_cost(u) = dot(vec, z(u)).
Eigen::VectorXd stage_cost_vector(const ReservoirSystem& sys);

}  // namespace hydroadp::model
