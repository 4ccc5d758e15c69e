#include "hydroadp/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hydroadp/errors.hpp"
#include "json.hpp"

namespace hydroadp::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;

bool ConstraintSet::contains(const VectorXd& z, double tol) const {
  if (z.size() != lb.size()) return false;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (std::isfinite(lb[i]) && z[i] < lb[i] - tol) return false;
    if (std::isfinite(ub[i]) && z[i] > ub[i] + tol) return false;
  }
  if (eq_A.rows() > 0 &&
      (eq_A * z - eq_b).cwiseAbs().maxCoeff() > tol)
    return false;
  if (in_A.rows() > 0 && (in_A * z - in_b).maxCoeff() > tol) return false;
  return true;
}

int decision_size(const ReservoirSystem& sys) {
  return 2 * sys.dims.n_reservoirs + 2;
}

VectorXd control_to_z(const Control& u) {
  const int n = static_cast<int>(u.r.size());
  VectorXd z(2 * n + 2);
  z.segment(0, n) = u.r;
  z.segment(n, n) = u.s;
  z[2 * n] = u.t;
  z[2 * n + 1] = u.d;
  return z;
}

Control z_to_control(const ReservoirSystem& sys, const VectorXd& z) {
  const int n = sys.dims.n_reservoirs;
  if (z.size() != 2 * n + 2)
    throw ConfigError("z_to_control: decision vector has wrong length");
  Control u;
  u.r = z.segment(0, n);
  u.s = z.segment(n, n);
  u.t = z[2 * n];
  u.d = z[2 * n + 1];
  return u;
}

namespace {

VectorXd vector_from(const nlohmann::json& j, const std::string& key,
                     int expected) {
  if (!j.contains(key)) throw ConfigError("system config: missing '" + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array())
    throw ConfigError("system config: '" + key + "' must be an array");
  if (expected >= 0 && static_cast<int>(arr.size()) != expected)
    throw ConfigError("system config: '" + key + "' must have length " +
                      std::to_string(expected));
  VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = arr.at(i).get<double>();
  return v;
}

void require_positive(const VectorXd& v, const std::string& key) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v[i] > 0.0))
      throw ConfigError("system config: '" + key + "' must be elementwise > 0");
}

}  // namespace

ReservoirSystem build_system(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("system config: invalid JSON: ") + e.what());
  }

  ReservoirSystem sys;
  sys.name = j.value("name", std::string("unnamed"));

  if (!j.contains("coupling") || !j.at("coupling").is_array())
    throw ConfigError("system config: missing 'coupling' matrix");
  const auto& bj = j.at("coupling");
  const int n = static_cast<int>(bj.size());
  if (n < 1) throw ConfigError("system config: at least one reservoir required");
  sys.coupling.resize(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(bj.at(i).size()) != n)
      throw ConfigError("system config: 'coupling' must be square");
    for (int c = 0; c < n; ++c) sys.coupling(i, c) = bj.at(i).at(c).get<double>();
  }

  sys.dims.n_reservoirs = n;
  sys.dims.n_controls = 2 * n + 1;
  sys.dims.horizon = j.value("horizon", 0);
  sys.dims.n_hydro_states = j.value("n_hydro_states", 1);
  if (sys.dims.horizon < 1)
    throw ConfigError("system config: 'horizon' must be >= 1");
  if (sys.dims.n_hydro_states < 1)
    throw ConfigError("system config: 'n_hydro_states' must be >= 1");

  sys.capacity = vector_from(j, "capacity", n);
  sys.release_max = vector_from(j, "release_max", n);
  sys.spill_max = vector_from(j, "spill_max", n);
  sys.conversion = vector_from(j, "conversion", n);
  require_positive(sys.capacity, "capacity");
  require_positive(sys.release_max, "release_max");
  require_positive(sys.spill_max, "spill_max");
  require_positive(sys.conversion, "conversion");

  if (!j.contains("demand")) throw ConfigError("system config: missing 'demand'");
  if (j.at("demand").is_number()) {
    sys.demand = VectorXd::Constant(sys.dims.horizon, j.at("demand").get<double>());
  } else {
    sys.demand = vector_from(j, "demand", sys.dims.horizon);
  }
  for (Eigen::Index i = 0; i < sys.demand.size(); ++i)
    if (sys.demand[i] < 0.0)
      throw ConfigError("system config: 'demand' must be nonnegative");

  sys.thermal_cost = j.value("thermal_cost", -1.0);
  sys.thermal_max = j.value("thermal_max", -1.0);
  sys.deficit_cost = j.value("deficit_cost", -1.0);
  if (!(sys.thermal_cost > 0.0))
    throw ConfigError("system config: 'thermal_cost' must be > 0");
  if (sys.thermal_max < 0.0)
    throw ConfigError("system config: 'thermal_max' must be >= 0");
  if (!(sys.deficit_cost > sys.thermal_cost))
    throw ConfigError("system config: 'deficit_cost' must exceed 'thermal_cost'");

  if (j.contains("inflow_map")) {
    for (const auto& v : j.at("inflow_map"))
      sys.inflow_map.push_back(v.get<int>());
  } else {
    for (int i = 0; i < n; ++i) sys.inflow_map.push_back(i);
  }
  std::set<int> seen;
  for (int idx : sys.inflow_map) {
    if (idx < 0 || idx >= n)
      throw ConfigError("system config: 'inflow_map' index out of range");
    if (!seen.insert(idx).second)
      throw ConfigError("system config: 'inflow_map' has duplicate reservoir");
  }
  sys.dims.n_inflows = static_cast<int>(sys.inflow_map.size());
  if (sys.dims.n_inflows < 1 || sys.dims.n_inflows > n)
    throw ConfigError("system config: need 1..n inflow sites");

  // Routing: each diagonal is -1 (outflow leaves the plant) and each column
  // sums to -1 (water exits the system) or 0 (it enters one plant downstream).
  const double tol = 1e-12;
  for (int c = 0; c < n; ++c) {
    if (std::abs(sys.coupling(c, c) + 1.0) > tol)
      throw ConfigError("system config: coupling diagonal must be -1");
    double colsum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i != c && sys.coupling(i, c) < -tol)
        throw ConfigError("system config: coupling off-diagonals must be >= 0");
      colsum += sys.coupling(i, c);
    }
    if (std::abs(colsum) > tol && std::abs(colsum + 1.0) > tol)
      throw ConfigError("system config: coupling column " + std::to_string(c) +
                        " must sum to -1 or 0");
  }

  for (int i = 0; i < n; ++i) {
    if (sys.spill_max[i] < sys.capacity[i]) {
      sys.build_warnings.push_back(
          "spill_max[" + std::to_string(i) +
          "] below capacity: feasibility under extreme inflows not guaranteed");
    }
  }
  return sys;
}

ReservoirSystem load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read system file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return build_system(ss.str());
}

std::string system_to_json(const ReservoirSystem& sys) {
  nlohmann::json j;
  j["name"] = sys.name;
  j["horizon"] = sys.dims.horizon;
  j["n_hydro_states"] = sys.dims.n_hydro_states;
  const int n = sys.dims.n_reservoirs;
  nlohmann::json b = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < n; ++c) row.push_back(sys.coupling(i, c));
    b.push_back(std::move(row));
  }
  j["coupling"] = std::move(b);
  auto vec = [](const VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  j["capacity"] = vec(sys.capacity);
  j["release_max"] = vec(sys.release_max);
  j["spill_max"] = vec(sys.spill_max);
  j["conversion"] = vec(sys.conversion);
  j["demand"] = vec(sys.demand);
  j["thermal_cost"] = sys.thermal_cost;
  j["thermal_max"] = sys.thermal_max;
  j["deficit_cost"] = sys.deficit_cost;
  j["inflow_map"] = sys.inflow_map;
  return j.dump(2);
}

StorageState dynamics(const ReservoirSystem& sys, const StorageState& x,
                      const Control& u, const InflowVector& w) {
  const int n = sys.dims.n_reservoirs;
  if (x.x.size() != n || u.r.size() != n || u.s.size() != n || w.w.size() != n)
    throw ConfigError("dynamics: dimension mismatch");
  VectorXd next = x.x + sys.coupling * (u.r + u.s) + w.w;
  for (int i = 0; i < n; ++i) {
    const double tol = 1e-9 * std::max(sys.capacity[i], 1.0);
    if (next[i] < -tol || next[i] > sys.capacity[i] + tol)
      throw NumericalError("dynamics: storage bound violated at reservoir " +
                           std::to_string(i) + " (control infeasible)");
    next[i] = std::clamp(next[i], 0.0, sys.capacity[i]);
  }
  return StorageState{std::move(next)};
}

ConstraintSet feasible_set(const ReservoirSystem& sys, int k,
                           const StorageState& x, const InflowVector& w) {
  const int n = sys.dims.n_reservoirs;
  if (k < 0 || k >= sys.dims.horizon)
    throw ConfigError("feasible_set: stage index out of range");
  if (x.x.size() != n || w.w.size() != n)
    throw ConfigError("feasible_set: dimension mismatch");
  const int nz = 2 * n + 2;

  ConstraintSet cs;
  cs.lb = VectorXd::Zero(nz);
  cs.ub.resize(nz);
  cs.ub.segment(0, n) = sys.release_max;
  cs.ub.segment(n, n) = sys.spill_max;
  cs.ub[2 * n] = sys.thermal_max;
  cs.ub[2 * n + 1] = std::numeric_limits<double>::infinity();

  // Power balance: hydro energy + thermal + deficit slack covers demand.
  cs.eq_A.setZero(1, nz);
  cs.eq_A.block(0, 0, 1, n) = sys.conversion.transpose();
  cs.eq_A(0, 2 * n) = 1.0;
  cs.eq_A(0, 2 * n + 1) = 1.0;
  cs.eq_b.resize(1);
  cs.eq_b[0] = sys.demand[k];

  // Storage window: 0 <= x + B(r+s) + w <= capacity.
  cs.in_A.setZero(2 * n, nz);
  cs.in_A.block(0, 0, n, n) = sys.coupling;
  cs.in_A.block(0, n, n, n) = sys.coupling;
  cs.in_A.block(n, 0, n, n) = -sys.coupling;
  cs.in_A.block(n, n, n, n) = -sys.coupling;
  cs.in_b.resize(2 * n);
  cs.in_b.segment(0, n) = sys.capacity - x.x - w.w;
  cs.in_b.segment(n, n) = x.x + w.w;
  return cs;
}

double stage_cost(const ReservoirSystem& sys, int k, const Control& u) {
  if (k < 0 || k >= sys.dims.horizon)
    throw ConfigError("stage_cost: stage index out of range");
  return sys.thermal_cost * u.t + sys.deficit_cost * u.d;
}

VectorXd stage_cost_vector(const ReservoirSystem& sys) {
  const int n = sys.dims.n_reservoirs;
  VectorXd c = VectorXd::Zero(2 * n + 2);
  c[2 * n] = sys.thermal_cost;
  c[2 * n + 1] = sys.deficit_cost;
  return c;
}

}  // namespace hydroadp::model
