#include "hydroadp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "hydroadp/errors.hpp"
#include "hydroadp/parallel.hpp"
#include "json.hpp"

namespace hydroadp::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

PolicyFn make_greedy_policy(const model::ReservoirSystem& sys,
                            const MatrixXd& transition,
                            const adp::TrainedPolicy& policy) {
  return [&sys, &transition, &policy](int k, int e, const VectorXd& x,
                                      const VectorXd& w) {
    return adp::greedy_action(sys, transition, policy, k, e, x, w).u;
  };
}

PolicyFn make_myopic_policy(const model::ReservoirSystem& sys) {
  return [&sys](int k, int /*e*/, const VectorXd& x, const VectorXd& w) {
    return adp::myopic_action(sys, k, x, w).u;
  };
}

Scenario generate_scenario(const model::ReservoirSystem& sys,
                           const MatrixXd& transition,
                           const hydrology::InflowSampler& sampler, int e0,
                           Rng& rng) {
  const int K = sys.dims.horizon;
  const int E = sys.dims.n_hydro_states;
  if (e0 < 0 || e0 >= E)
    throw ConfigError("generate_scenario: e0 out of range");
  if (transition.rows() != E || transition.cols() != E)
    throw ConfigError("generate_scenario: transition matrix shape mismatch");
  Scenario sc;
  sc.hydro_states.resize(static_cast<std::size_t>(K) + 1);
  sc.inflows.resize(static_cast<std::size_t>(K));
  sc.hydro_states[0] = e0;
  std::vector<double> row(static_cast<std::size_t>(E));
  for (int k = 0; k < K; ++k) {
    const int e = sc.hydro_states[static_cast<std::size_t>(k)];
    for (int j = 0; j < E; ++j) row[static_cast<std::size_t>(j)] = transition(e, j);
    sc.hydro_states[static_cast<std::size_t>(k) + 1] =
        static_cast<int>(rng.categorical(row));
    sc.inflows[static_cast<std::size_t>(k)] =
        sampler.sample(k % hydrology::kWeeksPerYear, e, rng).w;
  }
  return sc;
}

Trajectory rollout_on_scenario(const model::ReservoirSystem& sys,
                               const PolicyFn& act, const Scenario& sc,
                               const VectorXd& x0) {
  const int K = sys.dims.horizon;
  const int n = sys.dims.n_reservoirs;
  if (x0.size() != n) throw ConfigError("rollout: x0 has wrong length");
  for (int i = 0; i < n; ++i)
    if (x0[i] < 0.0 || x0[i] > sys.capacity[i])
      throw ConfigError("rollout: x0 outside storage bounds");

  Trajectory tr;
  tr.states.resize(K + 1, n);
  tr.states.row(0) = x0.transpose();
  tr.controls.reserve(static_cast<std::size_t>(K));
  tr.inflows = sc.inflows;
  tr.hydro_states = sc.hydro_states;
  tr.stage_costs.resize(K);

  const double scale = std::max(sys.capacity.maxCoeff(),
                                sys.demand.cwiseAbs().maxCoeff());
  model::StorageState x{x0};
  for (int k = 0; k < K; ++k) {
    const VectorXd& w = sc.inflows[static_cast<std::size_t>(k)];
    const int e = sc.hydro_states[static_cast<std::size_t>(k)];
    model::Control u = act(k, e, x.x, w);
    const VectorXd z = model::control_to_z(u);
    const model::ConstraintSet cs =
        model::feasible_set(sys, k, x, model::InflowVector{w});
    if (!cs.contains(z, 1e-5 * (1.0 + std::max(scale, z.cwiseAbs().maxCoeff()))))
      throw NumericalError("rollout: policy returned infeasible control at stage " +
                           std::to_string(k));
    tr.controls.push_back(u);
    tr.stage_costs[k] = model::stage_cost(sys, k, u);
    x = model::dynamics(sys, x, u, model::InflowVector{w});
    tr.states.row(k + 1) = x.x.transpose();
  }
  tr.total = tr.stage_costs.sum();
  return tr;
}

Trajectory simulate_trajectory(const model::ReservoirSystem& sys,
                               const PolicyFn& act, const MatrixXd& transition,
                               const hydrology::InflowSampler& sampler,
                               const VectorXd& x0, int e0, Rng& rng) {
  const Scenario sc = generate_scenario(sys, transition, sampler, e0, rng);
  return rollout_on_scenario(sys, act, sc, x0);
}

bool ScenarioKey::matches(const ScenarioKey& other) const {
  return e0 == other.e0 && seed == other.seed && trials == other.trials &&
         x0.size() == other.x0.size() && x0 == other.x0;
}

namespace {

// Trial streams derive from (seed, tag, trial); the tag separates simulation
// streams from training streams under a shared master seed.
constexpr std::uint64_t kTrialTag = 0x51AFu;

void finalize(SimulationReport& r) {
  const int T = r.trials;
  double sum = 0.0;
  for (double t : r.per_trial_totals) sum += t;
  r.mean_total = T > 0 ? sum / T : 0.0;
  double ss = 0.0;
  for (double t : r.per_trial_totals) ss += (t - r.mean_total) * (t - r.mean_total);
  r.sample_dev = T > 1 ? std::sqrt(ss / (T - 1)) : 0.0;
  r.band_halfwidth = T > 0 ? r.sample_dev / std::sqrt(static_cast<double>(T)) : 0.0;
  r.paper_band = T > 0 ? std::sqrt(r.sample_dev) / static_cast<double>(T) : 0.0;
}

}  // namespace

SimulationReport monte_carlo(const model::ReservoirSystem& sys,
                             const std::string& name, const PolicyFn& act,
                             const MatrixXd& transition,
                             const hydrology::InflowSampler& sampler,
                             const VectorXd& x0, int e0, int trials,
                             std::uint64_t seed, int workers) {
  if (trials < 1) throw ConfigError("monte_carlo: trials must be >= 1");
  SimulationReport r;
  r.policy_name = name;
  r.trials = trials;
  r.per_trial_totals.resize(static_cast<std::size_t>(trials));
  r.terminal_storage.resize(static_cast<std::size_t>(trials));
  r.key = ScenarioKey{x0, e0, seed, trials};
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    Rng rng(derive_seed(seed, kTrialTag, static_cast<std::uint64_t>(t)));
    Trajectory tr = simulate_trajectory(sys, act, transition, sampler, x0,
                                        e0, rng);
    r.per_trial_totals[t] = tr.total;
    r.terminal_storage[t] = tr.states.row(tr.states.rows() - 1).sum();
  });
  finalize(r);
  return r;
}

SimulationReport replay_historical(const model::ReservoirSystem& sys,
                                   const std::string& name, const PolicyFn& act,
                                   const hydrology::InflowDataset& ds,
                                   const std::vector<int>& labels,
                                   const VectorXd& x0) {
  const int K = sys.dims.horizon;
  if (K > hydrology::kWeeksPerYear)
    throw ConfigError("replay_historical: horizon beyond one year of record");
  if (static_cast<int>(labels.size()) != ds.rows())
    throw ConfigError("replay_historical: label count mismatch");

  // Row lookup per (year, week); later duplicates would shadow earlier ones.
  std::map<int, std::map<int, int>> by_year;
  for (int rr = 0; rr < ds.rows(); ++rr)
    by_year[ds.year[rr]][ds.week_of_year[rr]] = rr;

  SimulationReport r;
  r.policy_name = name;
  r.key = ScenarioKey{x0, -1, 0, 0};
  for (const auto& [year, weeks] : by_year) {
    Scenario sc;
    sc.hydro_states.resize(static_cast<std::size_t>(K) + 1);
    sc.inflows.resize(static_cast<std::size_t>(K));
    bool complete = true;
    for (int k = 0; k < K && complete; ++k) {
      auto it = weeks.find(k);
      if (it == weeks.end() || labels[static_cast<std::size_t>(it->second)] < 0) {
        complete = false;
        break;
      }
      const int row = it->second;
      sc.hydro_states[static_cast<std::size_t>(k)] =
          labels[static_cast<std::size_t>(row)];
      VectorXd w = VectorXd::Zero(sys.dims.n_reservoirs);
      for (std::size_t j = 0; j < sys.inflow_map.size(); ++j)
        w[sys.inflow_map[j]] = ds.series(row, static_cast<Eigen::Index>(j));
      sc.inflows[static_cast<std::size_t>(k)] = std::move(w);
    }
    if (!complete) {
      ++r.skipped_trials;
      continue;
    }
    int e_last = sc.hydro_states[static_cast<std::size_t>(K - 1)];
    if (K < hydrology::kWeeksPerYear) {
      auto it = weeks.find(K);
      if (it != weeks.end() && labels[static_cast<std::size_t>(it->second)] >= 0)
        e_last = labels[static_cast<std::size_t>(it->second)];
    }
    sc.hydro_states[static_cast<std::size_t>(K)] = e_last;
    Trajectory tr = rollout_on_scenario(sys, act, sc, x0);
    r.per_trial_totals.push_back(tr.total);
    r.terminal_storage.push_back(tr.states.row(tr.states.rows() - 1).sum());
  }
  if (r.per_trial_totals.empty())
    throw DataError("replay_historical: no complete years in the record");
  r.trials = static_cast<int>(r.per_trial_totals.size());
  r.key.trials = r.trials;
  finalize(r);
  return r;
}

SimulationReport bound_report(const model::ReservoirSystem& sys,
                              const MatrixXd& transition,
                              const hydrology::InflowSampler& sampler,
                              const VectorXd& x0, int e0, int trials,
                              std::uint64_t seed, int workers) {
  if (trials < 1) throw ConfigError("bound_report: trials must be >= 1");
  SimulationReport r;
  r.policy_name = "bound";
  r.trials = trials;
  r.per_trial_totals.resize(static_cast<std::size_t>(trials));
  r.terminal_storage.assign(static_cast<std::size_t>(trials), 0.0);
  r.key = ScenarioKey{x0, e0, seed, trials};
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    Rng rng(derive_seed(seed, kTrialTag, static_cast<std::uint64_t>(t)));
    const Scenario sc = generate_scenario(sys, transition, sampler, e0, rng);
    r.per_trial_totals[t] = adp::lower_bound(sys, x0, sc.inflows).cost;
  });
  finalize(r);
  return r;
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace

std::string compare_policies(const std::vector<SimulationReport>& reports,
                             const SimulationReport* bound) {
  if (reports.empty()) throw ConfigError("compare_policies: no reports");
  const ScenarioKey& key = reports.front().key;
  for (const auto& r : reports)
    if (!r.key.matches(key))
      throw DataError("compare_policies: scenario keys differ (" +
                      r.policy_name + "); rerun with a common seed/x0/e0");
  if (bound && !bound->key.matches(key))
    throw DataError("compare_policies: bound report scenario key differs");

  const double base = reports.front().mean_total;
  std::ostringstream out;
  out << "policy,trials,mean_total,sample_dev,stderr,pct_vs_"
      << reports.front().policy_name << ",pct_vs_bound\n";
  auto emit = [&](const SimulationReport& r) {
    out << r.policy_name << "," << r.trials << "," << fmt(r.mean_total) << ","
        << fmt(r.sample_dev) << "," << fmt(r.band_halfwidth) << ",";
    out << (base != 0.0 ? fmt(100.0 * (r.mean_total - base) / base) : "");
    out << ",";
    if (bound && bound->mean_total != 0.0)
      out << fmt(100.0 * (r.mean_total - bound->mean_total) / bound->mean_total);
    out << "\n";
  };
  for (const auto& r : reports) emit(r);
  if (bound) emit(*bound);
  return out.str();
}

std::string report_to_json(const SimulationReport& r) {
  nlohmann::json j;
  j["format"] = "hydroadp-report-v1";
  j["policy"] = r.policy_name;
  j["trials"] = r.trials;
  j["mean_total"] = r.mean_total;
  j["sample_dev"] = r.sample_dev;
  j["band_halfwidth"] = r.band_halfwidth;
  j["paper_band"] = r.paper_band;
  j["per_trial_totals"] = r.per_trial_totals;
  j["terminal_storage"] = r.terminal_storage;
  j["skipped_trials"] = r.skipped_trials;
  nlohmann::json x0 = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.key.x0.size(); ++i) x0.push_back(r.key.x0[i]);
  j["x0"] = std::move(x0);
  j["e0"] = r.key.e0;
  j["seed"] = r.key.seed;
  return j.dump(2);
}

SimulationReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: invalid JSON: ") + e.what());
  }
  if (j.value("format", std::string()) != "hydroadp-report-v1")
    throw DataError("report: unrecognized format tag");
  SimulationReport r;
  r.policy_name = j.at("policy").get<std::string>();
  r.trials = j.at("trials").get<int>();
  r.mean_total = j.at("mean_total").get<double>();
  r.sample_dev = j.at("sample_dev").get<double>();
  r.band_halfwidth = j.at("band_halfwidth").get<double>();
  r.paper_band = j.at("paper_band").get<double>();
  r.per_trial_totals = j.at("per_trial_totals").get<std::vector<double>>();
  r.terminal_storage = j.at("terminal_storage").get<std::vector<double>>();
  r.skipped_trials = j.at("skipped_trials").get<int>();
  const auto& x0 = j.at("x0");
  r.key.x0.resize(static_cast<Eigen::Index>(x0.size()));
  for (std::size_t i = 0; i < x0.size(); ++i)
    r.key.x0[static_cast<Eigen::Index>(i)] = x0.at(i).get<double>();
  r.key.e0 = j.at("e0").get<int>();
  r.key.seed = j.at("seed").get<std::uint64_t>();
  r.key.trials = r.trials;
  return r;
}

void save_report(const SimulationReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << report_to_json(r) << "\n";
}

SimulationReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read report: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::string trials_to_csv(const SimulationReport& r) {
  std::ostringstream out;
  out << "trial,total,terminal_storage\n";
  for (std::size_t t = 0; t < r.per_trial_totals.size(); ++t)
    out << t << "," << fmt(r.per_trial_totals[t]) << ","
        << fmt(r.terminal_storage[t]) << "\n";
  return out.str();
}

}  // namespace hydroadp::sim
