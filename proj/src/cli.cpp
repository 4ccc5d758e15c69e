#include "hydroadp/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "hydroadp/adp.hpp"
#include "hydroadp/errors.hpp"
#include "hydroadp/hydrology.hpp"
#include "hydroadp/model.hpp"
#include "hydroadp/sim.hpp"
#include "json.hpp"

namespace hydroadp::cli {

namespace fs = std::filesystem;
using Eigen::VectorXd;

int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read run config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: invalid JSON: ") + e.what());
  }

  RunConfig cfg;
  cfg.system_path = j.value("system", std::string());
  cfg.inflow_path = j.value("inflows", std::string());
  cfg.method = j.value("method", std::string("pca"));
  cfg.hydro_states = j.value("hydro_states", 0);
  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("grid_steps"))
    cfg.grid_steps = j.at("grid_steps").get<std::vector<int>>();
  cfg.noise_draws = j.value("noise_draws", 10);
  cfg.trials = j.value("trials", 105);
  cfg.ridge = j.value("ridge", -1.0);
  if (j.contains("x0")) {
    const auto& arr = j.at("x0");
    cfg.x0.resize(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
      cfg.x0[static_cast<Eigen::Index>(i)] = arr.at(i).get<double>();
  }
  cfg.x0_fraction = j.value("x0_fraction", 0.5);
  cfg.e0 = j.value("e0", 0);
  cfg.out_dir = j.value("out", std::string("out"));
  cfg.workers = j.value("workers", 0);
  if (j.contains("sweep_fractions"))
    cfg.sweep_fractions = j.at("sweep_fractions").get<std::vector<double>>();
  cfg.model_path = j.value("model", std::string());
  cfg.policy_path = j.value("policy", std::string());

  // Relative data paths resolve against the config file's directory.
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative())
      p = (base / p).lexically_normal().string();
  };
  resolve(cfg.system_path);
  resolve(cfg.inflow_path);
  resolve(cfg.model_path);
  resolve(cfg.policy_path);
  return cfg;
}

namespace {

std::string default_path(const RunConfig& cfg, const std::string& given,
                         const char* name) {
  if (!given.empty()) return given;
  return (fs::path(cfg.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write: " + path);
  out << text;
}

// Echo of the experiment parameters; runtime knobs (workers) are omitted so
// the echo identifies results, not machines.
void echo_config(const RunConfig& cfg, const std::string& command,
                 const VectorXd& resolved_x0) {
  nlohmann::json j;
  j["command"] = command;
  j["system"] = cfg.system_path;
  j["inflows"] = cfg.inflow_path;
  j["method"] = cfg.method;
  j["hydro_states"] = cfg.hydro_states;
  j["seed"] = cfg.seed;
  j["grid_steps"] = cfg.grid_steps;
  j["noise_draws"] = cfg.noise_draws;
  j["trials"] = cfg.trials;
  j["ridge"] = cfg.ridge;
  nlohmann::json x0 = nlohmann::json::array();
  for (Eigen::Index i = 0; i < resolved_x0.size(); ++i)
    x0.push_back(resolved_x0[i]);
  j["x0"] = std::move(x0);
  j["e0"] = cfg.e0;
  j["out"] = cfg.out_dir;
  j["sweep_fractions"] = cfg.sweep_fractions;
  j["model"] = default_path(cfg, cfg.model_path, "model.json");
  j["policy"] = default_path(cfg, cfg.policy_path, "policy.json");
  write_text((fs::path(cfg.out_dir) / ("config_echo_" + command + ".json")).string(),
             j.dump(2) + "\n");
}

VectorXd resolve_x0(const RunConfig& cfg, const model::ReservoirSystem& sys) {
  if (cfg.x0.size() > 0) {
    if (cfg.x0.size() != sys.dims.n_reservoirs)
      throw ConfigError("x0 must have one entry per reservoir");
    for (Eigen::Index i = 0; i < cfg.x0.size(); ++i)
      if (cfg.x0[i] < 0.0 || cfg.x0[i] > sys.capacity[i])
        throw ConfigError("x0 outside storage bounds");
    return cfg.x0;
  }
  if (cfg.x0_fraction < 0.0 || cfg.x0_fraction > 1.0)
    throw ConfigError("x0_fraction must be in [0, 1]");
  return cfg.x0_fraction * sys.capacity;
}

struct LoadedStack {
  model::ReservoirSystem sys;
  hydrology::InflowDataset cleaned;
  hydrology::HydroMarkovModel markov;
};

LoadedStack load_stack(const RunConfig& cfg) {
  if (cfg.system_path.empty()) throw ConfigError("run config: 'system' required");
  if (cfg.inflow_path.empty()) throw ConfigError("run config: 'inflows' required");
  LoadedStack st;
  st.sys = model::load_system(cfg.system_path);
  hydrology::InflowDataset raw = hydrology::load_inflow_csv(cfg.inflow_path);
  st.cleaned = hydrology::clean_negatives(raw);
  st.cleaned.load_warnings = raw.load_warnings;
  st.markov = hydrology::load_model(default_path(cfg, cfg.model_path, "model.json"),
                                    st.cleaned);
  if (st.markov.E != st.sys.dims.n_hydro_states)
    throw ConfigError("markov model has E=" + std::to_string(st.markov.E) +
                      " but system expects " +
                      std::to_string(st.sys.dims.n_hydro_states));
  return st;
}

}  // namespace

void cmd_estimate(const RunConfig& cfg) {
  if (cfg.inflow_path.empty()) throw ConfigError("run config: 'inflows' required");
  if (cfg.hydro_states < 1)
    throw ConfigError("run config: 'hydro_states' must be >= 1");
  const hydrology::InflowDataset ds = hydrology::load_inflow_csv(cfg.inflow_path);
  hydrology::EstimationResult res = hydrology::estimate_markov_model(
      ds, cfg.hydro_states, hydrology::cluster_method_from(cfg.method), cfg.seed);

  fs::create_directories(cfg.out_dir);
  const std::string model_path = default_path(cfg, cfg.model_path, "model.json");
  hydrology::save_model(res.markov, model_path);

  nlohmann::json summary;
  summary["method"] = cfg.method;
  summary["E"] = cfg.hydro_states;
  summary["rows"] = res.cleaned.rows();
  summary["sites"] = res.cleaned.sites();
  summary["negatives_removed"] = res.negatives_removed;
  summary["fit_rows"] = res.fit_rows;
  summary["cluster_sizes"] = res.cluster_sizes;
  nlohmann::json trans = nlohmann::json::array();
  for (int i = 0; i < res.markov.E; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < res.markov.E; ++c) row.push_back(res.markov.transition(i, c));
    trans.push_back(std::move(row));
  }
  summary["transition"] = std::move(trans);
  summary["warnings"] = res.warnings;
  write_text((fs::path(cfg.out_dir) / "estimate_summary.json").string(),
             summary.dump(2) + "\n");
  echo_config(cfg, "estimate", VectorXd());
  std::cout << "estimate: wrote " << model_path << " (fit rows " << res.fit_rows
            << ", negatives removed " << res.negatives_removed << ")\n";
}

void cmd_train(const RunConfig& cfg) {
  LoadedStack st = load_stack(cfg);
  if (cfg.grid_steps.empty())
    throw ConfigError("run config: 'grid_steps' required for training");
  hydrology::InflowSampler sampler(st.markov, st.cleaned, st.sys.inflow_map,
                                   st.sys.dims.n_reservoirs);
  adp::TrainingConfig tc;
  tc.grid_steps = cfg.grid_steps;
  tc.noise_draws = cfg.noise_draws;
  tc.ridge = cfg.ridge;
  tc.seed = cfg.seed;
  tc.workers = resolve_workers(cfg.workers);

  const auto t0 = std::chrono::steady_clock::now();
  adp::TrainedPolicy policy = adp::backward_pass(st.sys, st.markov, sampler, tc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(cfg.out_dir);
  const std::string policy_path = default_path(cfg, cfg.policy_path, "policy.json");
  adp::save_policy(policy, policy_path);

  nlohmann::json log;
  log["qp_count"] = policy.qp_count;
  log["stages"] = policy.K;
  log["hydro_states"] = policy.E;
  double worst_fit = 0.0;
  for (const auto& row : policy.fit_info)
    for (const auto& f : row) worst_fit = std::max(worst_fit, f.objective);
  log["worst_fit_objective"] = worst_fit;
  write_text((fs::path(cfg.out_dir) / "train_log.json").string(),
             log.dump(2) + "\n");
  echo_config(cfg, "train", resolve_x0(cfg, st.sys));
  std::cout << "train: wrote " << policy_path << " (" << policy.qp_count
            << " stage problems in " << secs << " s, "
            << tc.workers << " workers)\n";
}

namespace {

void write_reportfiles(const RunConfig& cfg, const std::string& tag,
                       const sim::SimulationReport& report) {
  sim::save_report(report, (fs::path(cfg.out_dir) / (tag + "_report.json")).string());
  write_text((fs::path(cfg.out_dir) / (tag + "_trials.csv")).string(),
             sim::trials_to_csv(report));
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, const std::string& policy_kind,
                  const std::string& mode) {
  LoadedStack st = load_stack(cfg);
  const VectorXd x0 = resolve_x0(cfg, st.sys);
  hydrology::InflowSampler sampler(st.markov, st.cleaned, st.sys.inflow_map,
                                   st.sys.dims.n_reservoirs);
  const int workers = resolve_workers(cfg.workers);

  adp::TrainedPolicy policy;
  sim::PolicyFn act;
  std::string tag;
  if (mode != "bound") {
    if (policy_kind == "trained") {
      policy = adp::load_policy(default_path(cfg, cfg.policy_path, "policy.json"));
      if (policy.K != st.sys.dims.horizon || policy.E != st.sys.dims.n_hydro_states ||
          policy.n != st.sys.dims.n_reservoirs)
        throw ConfigError("policy artifact dimensions do not match the system");
      act = sim::make_greedy_policy(st.sys, st.markov.transition, policy);
    } else if (policy_kind == "myopic") {
      act = sim::make_myopic_policy(st.sys);
    } else {
      throw ConfigError("unknown policy kind '" + policy_kind +
                        "' (trained|myopic)");
    }
    tag = policy_kind + "_" + mode;
  } else {
    tag = "bound";
  }

  auto run_one = [&](const VectorXd& start) -> sim::SimulationReport {
    if (mode == "montecarlo") {
      return sim::monte_carlo(st.sys, tag, act, st.markov.transition, sampler,
                              start, cfg.e0, cfg.trials, cfg.seed, workers);
    }
    if (mode == "historical") {
      return sim::replay_historical(st.sys, tag, act, st.cleaned,
                                    st.markov.labels, start);
    }
    if (mode == "bound") {
      return sim::bound_report(st.sys, st.markov.transition, sampler, start,
                               cfg.e0, cfg.trials, cfg.seed, workers);
    }
    throw ConfigError("unknown mode '" + mode +
                      "' (montecarlo|historical|bound)");
  };

  fs::create_directories(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  sim::SimulationReport report = run_one(x0);
  write_reportfiles(cfg, tag, report);

  if (!cfg.sweep_fractions.empty()) {
    // Initial-level sweep on reservoir 0, common random numbers across levels.
    std::ostringstream sweep;
    sweep << "fraction,level0,mean_total,stderr,paper_band\n";
    for (double f : cfg.sweep_fractions) {
      if (f < 0.0 || f > 1.0)
        throw ConfigError("sweep_fractions entries must be in [0, 1]");
      VectorXd xs = x0;
      xs[0] = f * st.sys.capacity[0];
      sim::SimulationReport r = run_one(xs);
      std::ostringstream row;
      row << std::setprecision(17) << f << "," << xs[0] << "," << r.mean_total
          << "," << r.band_halfwidth << "," << r.paper_band;
      sweep << row.str() << "\n";
    }
    write_text((fs::path(cfg.out_dir) / (tag + "_sweep.csv")).string(),
               sweep.str());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  echo_config(cfg, "simulate_" + tag, x0);
  std::cout << "simulate: " << tag << " mean total " << report.mean_total
            << " +- " << report.band_halfwidth << " over " << report.trials
            << " trials (" << secs << " s)\n";
}

void cmd_compare(const std::vector<std::string>& report_paths,
                 const std::string& bound_path, const std::string& out_dir) {
  if (report_paths.empty())
    throw ConfigError("compare: at least one report required");
  std::vector<sim::SimulationReport> reports;
  reports.reserve(report_paths.size());
  for (const auto& p : report_paths) reports.push_back(sim::load_report(p));
  sim::SimulationReport bound;
  const bool have_bound = !bound_path.empty();
  if (have_bound) bound = sim::load_report(bound_path);
  const std::string table =
      sim::compare_policies(reports, have_bound ? &bound : nullptr);
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "comparison.csv").string(), table);
  std::cout << table;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Quadratic approximate dynamic programming for multi-reservoir "
               "hydrothermal scheduling"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  int workers_override = -1;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* copt = sub->add_option("--config", config_path, "run config JSON");
    if (needs_config) copt->required();
    sub->add_option("--seed", seed_override, "override config seed")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--workers", workers_override, "override worker count");
    sub->add_option("--out", out_override, "override output directory");
  };

  auto* est = app.add_subcommand("estimate", "fit the inflow Markov model");
  add_common(est, true);

  auto* train = app.add_subcommand("train", "run the backward training pass");
  add_common(train, true);

  auto* simc = app.add_subcommand("simulate", "evaluate a policy");
  add_common(simc, true);
  std::string policy_kind = "trained", mode = "montecarlo";
  simc->add_option("--policy", policy_kind, "trained|myopic");
  simc->add_option("--mode", mode, "montecarlo|historical|bound");

  auto* cmp = app.add_subcommand("compare", "tabulate reports side by side");
  std::vector<std::string> report_paths;
  std::string bound_path, cmp_out = "out";
  cmp->add_option("--report", report_paths, "report JSON path (repeatable)")
      ->required();
  cmp->add_option("--bound", bound_path, "bound report JSON path");
  cmp->add_option("--out", cmp_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (cmp->parsed()) {
      cmd_compare(report_paths, bound_path, cmp_out);
      return 0;
    }
    RunConfig cfg = load_run_config(config_path);
    if (seed_given) cfg.seed = seed_override;
    if (workers_override >= 0) cfg.workers = workers_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (est->parsed()) {
      cmd_estimate(cfg);
    } else if (train->parsed()) {
      cmd_train(cfg);
    } else if (simc->parsed()) {
      cmd_simulate(cfg, policy_kind, mode);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hydroadp::cli
