#include "hydroadp/adp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hydroadp/errors.hpp"
#include "hydroadp/parallel.hpp"
#include "hydroadp/rng.hpp"
#include "json.hpp"

namespace hydroadp::adp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const vfit::QuadraticValueFunction& TrainedPolicy::value(int k, int e) const {
  if (k == K) return terminal;
  if (k < 0 || k > K || e < 0 || e >= E)
    throw ConfigError("TrainedPolicy::value: index out of range");
  return values[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)];
}

TrainedPolicy TrainedPolicy::zero(int K, int E, int n) {
  TrainedPolicy p;
  p.K = K;
  p.E = E;
  p.n = n;
  p.terminal = vfit::QuadraticValueFunction::zero(n);
  p.values.assign(static_cast<std::size_t>(K),
                  std::vector<vfit::QuadraticValueFunction>(
                      static_cast<std::size_t>(E),
                      vfit::QuadraticValueFunction::zero(n)));
  p.fit_info.assign(static_cast<std::size_t>(K),
                    std::vector<StageFit>(static_cast<std::size_t>(E)));
  return p;
}

OneStageProblem one_stage_problem(
    const model::ReservoirSystem& sys,
    const std::vector<vfit::QuadraticValueFunction>& vnext,
    const VectorXd& trans_row, int k, const VectorXd& x, const VectorXd& w) {
  const int n = sys.dims.n_reservoirs;
  const int nz = model::decision_size(sys);
  if (static_cast<int>(vnext.size()) != trans_row.size())
    throw ConfigError("one_stage_problem: vnext/transition length mismatch");
  if (std::abs(trans_row.sum() - 1.0) > 1e-9)
    throw ConfigError("one_stage_problem: transition row must sum to 1");

  // Expectation over the next hydrologic state is exact: the quadratic
  // family is closed under convex combination.
  MatrixXd Pbar = MatrixXd::Zero(n, n);
  VectorXd qbar = VectorXd::Zero(n);
  double rbar = 0.0;
  for (int e = 0; e < trans_row.size(); ++e) {
    const auto& v = vnext[static_cast<std::size_t>(e)];
    if (v.dim() != n) throw ConfigError("one_stage_problem: value dim mismatch");
    Pbar += trans_row[e] * v.P;
    qbar += trans_row[e] * v.q;
    rbar += trans_row[e] * v.r;
  }

  // Next state is affine in z: x' = x0 + S z with x0 = x + w.
  MatrixXd S = MatrixXd::Zero(n, nz);
  S.block(0, 0, n, n) = sys.coupling;
  S.block(0, n, n, n) = sys.coupling;
  const VectorXd x0 = x + w;

  MatrixXd Q = 2.0 * S.transpose() * Pbar * S;
  VectorXd c = model::stage_cost_vector(sys) +
               S.transpose() * (2.0 * Pbar * x0 + qbar);
  const double constant = x0.dot(Pbar * x0) + qbar.dot(x0) + rbar;

  model::ConstraintSet cs =
      model::feasible_set(sys, k, model::StorageState{x}, model::InflowVector{w});
  OneStageProblem out;
  out.qp = qp::QpProblem::build(std::move(Q), std::move(c), std::move(cs.eq_A),
                                std::move(cs.eq_b), std::move(cs.in_A),
                                std::move(cs.in_b), std::move(cs.lb),
                                std::move(cs.ub));
  out.constant = constant;
  return out;
}

namespace {

qp::QpSolution solve_stage(const qp::QpProblem& p,
                           const qp::QpSolution* warm, const char* what) {
  qp::QpSolution sol = qp::solve_qp(p, warm);
  if (sol.status != qp::SolveStatus::optimal)
    throw NumericalError(std::string(what) + ": QP solver returned " +
                         qp::to_string(sol.status));
  return sol;
}

}  // namespace

double sample_bellman(const model::ReservoirSystem& sys,
                      const std::vector<vfit::QuadraticValueFunction>& vnext,
                      const VectorXd& trans_row, int k, const VectorXd& x,
                      const VectorXd& w) {
  OneStageProblem p = one_stage_problem(sys, vnext, trans_row, k, x, w);
  qp::QpSolution sol = solve_stage(p.qp, nullptr, "sample_bellman");
  return sol.objective + p.constant;
}

vfit::SamplePair average_samples(
    const model::ReservoirSystem& sys,
    const std::vector<vfit::QuadraticValueFunction>& vnext,
    const VectorXd& trans_row, const hydrology::InflowSampler& sampler,
    int k, int e, int grid_index, const VectorXd& x, int draws,
    std::uint64_t seed, int* clamped) {
  if (draws < 1) throw ConfigError("average_samples: draws must be >= 1");
  double sum = 0.0;
  qp::QpSolution warm;
  bool have_warm = false;
  for (int d = 0; d < draws; ++d) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k),
                        static_cast<std::uint64_t>(e),
                        static_cast<std::uint64_t>(grid_index),
                        static_cast<std::uint64_t>(d)));
    const model::InflowVector w = sampler.sample(k % hydrology::kWeeksPerYear, e, rng);
    OneStageProblem p = one_stage_problem(sys, vnext, trans_row, k, x, w.w);
    qp::QpSolution sol =
        solve_stage(p.qp, have_warm ? &warm : nullptr, "average_samples");
    sum += sol.objective + p.constant;
    warm = sol;
    have_warm = true;
  }
  double beta = sum / static_cast<double>(draws);
  if (beta < 0.0) {
    // Cost-to-go is nonnegative; tiny negatives are solver tolerance noise.
    if (clamped) ++*clamped;
    beta = 0.0;
  }
  vfit::SamplePair sp;
  sp.x = x;
  sp.beta = beta;
  return sp;
}

namespace {

std::vector<VectorXd> grid_axes(const model::ReservoirSystem& sys,
                                const std::vector<int>& steps) {
  const int n = sys.dims.n_reservoirs;
  if (static_cast<int>(steps.size()) != n)
    throw ConfigError("grid_steps must have one entry per reservoir");
  std::vector<VectorXd> axes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int N = steps[static_cast<std::size_t>(i)];
    if (N < 1) throw ConfigError("grid_steps entries must be >= 1");
    VectorXd ax(N);
    if (N == 1) {
      ax[0] = 0.5 * sys.capacity[i];
    } else {
      for (int j = 0; j < N; ++j)
        ax[j] = sys.capacity[i] *
                (static_cast<double>(j) / static_cast<double>(N - 1));
    }
    axes[static_cast<std::size_t>(i)] = ax;
  }
  return axes;
}

VectorXd grid_point(const std::vector<VectorXd>& axes, int g) {
  const int n = static_cast<int>(axes.size());
  VectorXd x(n);
  int rem = g;
  for (int i = n - 1; i >= 0; --i) {
    const int N = static_cast<int>(axes[static_cast<std::size_t>(i)].size());
    x[i] = axes[static_cast<std::size_t>(i)][rem % N];
    rem /= N;
  }
  return x;
}

}  // namespace

TrainedPolicy backward_pass(const model::ReservoirSystem& sys,
                            const hydrology::HydroMarkovModel& markov,
                            const hydrology::InflowSampler& sampler,
                            const TrainingConfig& cfg) {
  const int n = sys.dims.n_reservoirs;
  const int K = sys.dims.horizon;
  const int E = sys.dims.n_hydro_states;
  if (markov.E != E)
    throw ConfigError("backward_pass: system expects " + std::to_string(E) +
                      " hydrologic states, model has " + std::to_string(markov.E));
  if (cfg.noise_draws < 1) throw ConfigError("backward_pass: noise_draws >= 1");

  const std::vector<VectorXd> axes = grid_axes(sys, cfg.grid_steps);
  int N = 1;
  for (const auto& ax : axes) N *= static_cast<int>(ax.size());

  TrainedPolicy policy = TrainedPolicy::zero(K, E, n);
  policy.config = cfg;
  policy.model_digest = [&markov] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(hydrology::model_to_json(markov))));
    return std::string(buf);
  }();

  std::vector<VectorXd> points(static_cast<std::size_t>(N));
  for (int g = 0; g < N; ++g) points[static_cast<std::size_t>(g)] = grid_point(axes, g);

  for (int k = K - 1; k >= 0; --k) {
    const std::vector<vfit::QuadraticValueFunction>& vnext =
        (k == K - 1) ? std::vector<vfit::QuadraticValueFunction>(
                           static_cast<std::size_t>(E), policy.terminal)
                     : policy.values[static_cast<std::size_t>(k + 1)];

    // Every (e, grid point) cell is independent; draws inside a cell stay
    // sequential so warm starts cannot depend on the worker count.
    std::vector<vfit::SamplePair> samples(static_cast<std::size_t>(E) * N);
    std::vector<int> clamped(static_cast<std::size_t>(E) * N, 0);
    parallel_for(samples.size(), cfg.workers, [&](std::size_t idx) {
      const int e = static_cast<int>(idx) / N;
      const int g = static_cast<int>(idx) % N;
      samples[idx] = average_samples(
          sys, vnext, markov.transition.row(e).transpose(), sampler, k, e, g,
          points[static_cast<std::size_t>(g)], cfg.noise_draws, cfg.seed,
          &clamped[idx]);
    });
    policy.qp_count += static_cast<long long>(E) * N * cfg.noise_draws;

    for (int e = 0; e < E; ++e) {
      std::vector<vfit::SamplePair> cell(
          samples.begin() + static_cast<std::ptrdiff_t>(e) * N,
          samples.begin() + static_cast<std::ptrdiff_t>(e + 1) * N);
      const double ridge =
          cfg.ridge >= 0.0 ? cfg.ridge : vfit::default_ridge(cell);
      vfit::FitDiagnostics diag;
      policy.values[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)] =
          vfit::fit_quadratic(cell, ridge, &diag);
      StageFit& info =
          policy.fit_info[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)];
      info.objective = diag.objective;
      info.iterations = diag.iterations;
      info.projection_active = diag.projection_active;
      for (int g = 0; g < N; ++g)
        info.clamped_betas += clamped[static_cast<std::size_t>(e) * N + g];
    }
  }
  return policy;
}

ActionResult greedy_action(const model::ReservoirSystem& sys,
                           const MatrixXd& transition,
                           const TrainedPolicy& policy, int k, int e,
                           const VectorXd& x, const VectorXd& w) {
  if (k < 0 || k >= policy.K)
    throw ConfigError("greedy_action: stage index out of range");
  if (e < 0 || e >= policy.E)
    throw ConfigError("greedy_action: hydrologic state out of range");
  const std::vector<vfit::QuadraticValueFunction>& vnext =
      (k == policy.K - 1)
          ? std::vector<vfit::QuadraticValueFunction>(
                static_cast<std::size_t>(policy.E), policy.terminal)
          : policy.values[static_cast<std::size_t>(k + 1)];
  OneStageProblem p =
      one_stage_problem(sys, vnext, transition.row(e).transpose(), k, x, w);
  qp::QpSolution sol = solve_stage(p.qp, nullptr, "greedy_action");
  ActionResult out;
  out.u = model::z_to_control(sys, sol.z);
  out.objective = sol.objective + p.constant;
  return out;
}

ActionResult myopic_action(const model::ReservoirSystem& sys, int k,
                           const VectorXd& x, const VectorXd& w) {
  const int n = sys.dims.n_reservoirs;
  const std::vector<vfit::QuadraticValueFunction> vzero(
      1, vfit::QuadraticValueFunction::zero(n));
  OneStageProblem p =
      one_stage_problem(sys, vzero, VectorXd::Ones(1), k, x, w);
  qp::QpSolution sol = solve_stage(p.qp, nullptr, "myopic_action");
  ActionResult out;
  out.u = model::z_to_control(sys, sol.z);
  out.objective = sol.objective;
  return out;
}

LowerBoundResult lower_bound(const model::ReservoirSystem& sys,
                             const VectorXd& x0,
                             const std::vector<VectorXd>& w_sequence) {
  const int n = sys.dims.n_reservoirs;
  const int K = sys.dims.horizon;
  const int nz = model::decision_size(sys);
  if (static_cast<int>(w_sequence.size()) != K)
    throw ConfigError("lower_bound: need one inflow vector per stage");

  // All stage decisions solved jointly. End-of-stage storages stay in the
  // problem as variables: each constraint row then touches at most two
  // adjacent stages, and the storage limits become plain box bounds. The
  // equivalent substituted form couples every stage pair and conditions
  // much worse.
  const int per = nz + n;  // stage controls followed by end-of-stage storage
  const int NV = K * per;
  MatrixXd S = MatrixXd::Zero(n, 2 * n);
  S.block(0, 0, n, n) = sys.coupling;
  S.block(0, n, n, n) = sys.coupling;

  MatrixXd eq_A = MatrixXd::Zero(K + n * K, NV);
  VectorXd eq_b(K + n * K);
  VectorXd lb = VectorXd::Zero(NV);
  VectorXd ub(NV);
  VectorXd c = VectorXd::Zero(NV);
  const VectorXd c_stage = model::stage_cost_vector(sys);

  for (int k = 0; k < K; ++k) {
    const int off = k * per;
    eq_A.block(k, off, 1, n) = sys.conversion.transpose();
    eq_A(k, off + 2 * n) = 1.0;
    eq_A(k, off + 2 * n + 1) = 1.0;
    eq_b[k] = sys.demand[k];

    if (w_sequence[static_cast<std::size_t>(k)].size() != n)
      throw ConfigError("lower_bound: inflow vector has wrong length");
    // x_{k+1} - x_k - S (r_k; s_k) = w_k, with x_0 folded into the rhs.
    const int row = K + k * n;
    eq_A.block(row, off, n, 2 * n) = -S;
    eq_A.block(row, off + nz, n, n) = MatrixXd::Identity(n, n);
    if (k > 0)
      eq_A.block(row, off - n, n, n) = -MatrixXd::Identity(n, n);
    eq_b.segment(row, n) = w_sequence[static_cast<std::size_t>(k)];
    if (k == 0) eq_b.segment(row, n) += x0;

    ub.segment(off, n) = sys.release_max;
    ub.segment(off + n, n) = sys.spill_max;
    ub[off + 2 * n] = sys.thermal_max;
    ub[off + 2 * n + 1] = std::numeric_limits<double>::infinity();
    ub.segment(off + nz, n) = sys.capacity;
    c.segment(off, nz) = c_stage;
  }

  qp::QpProblem p = qp::QpProblem::build(
      MatrixXd::Zero(NV, NV), c, std::move(eq_A), std::move(eq_b), {}, {},
      std::move(lb), std::move(ub));
  qp::QpSettings settings;
  settings.max_iterations = 50000;
  qp::QpSolution sol = qp::solve_qp(p, nullptr, settings);
  if (sol.status != qp::SolveStatus::optimal)
    throw NumericalError(std::string("lower_bound: QP solver returned ") +
                         qp::to_string(sol.status));

  LowerBoundResult out;
  out.cost = sol.objective;
  out.controls.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    out.controls.push_back(
        model::z_to_control(sys, sol.z.segment(k * per, nz)));
  return out;
}

double replay_cost(const model::ReservoirSystem& sys, const VectorXd& x0,
                   const std::vector<model::Control>& controls,
                   const std::vector<VectorXd>& w_sequence) {
  if (controls.size() != w_sequence.size())
    throw ConfigError("replay_cost: control/inflow length mismatch");
  model::StorageState x{x0};
  double total = 0.0;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    total += model::stage_cost(sys, static_cast<int>(k), controls[k]);
    x = model::dynamics(sys, x, controls[k],
                        model::InflowVector{w_sequence[k]});
  }
  return total;
}

namespace {

nlohmann::json qvf_to_json(const vfit::QuadraticValueFunction& v) {
  nlohmann::json j;
  nlohmann::json P = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.P.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < v.P.cols(); ++c) row.push_back(v.P(i, c));
    P.push_back(std::move(row));
  }
  j["P"] = std::move(P);
  nlohmann::json q = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.q.size(); ++i) q.push_back(v.q[i]);
  j["q"] = std::move(q);
  j["r"] = v.r;
  return j;
}

vfit::QuadraticValueFunction qvf_from_json(const nlohmann::json& j) {
  vfit::QuadraticValueFunction v;
  const auto& P = j.at("P");
  const int n = static_cast<int>(P.size());
  v.P.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < n; ++c) v.P(i, c) = P.at(i).at(c).get<double>();
  const auto& q = j.at("q");
  v.q.resize(static_cast<Eigen::Index>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i)
    v.q[static_cast<Eigen::Index>(i)] = q.at(i).get<double>();
  v.r = j.at("r").get<double>();
  return v;
}

}  // namespace

std::string policy_to_json(const TrainedPolicy& p) {
  nlohmann::json j;
  j["format"] = "hydroadp-policy-v1";
  j["K"] = p.K;
  j["E"] = p.E;
  j["n"] = p.n;
  j["seed"] = p.config.seed;
  j["grid_steps"] = p.config.grid_steps;
  j["noise_draws"] = p.config.noise_draws;
  j["ridge"] = p.config.ridge;
  j["model_digest"] = p.model_digest;
  j["qp_count"] = p.qp_count;
  j["terminal"] = qvf_to_json(p.terminal);
  nlohmann::json values = nlohmann::json::array();
  nlohmann::json fits = nlohmann::json::array();
  for (int k = 0; k < p.K; ++k) {
    nlohmann::json vrow = nlohmann::json::array();
    nlohmann::json frow = nlohmann::json::array();
    for (int e = 0; e < p.E; ++e) {
      vrow.push_back(qvf_to_json(p.values[k][e]));
      const StageFit& f = p.fit_info[k][e];
      frow.push_back({{"objective", f.objective},
                      {"iterations", f.iterations},
                      {"projection_active", f.projection_active},
                      {"clamped_betas", f.clamped_betas}});
    }
    values.push_back(std::move(vrow));
    fits.push_back(std::move(frow));
  }
  j["values"] = std::move(values);
  j["fit_info"] = std::move(fits);
  return j.dump(2);
}

TrainedPolicy policy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("policy artifact: invalid JSON: ") + e.what());
  }
  if (j.value("format", std::string()) != "hydroadp-policy-v1")
    throw DataError("policy artifact: unrecognized format tag");
  TrainedPolicy p;
  p.K = j.at("K").get<int>();
  p.E = j.at("E").get<int>();
  p.n = j.at("n").get<int>();
  p.config.seed = j.at("seed").get<std::uint64_t>();
  p.config.grid_steps = j.at("grid_steps").get<std::vector<int>>();
  p.config.noise_draws = j.at("noise_draws").get<int>();
  p.config.ridge = j.at("ridge").get<double>();
  p.model_digest = j.at("model_digest").get<std::string>();
  p.qp_count = j.at("qp_count").get<long long>();
  p.terminal = qvf_from_json(j.at("terminal"));
  const auto& values = j.at("values");
  const auto& fits = j.at("fit_info");
  if (static_cast<int>(values.size()) != p.K)
    throw DataError("policy artifact: value table incomplete");
  p.values.resize(static_cast<std::size_t>(p.K));
  p.fit_info.assign(static_cast<std::size_t>(p.K),
                    std::vector<StageFit>(static_cast<std::size_t>(p.E)));
  for (int k = 0; k < p.K; ++k) {
    if (static_cast<int>(values.at(k).size()) != p.E)
      throw DataError("policy artifact: value table incomplete at stage " +
                      std::to_string(k));
    for (int e = 0; e < p.E; ++e) {
      p.values[k].push_back(qvf_from_json(values.at(k).at(e)));
      if (vfit::min_eigenvalue(p.values[k][e].P) < -1e-8)
        throw DataError("policy artifact: stored P violates PSD invariant");
      const auto& f = fits.at(k).at(e);
      p.fit_info[k][e].objective = f.at("objective").get<double>();
      p.fit_info[k][e].iterations = f.at("iterations").get<int>();
      p.fit_info[k][e].projection_active = f.at("projection_active").get<bool>();
      p.fit_info[k][e].clamped_betas = f.at("clamped_betas").get<int>();
    }
  }
  return p;
}

void save_policy(const TrainedPolicy& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write policy artifact: " + path);
  out << policy_to_json(p) << "\n";
}

TrainedPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read policy artifact: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace hydroadp::adp
