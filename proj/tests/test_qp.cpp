#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "hydroadp/qp.hpp"
#include "hydroadp/rng.hpp"
#include "support/oracles.hpp"

using namespace hydroadp;
using namespace hydroadp::qp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

QpProblem scalar_lower_bound_problem() {
  // min z^2 s.t. z >= 1, written as 0.5 z'Qz with Q = [2].
  MatrixXd Q(1, 1);
  Q << 2.0;
  VectorXd c = VectorXd::Zero(1);
  VectorXd lb(1), ub(1);
  lb << 1.0;
  ub << kInf;
  return QpProblem::build(Q, c, {}, {}, {}, {}, lb, ub);
}

}  // namespace

TEST_SUITE("qp") {

TEST_CASE("scalar bound: min z^2 subject to z >= 1") {
  const QpProblem p = scalar_lower_bound_problem();
  const QpSolution s = solve_qp(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(s.z[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-7));
  const KktResiduals res = kkt_residuals(p, s);
  CHECK(res.max() <= 1e-6 * (1.0 + contract_scale(p, s)));
}

TEST_CASE("symmetric equality: min (z1-1)^2+(z2-1)^2 s.t. z1+z2=1") {
  MatrixXd Q = 2.0 * MatrixXd::Identity(2, 2);
  VectorXd c(2);
  c << -2.0, -2.0;
  MatrixXd eq(1, 2);
  eq << 1.0, 1.0;
  VectorXd eb(1);
  eb << 1.0;
  const QpProblem p = QpProblem::build(Q, c, eq, eb);
  const QpSolution s = solve_qp(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(s.z[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(s.z[1] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("random instances match the enumeration oracle") {
  Rng rng(20240817);
  int solved = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const bool with_eq = trial % 3 == 0;
    const bool lp = trial % 5 == 4;
    const QpProblem p = testsupport::random_feasible_qp(rng, with_eq, lp);
    const auto oracle = testsupport::enumerate_qp(p);
    REQUIRE(oracle.found);
    const QpSolution s = solve_qp(p);
    REQUIRE_MESSAGE(s.status == SolveStatus::optimal,
                    "trial " << trial << " status " << to_string(s.status));
    const double denom = 1.0 + std::abs(oracle.objective);
    CHECK_MESSAGE(std::abs(s.objective - oracle.objective) / denom <= 1e-6,
                  "trial " << trial << ": got " << s.objective << " oracle "
                          << oracle.objective);
    const KktResiduals res = kkt_residuals(p, s);
    CHECK(res.max() <= 1e-6 * (1.0 + contract_scale(p, s)));
    ++solved;
  }
  CHECK(solved == 60);
}

TEST_CASE("objective field equals recomputation from z") {
  Rng rng(5150);
  for (int trial = 0; trial < 20; ++trial) {
    const QpProblem p = testsupport::random_feasible_qp(rng, trial % 2 == 0, false);
    const QpSolution s = solve_qp(p);
    REQUIRE(s.status == SolveStatus::optimal);
    const double re = p.objective_at(s.z);
    CHECK(std::abs(s.objective - re) <= 1e-9 * (1.0 + std::abs(re)));
  }
}

TEST_CASE("kkt residuals expose a perturbed primal") {
  const QpProblem p = scalar_lower_bound_problem();
  QpSolution s = solve_qp(p);
  REQUIRE(s.status == SolveStatus::optimal);
  s.z[0] -= 0.1;  // violates z >= 1 by 0.1
  const KktResiduals res = kkt_residuals(p, s);
  CHECK(res.primal == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("kkt residuals expose zeroed duals") {
  const QpProblem p = scalar_lower_bound_problem();
  QpSolution s = solve_qp(p);
  REQUIRE(s.status == SolveStatus::optimal);
  s.dual_lb.setZero();
  const KktResiduals res = kkt_residuals(p, s);
  // stationarity residual is the full gradient component Qz + c = 2.
  CHECK(res.stationarity == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("warm starts do not change the objective") {
  Rng rng(808);
  QpSolver solver;
  for (int trial = 0; trial < 15; ++trial) {
    const QpProblem p = testsupport::random_feasible_qp(rng, false, false);
    const QpSolution cold = solver.solve(p);
    REQUIRE(cold.status == SolveStatus::optimal);

    QpSolution guess = cold;
    for (int j = 0; j < guess.z.size(); ++j)
      guess.z[j] += 0.05 * (rng.uniform01() - 0.5);
    const QpSolution warm = solver.solve(p, &guess);
    REQUIRE(warm.status == SolveStatus::optimal);
    CHECK(std::abs(warm.objective - cold.objective) <=
          1e-6 * (1.0 + std::abs(cold.objective)));
  }
}

TEST_CASE("adding a constraint never lowers the optimum") {
  Rng rng(7321);
  int tightened = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const QpProblem p = testsupport::random_feasible_qp(rng, false, trial % 4 == 0);
    const QpSolution s = solve_qp(p);
    REQUIRE(s.status == SolveStatus::optimal);

    // Cut slightly into the optimum from a random direction. The tightened
    // problem may turn infeasible (optimum +inf), which also satisfies the
    // monotonicity claim; when it stays solvable the objective may not drop.
    const int n = p.num_vars();
    VectorXd a(n);
    for (int j = 0; j < n; ++j) a[j] = 2.0 * rng.uniform01() - 1.0;
    QpProblem tighter = p;
    tighter.in_A.conservativeResize(p.num_in() + 1, n);
    tighter.in_A.row(p.num_in()) = a.transpose();
    tighter.in_b.conservativeResize(p.num_in() + 1);
    tighter.in_b[p.num_in()] = a.dot(s.z) - 0.2;

    const QpSolution s2 = solve_qp(tighter);
    REQUIRE((s2.status == SolveStatus::optimal ||
             s2.status == SolveStatus::infeasible));
    if (s2.status == SolveStatus::optimal) {
      CHECK(s2.objective >= s.objective - 1e-6 * (1.0 + std::abs(s.objective)));
      ++tightened;
    }
  }
  CHECK(tightened >= 8);  // the check must actually bite on most trials
}

TEST_CASE("pure linear objective lands on the box corner") {
  MatrixXd Q = MatrixXd::Zero(3, 3);
  VectorXd c(3);
  c << 1.0, -2.0, 0.5;
  VectorXd lb(3), ub(3);
  lb << -1.0, -1.0, -1.0;
  ub << 2.0, 2.0, 2.0;
  const QpProblem p = QpProblem::build(Q, c, {}, {}, {}, {}, lb, ub);
  const QpSolution s = solve_qp(p);
  REQUIRE(s.status == SolveStatus::optimal);
  CHECK(s.z[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(s.z[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(s.z[2] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(s.objective == doctest::Approx(-5.5).epsilon(1e-7));
}

TEST_CASE("conflicting bounds are reported infeasible") {
  MatrixXd Q(1, 1);
  Q << 2.0;
  VectorXd c = VectorXd::Zero(1);
  MatrixXd in(1, 1);
  in << 1.0;  // z <= 0
  VectorXd ib(1);
  ib << 0.0;
  VectorXd lb(1), ub(1);
  lb << 1.0;  // z >= 1
  ub << kInf;
  const QpProblem p = QpProblem::build(Q, c, {}, {}, in, ib, lb, ub);
  const QpSolution s = solve_qp(p);
  CHECK(s.status == SolveStatus::infeasible);
}

TEST_CASE("conflicting equalities are reported infeasible") {
  MatrixXd Q = MatrixXd::Zero(2, 2);
  VectorXd c = VectorXd::Zero(2);
  MatrixXd eq(2, 2);
  eq << 1.0, 1.0, 1.0, 1.0;
  VectorXd eb(2);
  eb << 1.0, 2.0;
  const QpProblem p = QpProblem::build(Q, c, eq, eb);
  const QpSolution s = solve_qp(p);
  CHECK(s.status == SolveStatus::infeasible);
}

TEST_CASE("an unbounded direction is detected") {
  MatrixXd Q = MatrixXd::Zero(2, 2);
  VectorXd c(2);
  c << -1.0, 0.0;
  VectorXd lb(2), ub(2);
  lb << 0.0, 0.0;
  ub << kInf, 1.0;
  const QpProblem p = QpProblem::build(Q, c, {}, {}, {}, {}, lb, ub);
  const QpSolution s = solve_qp(p);
  CHECK(s.status == SolveStatus::unbounded);
}

TEST_CASE("iteration cap surfaces as max_iterations, never a wrong answer") {
  Rng rng(99);
  const QpProblem p = testsupport::random_feasible_qp(rng, true, false);
  QpSettings st;
  st.max_iterations = 2;
  st.polish = false;
  const QpSolution s = solve_qp(p, nullptr, st);
  CHECK(s.status == SolveStatus::max_iterations);
}

TEST_CASE("solutions are deterministic") {
  Rng rng(31007);
  const QpProblem p = testsupport::random_feasible_qp(rng, true, false);
  const QpSolution a = solve_qp(p);
  const QpSolution b = solve_qp(p);
  REQUIRE(a.status == SolveStatus::optimal);
  REQUIRE(a.status == b.status);
  CHECK(a.iterations == b.iterations);
  CHECK((a.z - b.z).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.objective == b.objective);
}

TEST_CASE("debug dump round-trips including infinite bounds") {
  Rng rng(555);
  QpProblem p = testsupport::random_feasible_qp(rng, true, false);
  p.ub[0] = kInf;
  p.lb[1] = -kInf;
  const std::string path = (std::filesystem::temp_directory_path() /
                            "hydroadp_qp_dump.json").string();
  save_debug(p, path);
  const QpProblem q = load_debug(path);
  CHECK((p.Q - q.Q).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((p.c - q.c).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((p.eq_A - q.eq_A).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((p.in_A - q.in_A).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(q.ub.size() == p.ub.size());
  CHECK(std::isinf(q.ub[0]));
  CHECK(std::isinf(q.lb[1]));
  CHECK(q.lb[1] < 0);
  for (int j = 0; j < p.num_vars(); ++j) {
    if (std::isfinite(p.lb[j])) CHECK(p.lb[j] == q.lb[j]);
    if (std::isfinite(p.ub[j])) CHECK(p.ub[j] == q.ub[j]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("build symmetrizes Q and clips slightly indefinite spectra") {
  MatrixXd Q(2, 2);
  Q << 1.0, 0.3, 0.1, 1.0;  // asymmetric input
  const QpProblem p = QpProblem::build(Q, VectorXd::Zero(2));
  CHECK(p.Q(0, 1) == doctest::Approx(0.2));
  CHECK(p.Q(1, 0) == doctest::Approx(0.2));

  MatrixXd R(2, 2);
  R << 1.0, 0.0, 0.0, -0.5;  // genuinely indefinite: clipped to PSD
  const QpProblem p2 = QpProblem::build(R, VectorXd::Zero(2));
  const Eigen::VectorXd ev = testsupport::jacobi_eigenvalues(p2.Q);
  CHECK(ev[0] >= -1e-12);
}

}  // TEST_SUITE
