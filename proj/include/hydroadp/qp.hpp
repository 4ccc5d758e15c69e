#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <string>

namespace hydroadp::qp {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Convex quadratic program
///   minimize    0.5 z'Qz + c'z
///   subject to  eq_A z == eq_b
///               in_A z <= in_b
///               lb <= z <= ub        (+-inf entries allowed)
/// Q is symmetrized on build; eigenvalues below -1e-8 are clipped to zero so
/// the stored objective is always convex up to tolerance.
struct QpProblem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd c;
  Eigen::MatrixXd eq_A;
  Eigen::VectorXd eq_b;
  Eigen::MatrixXd in_A;
  Eigen::VectorXd in_b;
  Eigen::VectorXd lb, ub;

  int num_vars() const { return static_cast<int>(c.size()); }
  int num_eq() const { return static_cast<int>(eq_b.size()); }
  int num_in() const { return static_cast<int>(in_b.size()); }

  /// Validates dimensions, symmetrizes Q and clips its spectrum.
  static QpProblem build(Eigen::MatrixXd Q, Eigen::VectorXd c,
                         Eigen::MatrixXd eq_A = {}, Eigen::VectorXd eq_b = {},
                         Eigen::MatrixXd in_A = {}, Eigen::VectorXd in_b = {},
                         Eigen::VectorXd lb = {}, Eigen::VectorXd ub = {});

  /// Largest magnitude appearing in the problem data (finite entries only),
  /// floored at 1. Residual contracts are stated relative to this.
  double data_scale() const;

  double objective_at(const Eigen::VectorXd& z) const;
};

enum class SolveStatus { optimal, infeasible, unbounded, max_iterations };

const char* to_string(SolveStatus s);

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd dual_eq;  // free sign
  Eigen::VectorXd dual_in;  // >= 0
  Eigen::VectorXd dual_lb;  // >= 0
  Eigen::VectorXd dual_ub;  // >= 0
  double objective = 0.0;
  SolveStatus status = SolveStatus::max_iterations;
  int iterations = 0;
  /// status == infeasible: dual ray over stacked rows [eq; in; box], i.e. a
  /// certificate dy with A'dy ~ 0 whose support cost is negative.
  /// status == unbounded: primal ray dz with Q dz ~ 0, c'dz < 0.
  Eigen::VectorXd certificate;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double max() const;
};

/// Recomputes the four KKT residuals from scratch; independent of any solver
/// state, usable as an adversarial check on a claimed solution.
KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s);

/// Scale used in the optimality contract: residuals of an optimal solution
/// are each <= tol * (1 + scale), where scale covers both the data magnitude
/// and the returned primal/dual magnitudes.
double contract_scale(const QpProblem& p, const QpSolution& s);

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-6;
  /// Residual contract factor: optimal means every KKT residual is below
  /// contract_tol * (1 + contract_scale).
  double contract_tol = 1e-6;
  /// 0 means automatic: 10 * n^2 iterations for n decision variables.
  int max_iterations = 0;
  double rho0 = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int check_interval = 25;
  int scaling_iters = 10;
  bool polish = true;
};

/// Solves QPs of the above form with an operator-splitting iteration
/// (scaled ADMM) followed by an active-set polish step that certifies the
/// KKT contract. Holds mutable workspace: use one instance per worker.
class QpSolver {
 public:
  QpSolver() = default;
  explicit QpSolver(QpSettings settings) : settings_(settings) {}

  QpSolution solve(const QpProblem& p, const QpSolution* warm_start = nullptr);

  const QpSettings& settings() const { return settings_; }

 private:
  QpSettings settings_;
};

/// One-shot convenience wrapper around QpSolver.
QpSolution solve_qp(const QpProblem& p, const QpSolution* warm_start = nullptr,
                    const QpSettings& settings = {});

/// Self-describing dump for offline reproduction of solver failures.
std::string to_debug_json(const QpProblem& p);
QpProblem from_debug_json(const std::string& text);
void save_debug(const QpProblem& p, const std::string& path);
QpProblem load_debug(const std::string& path);

}  // namespace hydroadp::qp
