#include "hydroadp/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hydroadp/errors.hpp"
#include "hydroadp/vfit.hpp"
#include "json.hpp"

namespace hydroadp::qp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iterations: return "max_iterations";
  }
  return "?";
}

double KktResiduals::max() const {
  return std::max(std::max(stationarity, primal),
                  std::max(dual, complementarity));
}

QpProblem QpProblem::build(MatrixXd Q, VectorXd c, MatrixXd eq_A, VectorXd eq_b,
                           MatrixXd in_A, VectorXd in_b, VectorXd lb,
                           VectorXd ub) {
  const int n = static_cast<int>(c.size());
  if (Q.rows() != n || Q.cols() != n)
    throw ConfigError("QpProblem: Q must be n x n with n = c.size()");
  if (eq_A.size() == 0) eq_A.resize(0, n);
  if (in_A.size() == 0) in_A.resize(0, n);
  if (eq_A.cols() != n || eq_A.rows() != eq_b.size())
    throw ConfigError("QpProblem: equality block dimensions inconsistent");
  if (in_A.cols() != n || in_A.rows() != in_b.size())
    throw ConfigError("QpProblem: inequality block dimensions inconsistent");
  if (lb.size() == 0) lb = VectorXd::Constant(n, -kInf);
  if (ub.size() == 0) ub = VectorXd::Constant(n, kInf);
  if (lb.size() != n || ub.size() != n)
    throw ConfigError("QpProblem: bound dimensions inconsistent");

  MatrixXd Qs = 0.5 * (Q + Q.transpose());
  if (n > 0 && vfit::min_eigenvalue(Qs) < -1e-8) Qs = vfit::project_psd(Qs, 0.0);

  QpProblem p;
  p.Q = std::move(Qs);
  p.c = std::move(c);
  p.eq_A = std::move(eq_A);
  p.eq_b = std::move(eq_b);
  p.in_A = std::move(in_A);
  p.in_b = std::move(in_b);
  p.lb = std::move(lb);
  p.ub = std::move(ub);
  return p;
}

namespace {

double max_abs_finite(const VectorXd& v) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i])) m = std::max(m, std::abs(v[i]));
  return m;
}

double max_abs(const MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace

double QpProblem::data_scale() const {
  double s = 1.0;
  s = std::max(s, max_abs(Q));
  s = std::max(s, max_abs_finite(c));
  s = std::max(s, max_abs(eq_A));
  s = std::max(s, max_abs_finite(eq_b));
  s = std::max(s, max_abs(in_A));
  s = std::max(s, max_abs_finite(in_b));
  s = std::max(s, max_abs_finite(lb));
  s = std::max(s, max_abs_finite(ub));
  return s;
}

double QpProblem::objective_at(const VectorXd& z) const {
  return 0.5 * z.dot(Q * z) + c.dot(z);
}

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s) {
  const int n = p.num_vars();
  if (s.z.size() != n) throw ConfigError("kkt_residuals: dimension mismatch");
  KktResiduals r;

  VectorXd grad = p.Q * s.z + p.c;
  if (p.num_eq() > 0) grad += p.eq_A.transpose() * s.dual_eq;
  if (p.num_in() > 0) grad += p.in_A.transpose() * s.dual_in;
  grad -= s.dual_lb;
  grad += s.dual_ub;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;

  double pri = 0.0;
  if (p.num_eq() > 0)
    pri = std::max(pri, (p.eq_A * s.z - p.eq_b).cwiseAbs().maxCoeff());
  VectorXd in_slack;
  if (p.num_in() > 0) {
    in_slack = p.in_b - p.in_A * s.z;  // >= 0 when feasible
    pri = std::max(pri, std::max(0.0, -in_slack.minCoeff()));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lb[j])) pri = std::max(pri, p.lb[j] - s.z[j]);
    if (std::isfinite(p.ub[j])) pri = std::max(pri, s.z[j] - p.ub[j]);
  }
  r.primal = std::max(0.0, pri);

  double dual = 0.0;
  if (s.dual_in.size()) dual = std::max(dual, -s.dual_in.minCoeff());
  if (s.dual_lb.size()) dual = std::max(dual, -s.dual_lb.minCoeff());
  if (s.dual_ub.size()) dual = std::max(dual, -s.dual_ub.minCoeff());
  // Any multiplier attached to a bound that does not exist is dual
  // infeasibility outright (it has no complementarity term to catch it).
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(p.lb[j]) && s.dual_lb.size())
      dual = std::max(dual, std::abs(s.dual_lb[j]));
    if (!std::isfinite(p.ub[j]) && s.dual_ub.size())
      dual = std::max(dual, std::abs(s.dual_ub[j]));
  }
  r.dual = std::max(0.0, dual);

  double comp = 0.0;
  for (int i = 0; i < p.num_in(); ++i)
    comp = std::max(comp, std::abs(s.dual_in[i] * in_slack[i]));
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lb[j]))
      comp = std::max(comp, std::abs(s.dual_lb[j] * (s.z[j] - p.lb[j])));
    if (std::isfinite(p.ub[j]))
      comp = std::max(comp, std::abs(s.dual_ub[j] * (p.ub[j] - s.z[j])));
  }
  r.complementarity = comp;
  return r;
}

double contract_scale(const QpProblem& p, const QpSolution& s) {
  double m = p.data_scale();
  m = std::max(m, max_abs_finite(s.z));
  m = std::max(m, max_abs_finite(s.dual_eq));
  m = std::max(m, max_abs_finite(s.dual_in));
  m = std::max(m, max_abs_finite(s.dual_lb));
  m = std::max(m, max_abs_finite(s.dual_ub));
  return m;
}

namespace {

// Stacked single-block view: l <= Az <= u with rows [eq; in; box].
struct Stacked {
  MatrixXd A;
  VectorXd l, u;
  int n = 0, m_eq = 0, m_in = 0;
  int rows() const { return static_cast<int>(A.rows()); }
};

Stacked stack_problem(const QpProblem& p) {
  const int n = p.num_vars();
  const int m = p.num_eq() + p.num_in() + n;
  Stacked s;
  s.n = n;
  s.m_eq = p.num_eq();
  s.m_in = p.num_in();
  s.A.setZero(m, n);
  s.l.resize(m);
  s.u.resize(m);
  int r = 0;
  if (p.num_eq() > 0) {
    s.A.block(0, 0, p.num_eq(), n) = p.eq_A;
    s.l.segment(0, p.num_eq()) = p.eq_b;
    s.u.segment(0, p.num_eq()) = p.eq_b;
    r += p.num_eq();
  }
  if (p.num_in() > 0) {
    s.A.block(r, 0, p.num_in(), n) = p.in_A;
    s.l.segment(r, p.num_in()).setConstant(-kInf);
    s.u.segment(r, p.num_in()) = p.in_b;
    r += p.num_in();
  }
  s.A.block(r, 0, n, n) = MatrixXd::Identity(n, n);
  s.l.segment(r, n) = p.lb;
  s.u.segment(r, n) = p.ub;
  return s;
}

struct Scaling {
  VectorXd D;   // variable scaling (n)
  VectorXd E;   // row scaling (m)
  double gamma = 1.0;  // cost scaling
};

constexpr double kMinScale = 1e-4;
constexpr double kMaxScale = 1e4;

double clamp_scale(double v) { return std::clamp(v, kMinScale, kMaxScale); }

// Modified Ruiz equilibration of the stacked data, in place.
Scaling ruiz_equilibrate(MatrixXd& Q, VectorXd& c, Stacked& st, int iters) {
  const int n = st.n;
  const int m = st.rows();
  Scaling sc;
  sc.D = VectorXd::Ones(n);
  sc.E = VectorXd::Ones(m);
  for (int it = 0; it < iters; ++it) {
    VectorXd d(n), e(m);
    for (int j = 0; j < n; ++j) {
      double nj = 0.0;
      if (n > 0) nj = Q.col(j).cwiseAbs().maxCoeff();
      nj = std::max(nj, st.A.col(j).cwiseAbs().maxCoeff());
      d[j] = nj > 0 ? clamp_scale(1.0 / std::sqrt(nj)) : 1.0;
    }
    Q = d.asDiagonal() * Q * d.asDiagonal();
    c = c.cwiseProduct(d);
    st.A = st.A * d.asDiagonal();
    sc.D = sc.D.cwiseProduct(d);
    for (int i = 0; i < m; ++i) {
      const double ni = st.A.row(i).cwiseAbs().maxCoeff();
      e[i] = ni > 0 ? clamp_scale(1.0 / std::sqrt(ni)) : 1.0;
    }
    st.A = e.asDiagonal() * st.A;
    for (int i = 0; i < m; ++i) {
      if (std::isfinite(st.l[i])) st.l[i] *= e[i];
      if (std::isfinite(st.u[i])) st.u[i] *= e[i];
    }
    sc.E = sc.E.cwiseProduct(e);
    // Cost scaling keeps the objective terms near unit size.
    double colmean = 0.0;
    for (int j = 0; j < n; ++j) colmean += Q.col(j).cwiseAbs().maxCoeff();
    colmean = n > 0 ? colmean / n : 0.0;
    const double cn = std::max(colmean, max_abs_finite(c));
    const double g = cn > 0 ? clamp_scale(1.0 / cn) : 1.0;
    Q *= g;
    c *= g;
    sc.gamma *= g;
  }
  return sc;
}

struct Candidate {
  VectorXd z;            // unscaled primal
  VectorXd y;            // unscaled stacked dual
  KktResiduals res;
  double metric = kInf;  // max residual / (1 + contract scale)
  bool valid = false;
};

QpSolution make_solution(const QpProblem& p, const Stacked& st,
                         const VectorXd& z, const VectorXd& y) {
  QpSolution s;
  s.z = z;
  s.dual_eq = y.segment(0, st.m_eq);
  s.dual_in = y.segment(st.m_eq, st.m_in).cwiseMax(0.0);
  s.dual_lb = (-y.segment(st.m_eq + st.m_in, st.n)).cwiseMax(0.0);
  s.dual_ub = y.segment(st.m_eq + st.m_in, st.n).cwiseMax(0.0);
  // A bound that does not exist carries no multiplier; a stray dual here
  // would cancel gradient terms without any complementarity counterweight.
  for (int j = 0; j < st.n; ++j) {
    if (!std::isfinite(p.lb[j])) s.dual_lb[j] = 0.0;
    if (!std::isfinite(p.ub[j])) s.dual_ub[j] = 0.0;
  }
  s.objective = p.objective_at(z);
  return s;
}

Candidate evaluate_candidate(const QpProblem& p, const Stacked& st,
                             const VectorXd& z, const VectorXd& y) {
  Candidate c;
  c.z = z;
  c.y = y;
  QpSolution s = make_solution(p, st, z, y);
  c.res = kkt_residuals(p, s);
  // Per-block scales: a residual is only excused by magnitudes that enter
  // its own KKT block. Primal violations are never excused by large duals
  // (else a divergent dual on an infeasible problem would read as optimal);
  // stationarity is scaled by the actual gradient-term products, never by
  // |z| alone (else a divergent iterate on an unbounded problem would excuse
  // a unit gradient); negative duals are never excused by a large primal.
  const double data = p.data_scale();
  const double zmax = max_abs_finite(z);
  double ymax = max_abs_finite(s.dual_eq);
  ymax = std::max(ymax, max_abs_finite(s.dual_in));
  ymax = std::max(ymax, max_abs_finite(s.dual_lb));
  ymax = std::max(ymax, max_abs_finite(s.dual_ub));
  double grad_terms = std::max(max_abs_finite(p.c), (p.Q * z).cwiseAbs().maxCoeff());
  if (p.num_eq() > 0)
    grad_terms = std::max(grad_terms,
                          (p.eq_A.transpose() * s.dual_eq).cwiseAbs().maxCoeff());
  if (p.num_in() > 0)
    grad_terms = std::max(grad_terms,
                          (p.in_A.transpose() * s.dual_in).cwiseAbs().maxCoeff());
  grad_terms = std::max(grad_terms, max_abs_finite(s.dual_lb));
  grad_terms = std::max(grad_terms, max_abs_finite(s.dual_ub));
  const double s_pri = 1.0 + std::max(data, zmax);
  const double s_sta = 1.0 + grad_terms;
  const double s_dua = 1.0 + ymax;
  const double s_comp = 1.0 + std::max(data, std::max(zmax, ymax));
  c.metric = std::max(
      std::max(c.res.primal / s_pri, c.res.stationarity / s_sta),
      std::max(c.res.dual / s_dua, c.res.complementarity / s_comp));
  c.valid = std::isfinite(c.metric);
  return c;
}

// Equality-constrained KKT solve on the rows named in `act` (active at the
// bound chosen by `at_upper`), with iterative refinement. Returns false when
// the system is numerically singular beyond repair.
bool polish_candidate(const QpProblem& p, const Stacked& st,
                      const std::vector<int>& act,
                      const std::vector<bool>& at_upper, VectorXd& z_out,
                      VectorXd& y_out) {
  const int n = st.n;
  const int na = static_cast<int>(act.size());
  MatrixXd K = MatrixXd::Zero(n + na, n + na);
  K.topLeftCorner(n, n) = p.Q;
  VectorXd rhs(n + na);
  rhs.head(n) = -p.c;
  for (int a = 0; a < na; ++a) {
    const int row = act[a];
    K.block(n + a, 0, 1, n) = st.A.row(row);
    K.block(0, n + a, n, 1) = st.A.row(row).transpose();
    rhs[n + a] = at_upper[a] ? st.u[row] : st.l[row];
    if (!std::isfinite(rhs[n + a])) return false;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> lu(K);
  if (lu.rank() < n + na) {
    // Tiny regularization resolves degenerate active sets deterministically.
    const double reg = 1e-11 * (1.0 + p.data_scale());
    MatrixXd Kr = K;
    Kr.topLeftCorner(n, n) += reg * MatrixXd::Identity(n, n);
    Kr.bottomRightCorner(na, na) -= reg * MatrixXd::Identity(na, na);
    lu.compute(Kr);
    if (lu.rank() < n + na) return false;
  }
  VectorXd sol = lu.solve(rhs);
  for (int refine = 0; refine < 3; ++refine) {
    VectorXd resid = rhs - K * sol;
    if (resid.cwiseAbs().maxCoeff() < 1e-14 * (1.0 + rhs.cwiseAbs().maxCoeff()))
      break;
    sol += lu.solve(resid);
  }
  if (!sol.allFinite()) return false;
  z_out = sol.head(n);
  y_out = VectorXd::Zero(st.rows());
  for (int a = 0; a < na; ++a) y_out[act[a]] = sol[n + a];
  return true;
}

}  // namespace

QpSolution QpSolver::solve(const QpProblem& p, const QpSolution* warm_start) {
  const int n = p.num_vars();
  if (n == 0) throw ConfigError("solve_qp: empty problem");
  Stacked st = stack_problem(p);
  const int m = st.rows();
  const double data_scale = p.data_scale();
  const double feas_tol = 1e-9 * (1.0 + data_scale);

  // Trivially infeasible rows (violated implied bounds) short-circuit with a
  // unit certificate on the offending row pair.
  for (int i = 0; i < m; ++i) {
    if (st.l[i] > st.u[i] + feas_tol) {
      QpSolution s;
      s.status = SolveStatus::infeasible;
      s.z = VectorXd::Zero(n);
      s.dual_eq = VectorXd::Zero(st.m_eq);
      s.dual_in = VectorXd::Zero(st.m_in);
      s.dual_lb = VectorXd::Zero(n);
      s.dual_ub = VectorXd::Zero(n);
      s.certificate = VectorXd::Zero(m);
      s.certificate[i] = 1.0;  // u_i * 1 + l_i * (-1) < 0 infeasibility ray
      return s;
    }
    if (st.A.row(i).cwiseAbs().maxCoeff() == 0.0) {
      const bool bad = (std::isfinite(st.l[i]) && st.l[i] > feas_tol) ||
                       (std::isfinite(st.u[i]) && st.u[i] < -feas_tol);
      if (bad) {
        QpSolution s;
        s.status = SolveStatus::infeasible;
        s.z = VectorXd::Zero(n);
        s.dual_eq = VectorXd::Zero(st.m_eq);
        s.dual_in = VectorXd::Zero(st.m_in);
        s.dual_lb = VectorXd::Zero(n);
        s.dual_ub = VectorXd::Zero(n);
        s.certificate = VectorXd::Zero(m);
        s.certificate[i] = (std::isfinite(st.l[i]) && st.l[i] > feas_tol) ? -1.0 : 1.0;
        return s;
      }
    }
  }

  // Scaled working copies.
  MatrixXd Qs = p.Q;
  VectorXd cs = p.c;
  Stacked sts = st;
  Scaling sc = ruiz_equilibrate(Qs, cs, sts, settings_.scaling_iters);

  // Two-class rho: equality rows get a stiffer penalty.
  std::vector<bool> is_eq(m);
  for (int i = 0; i < m; ++i)
    is_eq[i] = std::isfinite(sts.l[i]) && std::isfinite(sts.u[i]) &&
               sts.l[i] == sts.u[i];
  MatrixXd C_neq = MatrixXd::Zero(n, n);
  MatrixXd C_eq = MatrixXd::Zero(n, n);
  for (int i = 0; i < m; ++i) {
    const auto row = sts.A.row(i);
    if (is_eq[i])
      C_eq.noalias() += row.transpose() * row;
    else
      C_neq.noalias() += row.transpose() * row;
  }

  const double sigma = settings_.sigma;
  const double alpha = settings_.alpha;
  double rho_bar = settings_.rho0;
  // With little or no curvature in the objective, feasibility pressure comes
  // from rho alone; letting it collapse stalls such problems on a stuck
  // primal residual, so the lower clamp is raised for them. The test runs on
  // equilibrated data, where the cost block has unit infinity norm: a
  // quadratic part below 1e-2 of that leaves the iteration as rho-driven as
  // a pure linear program.
  const double curv = n > 0 ? Qs.cwiseAbs().maxCoeff() : 0.0;
  const double rho_min = curv <= 1e-2 ? 1e-2 : 1e-6;
  constexpr double kEqRhoFactor = 1e3;

  auto rho_of = [&](int i) { return is_eq[i] ? kEqRhoFactor * rho_bar : rho_bar; };

  Eigen::LDLT<MatrixXd> fact;
  auto refactor = [&]() {
    MatrixXd M = Qs + sigma * MatrixXd::Identity(n, n) +
                 rho_bar * (C_neq + kEqRhoFactor * C_eq);
    fact.compute(M);
  };
  refactor();

  // Iterates in scaled space.
  VectorXd x = VectorXd::Zero(n);
  VectorXd y = VectorXd::Zero(m);
  if (warm_start && warm_start->z.size() == n) {
    x = sc.D.cwiseInverse().cwiseProduct(warm_start->z);
    VectorXd yw(m);
    yw.segment(0, st.m_eq) = warm_start->dual_eq;
    yw.segment(st.m_eq, st.m_in) = warm_start->dual_in;
    yw.segment(st.m_eq + st.m_in, n) = warm_start->dual_ub - warm_start->dual_lb;
    y = sc.gamma * sc.E.cwiseInverse().cwiseProduct(yw);
  }
  VectorXd zc = (sts.A * x).cwiseMax(sts.l).cwiseMin(sts.u);

  // Default cap scales with the stacked KKT dimension; certificates need at
  // least a few residual checks, so the floor keeps tiny problems honest.
  const int max_iter =
      settings_.max_iterations > 0
          ? settings_.max_iterations
          : std::clamp(10 * (n + m) * (n + m), 1000, 100000);
  const int check_every = std::max(1, settings_.check_interval);

  Candidate best;
  VectorXd dy_unscaled = VectorXd::Zero(m);
  VectorXd dx_unscaled = VectorXd::Zero(n);
  int infeas_hits = 0, unbounded_hits = 0;
  int iterations_done = 0;

  auto unscale_x = [&](const VectorXd& xs) { return sc.D.cwiseProduct(xs).eval(); };
  auto unscale_y = [&](const VectorXd& ys) {
    return (sc.E.cwiseProduct(ys) / sc.gamma).eval();
  };

  // Active-set refinement: solve the KKT system on a working set, then
  // exchange rows (add the worst violated inequality, or drop the row whose
  // multiplier has the wrong sign) until a consistent KKT point appears or
  // the pass budget runs out. Classical primal exchange; on these problem
  // sizes each pass is a small dense solve.
  auto refine_from = [&](std::vector<int> act, std::vector<bool> at_upper) {
    std::vector<char> member(static_cast<std::size_t>(m), 0);
    for (int row : act) member[static_cast<std::size_t>(row)] = 1;
    // Exchanges near the solution satisfy the contract within a few passes.
    // A seed built from a far-off iterate instead wanders without tightening
    // the KKT error; give up on such an attempt early, the solver loop will
    // schedule another one from a better iterate.
    double local_best = std::numeric_limits<double>::infinity();
    int flat_passes = 0;
    for (int pass = 0; pass < 40; ++pass) {
      VectorXd zp, yp;
      if (!polish_candidate(p, st, act, at_upper, zp, yp)) return;
      Candidate cand = evaluate_candidate(p, st, zp, yp);
      if (cand.valid && cand.metric < best.metric) best = cand;
      if (cand.valid && cand.metric <= settings_.contract_tol) return;
      if (cand.valid && cand.metric < 0.9 * local_best) {
        local_best = cand.metric;
        flat_passes = 0;
      } else if (++flat_passes >= 8) {
        return;
      }

      const VectorXd az = st.A * zp;
      const double pri_tol =
          1e-9 * (1.0 + std::max(data_scale, max_abs_finite(zp)));
      int add_row = -1;
      bool add_upper = false;
      double worst_pri = pri_tol;
      for (int i = 0; i < m; ++i) {
        if (member[static_cast<std::size_t>(i)] || is_eq[i]) continue;
        if (std::isfinite(st.u[i]) && az[i] - st.u[i] > worst_pri) {
          worst_pri = az[i] - st.u[i];
          add_row = i;
          add_upper = true;
        }
        if (std::isfinite(st.l[i]) && st.l[i] - az[i] > worst_pri) {
          worst_pri = st.l[i] - az[i];
          add_row = i;
          add_upper = false;
        }
      }
      if (add_row >= 0) {
        act.push_back(add_row);
        at_upper.push_back(add_upper);
        member[static_cast<std::size_t>(add_row)] = 1;
        continue;
      }

      const double dua_tol = 1e-9 * (1.0 + max_abs_finite(yp));
      int drop_idx = -1;
      double worst_dua = dua_tol;
      for (std::size_t a = 0; a < act.size(); ++a) {
        const int row = act[a];
        if (is_eq[row]) continue;  // equality multipliers are free
        const double wrong = at_upper[a] ? -yp[row] : yp[row];
        if (wrong > worst_dua) {
          worst_dua = wrong;
          drop_idx = static_cast<int>(a);
        }
      }
      if (drop_idx >= 0) {
        member[static_cast<std::size_t>(act[static_cast<std::size_t>(drop_idx)])] = 0;
        act.erase(act.begin() + drop_idx);
        at_upper.erase(at_upper.begin() + drop_idx);
        continue;
      }
      return;  // KKT point reached; candidate already recorded
    }
  };

  auto try_polish = [&](const VectorXd& zu, const VectorXd& yu) {
    if (!settings_.polish) return;
    const double ymax = max_abs_finite(yu);
    const double y_tol = 1e-10 * (1.0 + ymax);

    // Seed 1: dual signs. Equality rows always active.
    std::vector<int> act;
    std::vector<bool> at_upper;
    for (int i = 0; i < m; ++i) {
      if (is_eq[i]) {
        act.push_back(i);
        at_upper.push_back(true);
      } else if (yu[i] < -y_tol && std::isfinite(st.l[i])) {
        act.push_back(i);
        at_upper.push_back(false);
      } else if (yu[i] > y_tol && std::isfinite(st.u[i])) {
        act.push_back(i);
        at_upper.push_back(true);
      }
    }
    refine_from(act, at_upper);
    if (best.valid && best.metric <= settings_.contract_tol) return;

    // Seed 2: primal proximity, covers degenerate duals.
    act.clear();
    at_upper.clear();
    const double act_tol = 1e-4 * (1.0 + data_scale);
    VectorXd az = st.A * zu;
    for (int i = 0; i < m; ++i) {
      if (is_eq[i]) {
        act.push_back(i);
        at_upper.push_back(true);
      } else if (std::isfinite(st.l[i]) && az[i] - st.l[i] < act_tol) {
        act.push_back(i);
        at_upper.push_back(false);
      } else if (std::isfinite(st.u[i]) && st.u[i] - az[i] < act_tol) {
        act.push_back(i);
        at_upper.push_back(true);
      }
    }
    refine_from(act, at_upper);
  };

  double eps_abs = settings_.eps_abs;
  double eps_rel = settings_.eps_rel;

  // A polish attempt costs a KKT solve per exchange pass, which dominates
  // the iteration cost on larger problems when tried at every check; plain
  // iterations are orders of magnitude cheaper. Large problems therefore
  // start attempting later and back off geometrically after each miss. An
  // eps-converged iterate always earns an attempt since it is the likely
  // certifier.
  int polish_gap = m > 64 ? 8 * check_every : check_every;
  int next_polish_at = m > 64 ? polish_gap : 0;

  // Ratio-based adaptation has a blind spot: once the early dual transient
  // drives rho down, a degenerate linear program settles into a balanced
  // stall with both residuals high and the ratio inside the deadband. Track
  // primal progress and escalate rho when it flatlines far from tolerance.
  // Every rho change kicks the dual iterate, so adaptation pauses for a few
  // checks afterwards rather than reacting to its own transient.
  double stall_best_pri = std::numeric_limits<double>::infinity();
  int stall_checks = 0;
  int adapt_cooldown = 0;

  for (int iter = 1; iter <= max_iter; ++iter) {
    iterations_done = iter;
    const VectorXd x_prev = x;
    const VectorXd y_prev = y;
    const VectorXd zc_prev = zc;

    VectorXd rz = VectorXd(m);
    for (int i = 0; i < m; ++i) rz[i] = rho_of(i) * zc[i] - y[i];
    VectorXd rhs = sigma * x - cs + sts.A.transpose() * rz;
    VectorXd xt = fact.solve(rhs);
    VectorXd zt = sts.A * xt;

    x = alpha * xt + (1.0 - alpha) * x;
    VectorXd w = alpha * zt + (1.0 - alpha) * zc_prev;
    VectorXd wy = w;
    for (int i = 0; i < m; ++i) wy[i] += y[i] / rho_of(i);
    zc = wy.cwiseMax(sts.l).cwiseMin(sts.u);
    for (int i = 0; i < m; ++i) y[i] += rho_of(i) * (w[i] - zc[i]);

    if (iter % check_every != 0 && iter != max_iter) continue;

    // Unscaled residuals straight from the original data.
    VectorXd zu = unscale_x(x);
    VectorXd yu = unscale_y(y);
    VectorXd zcu = sc.E.cwiseInverse().cwiseProduct(zc);
    VectorXd Az = st.A * zu;
    VectorXd r_pri = Az - zcu;
    VectorXd r_dua = p.Q * zu + p.c + st.A.transpose() * yu;
    const double pri = r_pri.size() ? r_pri.cwiseAbs().maxCoeff() : 0.0;
    const double dua = r_dua.cwiseAbs().maxCoeff();
    const double eps_pri =
        eps_abs + eps_rel * std::max(Az.cwiseAbs().maxCoeff(),
                                     max_abs_finite(zcu));
    const double eps_dua =
        eps_abs + eps_rel * std::max({(p.Q * zu).cwiseAbs().maxCoeff(),
                                      (st.A.transpose() * yu).cwiseAbs().maxCoeff(),
                                      max_abs_finite(p.c)});

    Candidate raw = evaluate_candidate(p, st, zu, yu);
    if (raw.valid && raw.metric < best.metric) best = raw;

    if (best.valid && best.metric <= settings_.contract_tol) break;

    const bool eps_ok = pri <= eps_pri && dua <= eps_dua;
    if (iter >= next_polish_at || eps_ok) {
      try_polish(zu, yu);
      if (best.valid && best.metric <= settings_.contract_tol) break;
      polish_gap = std::min(polish_gap * 2, 2000);
      next_polish_at = iter + polish_gap;
    }

    if (eps_ok) {
      // Converged in the eps sense but contract unmet: tighten and continue.
      eps_abs = std::max(eps_abs * 0.1, 1e-14);
      eps_rel = std::max(eps_rel * 0.1, 1e-12);
    }

    // Infeasibility certificates from one-iteration increments.
    dy_unscaled = unscale_y(y) - unscale_y(y_prev);
    dx_unscaled = unscale_x(x) - unscale_x(x_prev);
    const double ny = dy_unscaled.cwiseAbs().maxCoeff();
    if (ny > 1e-12 * (1.0 + yu.cwiseAbs().maxCoeff())) {
      const VectorXd aty = st.A.transpose() * dy_unscaled;
      bool support_ok = true;
      double support = 0.0;
      for (int i = 0; i < m; ++i) {
        const double dpos = std::max(dy_unscaled[i], 0.0);
        const double dneg = std::min(dy_unscaled[i], 0.0);
        if (!std::isfinite(st.u[i]) && dpos > 1e-10 * ny) support_ok = false;
        if (!std::isfinite(st.l[i]) && dneg < -1e-10 * ny) support_ok = false;
        if (std::isfinite(st.u[i])) support += st.u[i] * dpos;
        if (std::isfinite(st.l[i])) support += st.l[i] * dneg;
      }
      if (support_ok && aty.cwiseAbs().maxCoeff() <= 1e-7 * ny &&
          support <= -1e-7 * ny * (1.0 + data_scale)) {
        if (++infeas_hits >= 2) {
          QpSolution s = make_solution(p, st, unscale_x(x), unscale_y(y));
          s.status = SolveStatus::infeasible;
          s.iterations = iter;
          s.certificate = dy_unscaled / ny;
          return s;
        }
      } else {
        infeas_hits = 0;
      }
    }
    const double nx = dx_unscaled.cwiseAbs().maxCoeff();
    if (nx > 1e-12 * (1.0 + zu.cwiseAbs().maxCoeff())) {
      const VectorXd qdx = p.Q * dx_unscaled;
      const VectorXd adx = st.A * dx_unscaled;
      bool ray_ok = qdx.cwiseAbs().maxCoeff() <= 1e-7 * nx * (1.0 + data_scale) &&
                    p.c.dot(dx_unscaled) <= -1e-7 * nx * (1.0 + data_scale);
      if (ray_ok) {
        for (int i = 0; i < m && ray_ok; ++i) {
          if (std::isfinite(st.l[i]) && std::isfinite(st.u[i])) {
            if (std::abs(adx[i]) > 1e-7 * nx) ray_ok = false;
          } else if (std::isfinite(st.u[i])) {
            if (adx[i] > 1e-7 * nx) ray_ok = false;
          } else if (std::isfinite(st.l[i])) {
            if (adx[i] < -1e-7 * nx) ray_ok = false;
          }
        }
        if (ray_ok && ++unbounded_hits >= 2) {
          QpSolution s = make_solution(p, st, unscale_x(x), unscale_y(y));
          s.status = SolveStatus::unbounded;
          s.iterations = iter;
          s.certificate = dx_unscaled / nx;
          return s;
        }
      } else {
        unbounded_hits = 0;
      }
    }

    // Deterministic rho adaptation on the residual ratio.
    const double pr = pri / std::max(eps_pri, 1e-30);
    const double dr = dua / std::max(eps_dua, 1e-30);
    const double ratio = std::sqrt(pr / std::max(dr, 1e-30));
    if (adapt_cooldown > 0) {
      --adapt_cooldown;
    } else if (ratio > 5.0 || ratio < 0.2) {
      rho_bar = std::clamp(rho_bar * ratio, rho_min, 1e6);
      refactor();
      stall_best_pri = pri;
      stall_checks = 0;
      adapt_cooldown = 4;
    } else if (pri < 0.5 * stall_best_pri) {
      stall_best_pri = pri;
      stall_checks = 0;
    } else if (pri > 10.0 * eps_pri && ++stall_checks >= 4) {
      rho_bar = std::clamp(rho_bar * 10.0, rho_min, 1e6);
      refactor();
      stall_best_pri = pri;
      stall_checks = 0;
      adapt_cooldown = 4;
    }
  }

  // Last polish attempt from the current iterate.
  {
    VectorXd zu = unscale_x(x);
    VectorXd yu = unscale_y(y);
    Candidate raw = evaluate_candidate(p, st, zu, yu);
    if (raw.valid && raw.metric < best.metric) best = raw;
    if (!(best.valid && best.metric <= settings_.contract_tol))
      try_polish(zu, yu);
  }

  QpSolution s = best.valid ? make_solution(p, st, best.z, best.y)
                            : make_solution(p, st, unscale_x(x), unscale_y(y));
  s.iterations = iterations_done;
  s.status = (best.valid && best.metric <= settings_.contract_tol)
                 ? SolveStatus::optimal
                 : SolveStatus::max_iterations;
  return s;
}

QpSolution solve_qp(const QpProblem& p, const QpSolution* warm_start,
                    const QpSettings& settings) {
  QpSolver solver(settings);
  return solver.solve(p, warm_start);
}

namespace {

nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  if (rows == 0) return MatrixXd(0, 0);
  const auto cols = j.at(0).size();
  MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

nlohmann::json vector_to_json(const VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isinf(v[i]))
      arr.push_back(v[i] > 0 ? "inf" : "-inf");
    else
      arr.push_back(v[i]);
  }
  return arr;
}

VectorXd vector_from_json(const nlohmann::json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j.at(i).is_string()) {
      const std::string s = j.at(i).get<std::string>();
      v[static_cast<Eigen::Index>(i)] = (s == "inf") ? kInf : -kInf;
    } else {
      v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    }
  }
  return v;
}

}  // namespace

std::string to_debug_json(const QpProblem& p) {
  nlohmann::json j;
  j["format"] = "hydroadp-qp-debug-v1";
  j["Q"] = matrix_to_json(p.Q);
  j["c"] = vector_to_json(p.c);
  j["eq_A"] = matrix_to_json(p.eq_A);
  j["eq_b"] = vector_to_json(p.eq_b);
  j["in_A"] = matrix_to_json(p.in_A);
  j["in_b"] = vector_to_json(p.in_b);
  j["lb"] = vector_to_json(p.lb);
  j["ub"] = vector_to_json(p.ub);
  return j.dump(2);
}

QpProblem from_debug_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  return QpProblem::build(matrix_from_json(j.at("Q")), vector_from_json(j.at("c")),
                          matrix_from_json(j.at("eq_A")),
                          vector_from_json(j.at("eq_b")),
                          matrix_from_json(j.at("in_A")),
                          vector_from_json(j.at("in_b")),
                          vector_from_json(j.at("lb")),
                          vector_from_json(j.at("ub")));
}

void save_debug(const QpProblem& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write QP debug dump: " + path);
  out << to_debug_json(p) << "\n";
}

QpProblem load_debug(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read QP debug dump: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_debug_json(ss.str());
}

}  // namespace hydroadp::qp
