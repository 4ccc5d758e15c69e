#include "hydroadp/vfit.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "hydroadp/errors.hpp"

namespace hydroadp::vfit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

QuadraticValueFunction QuadraticValueFunction::zero(int n) {
  QuadraticValueFunction v;
  v.P = MatrixXd::Zero(n, n);
  v.q = VectorXd::Zero(n);
  v.r = 0.0;
  return v;
}

double min_eigenvalue(const MatrixXd& P) {
  if (P.rows() == 0) return 0.0;
  if (P.rows() != P.cols())
    throw ConfigError("min_eigenvalue: matrix must be square");
  const MatrixXd S = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

MatrixXd project_psd(const MatrixXd& P, double tol) {
  if (P.rows() == 0) return P;
  if (P.rows() != P.cols())
    throw ConfigError("project_psd: matrix must be square");
  const MatrixXd S = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  if (es.eigenvalues().minCoeff() >= -tol) return P;
  VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double evaluate(const QuadraticValueFunction& v, const VectorXd& x) {
  if (x.size() != v.q.size())
    throw ConfigError("evaluate: state dimension mismatch");
  return x.dot(v.P * x) + v.q.dot(x) + v.r;
}

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

// Isometric feature layout: [diag terms, sqrt(2)*cross terms (i<j),
// linear terms, constant]. The Euclidean norm of the quadratic block equals
// the Frobenius norm of the symmetric matrix it encodes, so ridge and PSD
// projection act consistently in either view.
int num_features(int n) { return n * (n + 1) / 2 + n + 1; }

VectorXd features(const VectorXd& x) {
  const int n = static_cast<int>(x.size());
  VectorXd f(num_features(n));
  int k = 0;
  for (int i = 0; i < n; ++i) f[k++] = x[i] * x[i];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) f[k++] = kSqrt2 * x[i] * x[j];
  for (int i = 0; i < n; ++i) f[k++] = x[i];
  f[k] = 1.0;
  return f;
}

MatrixXd unpack_P(const VectorXd& theta, int n) {
  MatrixXd P(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) P(i, i) = theta[k++];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      P(i, j) = theta[k] / kSqrt2;
      P(j, i) = theta[k] / kSqrt2;
      ++k;
    }
  return P;
}

void pack_P(const MatrixXd& P, VectorXd& theta) {
  const int n = static_cast<int>(P.rows());
  int k = 0;
  for (int i = 0; i < n; ++i) theta[k++] = P(i, i);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) theta[k++] = kSqrt2 * P(i, j);
}

VectorXd project_theta(const VectorXd& theta, int n) {
  VectorXd out = theta;
  MatrixXd P = unpack_P(theta, n);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  if (es.eigenvalues().minCoeff() >= 0.0) return out;
  VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  MatrixXd Pp = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  pack_P(Pp, out);
  return out;
}

}  // namespace

QuadraticValueFunction fit_quadratic(const std::vector<SamplePair>& samples,
                                     double ridge, FitDiagnostics* diag) {
  if (samples.empty()) throw DataError("fit_quadratic: no samples");
  if (ridge < 0.0) throw ConfigError("fit_quadratic: ridge must be >= 0");
  const int n = static_cast<int>(samples.front().x.size());
  const int S = static_cast<int>(samples.size());
  for (const auto& s : samples) {
    if (static_cast<int>(s.x.size()) != n)
      throw DataError("fit_quadratic: inconsistent sample dimensions");
    if (!s.x.allFinite() || !std::isfinite(s.beta))
      throw DataError("fit_quadratic: non-finite sample");
  }

  // Per-axis normalization keeps the feature matrix well conditioned when
  // state components live on very different scales.
  VectorXd d = VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, std::abs(s.x[i]));
    if (m > 0.0) d[i] = m;
  }

  const int F = num_features(n);
  MatrixXd Phi(S, F);
  VectorXd beta(S);
  for (int s = 0; s < S; ++s) {
    Phi.row(s) = features(samples[s].x.cwiseQuotient(d)).transpose();
    beta[s] = samples[s].beta;
  }

  const MatrixXd G = Phi.transpose() * Phi + ridge * MatrixXd::Identity(F, F);
  const VectorXd h = Phi.transpose() * beta;

  VectorXd theta(F);
  if (ridge > 0.0) {
    theta = G.ldlt().solve(h);
  } else {
    // Minimum-norm least squares via a spectral pseudo-inverse; rank
    // deficiency is routine when samples under-determine the quadratic.
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
    const VectorXd& lam = es.eigenvalues();
    const double cut = std::max(lam.maxCoeff(), 0.0) * F * 1e-14;
    VectorXd inv = VectorXd::Zero(F);
    for (int i = 0; i < F; ++i) inv[i] = lam[i] > cut ? 1.0 / lam[i] : 0.0;
    theta = es.eigenvectors() * inv.asDiagonal() *
            (es.eigenvectors().transpose() * h);
  }

  auto objective = [&](const VectorXd& t) {
    return (Phi * t - beta).squaredNorm() + ridge * t.squaredNorm();
  };

  MatrixXd P_norm = unpack_P(theta, n);
  const double psd_tol =
      1e-9 * std::max(1.0, P_norm.cwiseAbs().maxCoeff());
  bool projection_active = false;
  int iterations = 0;

  if (n > 0 && min_eigenvalue(P_norm) < -psd_tol) {
    // Accelerated projected gradient with monotone restarts, started from
    // the projected unconstrained optimum.
    projection_active = true;
    Eigen::SelfAdjointEigenSolver<MatrixXd> esG(G, Eigen::EigenvaluesOnly);
    const double L = 2.0 * std::max(esG.eigenvalues().maxCoeff(), 1e-30);

    VectorXd cur = project_theta(theta, n);
    VectorXd mom = cur;
    double t_acc = 1.0;
    double f_cur = objective(cur);
    VectorXd best = cur;
    double f_best = f_cur;
    int flat = 0;
    for (int it = 1; it <= 10000; ++it) {
      iterations = it;
      VectorXd grad = 2.0 * (G * mom - h);
      VectorXd next = project_theta(mom - grad / L, n);
      double f_next = objective(next);
      if (f_next > f_cur) {
        grad = 2.0 * (G * cur - h);
        next = project_theta(cur - grad / L, n);
        f_next = objective(next);
        mom = next;
        t_acc = 1.0;
      } else {
        const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_acc * t_acc));
        mom = next + ((t_acc - 1.0) / t_new) * (next - cur);
        t_acc = t_new;
      }
      if (f_next < f_best) {
        f_best = f_next;
        best = next;
      }
      flat = std::abs(f_cur - f_next) <= 1e-12 * (1.0 + std::abs(f_best))
                 ? flat + 1
                 : 0;
      cur = next;
      f_cur = f_next;
      if (flat >= 3) break;
    }
    // The zero fit is always feasible; never return anything worse.
    if (beta.squaredNorm() < f_best) {
      best = VectorXd::Zero(F);
      f_best = beta.squaredNorm();
    }
    theta = best;
    P_norm = unpack_P(theta, n);
  }

  if (diag) {
    diag->objective = objective(theta);
    diag->iterations = iterations;
    diag->projection_active = projection_active;
  }

  QuadraticValueFunction v;
  MatrixXd Dinv = d.cwiseInverse().asDiagonal();
  MatrixXd P = Dinv * project_psd(P_norm, psd_tol == 0.0 ? 0.0 : psd_tol) * Dinv;
  // Clip residual negative curvature left by the tolerance window.
  v.P = project_psd(0.5 * (P + P.transpose()), 0.0);
  v.q = theta.segment(n * (n + 1) / 2, n).cwiseQuotient(d);
  v.r = theta[F - 1];
  return v;
}

double default_ridge(const std::vector<SamplePair>& samples) {
  // The fitted coefficients carry the cost scale, so a penalty derived from
  // the costs themselves would overwhelm the unit-scaled feature Gram matrix
  // on large-value problems and shrink the fit toward zero. The Gram matrix
  // grows with the sample count alone; matching that keeps the penalty a
  // vanishing perturbation at every cost scale.
  return 1e-8 * static_cast<double>(samples.size());
}

}  // namespace hydroadp::vfit
