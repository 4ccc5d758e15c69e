#pragma once

#include <Eigen/Dense>
#include <vector>

namespace hydroadp::vfit {

/// Convex quadratic cost-to-go approximation V(x) = x'Px + q'x + r with P
/// symmetric positive semidefinite (up to -1e-8 on the smallest eigenvalue).
struct QuadraticValueFunction {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  double r = 0.0;

  int dim() const { return static_cast<int>(q.size()); }
  static QuadraticValueFunction zero(int n);
};

/// State paired with its sampled cost-to-go.
struct SamplePair {
  Eigen::VectorXd x;
  double beta = 0.0;
};

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& P);

/// Frobenius-nearest positive semidefinite matrix: eigenvalues clipped at
/// zero. Returns P unchanged when its smallest eigenvalue is >= -tol.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& P, double tol = 1e-9);

double evaluate(const QuadraticValueFunction& v, const Eigen::VectorXd& x);

struct FitDiagnostics {
  double objective = 0.0;   // sum of squared residuals + ridge term
  int iterations = 0;       // projected-gradient iterations (0 = direct)
  bool projection_active = false;
};

/// Least-squares fit of (P, q, r) to the samples under the constraint P >= 0,
/// minimizing  sum_s (x'Px + q'x + r - beta_s)^2 + ridge * |(P,q,r)|^2.
/// The fit runs in per-axis normalized coordinates (x divided by the largest
/// sample magnitude per axis, with the ridge applied to the normalized
/// coefficients) and de-normalized parameters are returned. When the
/// unconstrained minimizer already has a PSD quadratic part it is returned
/// directly; otherwise an accelerated projected-gradient iteration runs until
/// the relative objective decrease falls below 1e-10 or 10000 iterations.
QuadraticValueFunction fit_quadratic(const std::vector<SamplePair>& samples,
                                     double ridge,
                                     FitDiagnostics* diag = nullptr);

/// Default regularization: 1e-8 * sample count, matching the magnitude of
/// the unit-normalized feature Gram matrix so the penalty stays negligible
/// regardless of the cost scale.
double default_ridge(const std::vector<SamplePair>& samples);

}  // namespace hydroadp::vfit
