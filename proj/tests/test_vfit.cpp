#include <cmath>
#include <vector>

#include "doctest.h"
#include "hydroadp/errors.hpp"
#include "hydroadp/rng.hpp"
#include "hydroadp/vfit.hpp"
#include "support/oracles.hpp"

using namespace hydroadp;
using namespace hydroadp::vfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<SamplePair> sample_from(const QuadraticValueFunction& truth,
                                    int count, Rng& rng, double spread) {
  std::vector<SamplePair> out;
  const int n = truth.dim();
  for (int i = 0; i < count; ++i) {
    VectorXd x(n);
    for (int j = 0; j < n; ++j) x[j] = spread * (2.0 * rng.uniform01() - 1.0);
    out.push_back({x, evaluate(truth, x)});
  }
  return out;
}

double fit_objective(const QuadraticValueFunction& v,
                     const std::vector<SamplePair>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const double r = evaluate(v, s.x) - s.beta;
    acc += r * r;
  }
  return acc;
}

}  // namespace

TEST_SUITE("vfit") {

TEST_CASE("noiseless identity quadratic is recovered") {
  const int n = 3;
  QuadraticValueFunction truth;
  truth.P = MatrixXd::Identity(n, n);
  truth.q = VectorXd::Zero(n);
  truth.r = 0.0;
  Rng rng(1234);
  const auto samples = sample_from(truth, 2 * (n + 1) * (n + 2) / 2, rng, 2.0);
  const QuadraticValueFunction v = fit_quadratic(samples, 0.0);
  CHECK((v.P - truth.P).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(v.q.cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(std::abs(v.r) <= 1e-4);
  for (const auto& s : samples)
    CHECK(std::abs(evaluate(v, s.x) - s.beta) <= 1e-4);
}

TEST_CASE("random PSD quadratics are recovered across dimensions") {
  Rng rng(777);
  for (int n = 1; n <= 4; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      MatrixXd M(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = 2.0 * rng.uniform01() - 1.0;
      QuadraticValueFunction truth;
      truth.P = M.transpose() * M;
      truth.q = VectorXd::Zero(n);
      for (int j = 0; j < n; ++j) truth.q[j] = 2.0 * rng.uniform01() - 1.0;
      truth.r = 2.0 * rng.uniform01() - 1.0;
      const auto samples = sample_from(truth, 30, rng, 3.0);
      const QuadraticValueFunction v = fit_quadratic(samples, 0.0);
      CHECK((v.P - truth.P).cwiseAbs().maxCoeff() <= 1e-4);
      CHECK((v.q - truth.q).cwiseAbs().maxCoeff() <= 1e-4);
      CHECK(std::abs(v.r - truth.r) <= 1e-4);
      CHECK(min_eigenvalue(v.P) >= -1e-8);
    }
  }
}

TEST_CASE("single sample interpolates with a PSD quadratic part") {
  VectorXd x0(2);
  x0 << 2.0, -1.0;
  const std::vector<SamplePair> samples{{x0, 7.5}};
  const QuadraticValueFunction v = fit_quadratic(samples, 1e-10);
  CHECK(evaluate(v, x0) == doctest::Approx(7.5).epsilon(1e-6));
  CHECK(min_eigenvalue(v.P) >= -1e-8);
}

TEST_CASE("indefinite target activates the projection and beats naive clip") {
  Rng rng(4242);
  std::vector<SamplePair> samples;
  for (int i = 0; i < 40; ++i) {
    VectorXd x(2);
    x << 4.0 * rng.uniform01() - 2.0, 4.0 * rng.uniform01() - 2.0;
    samples.push_back({x, x[0] * x[0] - x[1] * x[1]});
  }
  FitDiagnostics diag;
  const QuadraticValueFunction v = fit_quadratic(samples, 0.0, &diag);
  CHECK(min_eigenvalue(v.P) >= -1e-8);
  CHECK(diag.projection_active);

  // Reference: unconstrained least squares over the monomial basis, then a
  // one-shot spectral projection of the quadratic part. The constrained fit
  // may not be worse.
  MatrixXd Phi(samples.size(), 6);
  VectorXd beta(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& x = samples[s].x;
    Phi.row(static_cast<Eigen::Index>(s)) << x[0] * x[0], x[1] * x[1],
        x[0] * x[1], x[0], x[1], 1.0;
    beta[static_cast<Eigen::Index>(s)] = samples[s].beta;
  }
  const VectorXd theta = Phi.colPivHouseholderQr().solve(beta);
  QuadraticValueFunction clipped;
  clipped.P.resize(2, 2);
  clipped.P << theta[0], 0.5 * theta[2], 0.5 * theta[2], theta[1];
  clipped.P = project_psd(clipped.P, 0.0);
  clipped.q.resize(2);
  clipped.q << theta[3], theta[4];
  clipped.r = theta[5];

  CHECK(fit_objective(v, samples) <= fit_objective(clipped, samples) + 1e-9);
}

TEST_CASE("project_psd leaves PSD input unchanged and clips at zero") {
  MatrixXd I = MatrixXd::Identity(3, 3);
  CHECK((project_psd(I) - I).cwiseAbs().maxCoeff() == 0.0);

  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 1.0;
  D(1, 1) = -1.0;
  const MatrixXd Dp = project_psd(D, 0.0);
  CHECK(Dp(0, 0) == doctest::Approx(1.0));
  CHECK(Dp(1, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(Dp(0, 1)) <= 1e-12);
}

TEST_CASE("project_psd is the Frobenius-nearest PSD point (sampled)") {
  Rng rng(99);
  MatrixXd P(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      P(i, j) = 2.0 * rng.uniform01() - 1.0;
      P(j, i) = P(i, j);
    }
  const MatrixXd proj = project_psd(P, 0.0);
  CHECK(testsupport::jacobi_eigenvalues(proj)[0] >= -1e-12);
  const double d_proj = (proj - P).norm();
  for (int t = 0; t < 100; ++t) {
    MatrixXd M(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = 2.0 * rng.uniform01() - 1.0;
    const MatrixXd S = M.transpose() * M;  // random PSD competitor
    CHECK(d_proj <= (S - P).norm() + 1e-12);
  }
}

TEST_CASE("project_psd is idempotent") {
  Rng rng(31);
  MatrixXd P(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      P(i, j) = 4.0 * rng.uniform01() - 2.0;
      P(j, i) = P(i, j);
    }
  const MatrixXd once = project_psd(P, 0.0);
  const MatrixXd twice = project_psd(once, 0.0);
  CHECK((twice - once).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("evaluate matches the quadratic form") {
  QuadraticValueFunction v;
  v.P = MatrixXd::Zero(2, 2);
  v.q = VectorXd::Zero(2);
  v.r = 3.25;
  VectorXd x(2);
  x << 11.0, -4.0;
  CHECK(evaluate(v, x) == 3.25);

  v.P = MatrixXd::Identity(2, 2);
  v.r = 0.0;
  VectorXd y(2);
  y << 1.0, 2.0;
  CHECK(evaluate(v, y) == doctest::Approx(5.0));

  VectorXd bad(3);
  CHECK_THROWS_AS(evaluate(v, bad), ConfigError);
}

TEST_CASE("min_eigenvalue matches direct cases and the Jacobi oracle") {
  CHECK(min_eigenvalue(MatrixXd::Identity(3, 3)) == doctest::Approx(1.0).epsilon(1e-12));
  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 3.0;
  D(1, 1) = -2.0;
  CHECK(min_eigenvalue(D) == doctest::Approx(-2.0).epsilon(1e-12));

  Rng rng(880);
  for (int t = 0; t < 25; ++t) {
    MatrixXd P(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) {
        P(i, j) = 6.0 * rng.uniform01() - 3.0;
        P(j, i) = P(i, j);
      }
    const double ref = testsupport::jacobi_eigenvalues(P)[0];
    CHECK(std::abs(min_eigenvalue(P) - ref) <= 1e-10 * (1.0 + std::abs(ref)));
  }
}

TEST_CASE("fitted functions are convex along random chords") {
  Rng rng(5061);
  std::vector<SamplePair> samples;
  for (int i = 0; i < 25; ++i) {
    VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = 10.0 * rng.uniform01();
    // Mildly nonconvex target to exercise the projection path too.
    samples.push_back({x, x[0] * x[0] - 0.3 * x[1] * x[2] + 2.0 * x[2]});
  }
  const QuadraticValueFunction v = fit_quadratic(samples, 1e-9);
  for (int t = 0; t < 200; ++t) {
    VectorXd a(3), b(3);
    for (int j = 0; j < 3; ++j) {
      a[j] = 20.0 * rng.uniform01() - 10.0;
      b[j] = 20.0 * rng.uniform01() - 10.0;
    }
    const double th = rng.uniform01();
    const VectorXd mid = th * a + (1.0 - th) * b;
    CHECK(evaluate(v, mid) <=
          th * evaluate(v, a) + (1.0 - th) * evaluate(v, b) + 1e-9);
  }
}

TEST_CASE("fit never loses to the zero function") {
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<SamplePair> samples;
    double beta_sq = 0.0;
    for (int i = 0; i < 12; ++i) {
      VectorXd x(2);
      x << 6.0 * rng.uniform01(), 6.0 * rng.uniform01();
      const double b = 50.0 * rng.uniform01() * (rep % 2 ? 1.0 : -0.02);
      samples.push_back({x, std::abs(b)});
      beta_sq += b * b;
    }
    const QuadraticValueFunction v = fit_quadratic(samples, 0.0);
    CHECK(fit_objective(v, samples) <= beta_sq + 1e-9 * (1.0 + beta_sq));
  }
}

TEST_CASE("duplicating every sample leaves the ridge-free fit unchanged") {
  Rng rng(250);
  QuadraticValueFunction truth;
  truth.P = MatrixXd::Identity(2, 2) * 1.5;
  truth.q = VectorXd::Constant(2, -0.5);
  truth.r = 4.0;
  auto samples = sample_from(truth, 20, rng, 5.0);
  const QuadraticValueFunction a = fit_quadratic(samples, 0.0);
  std::vector<SamplePair> doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  const QuadraticValueFunction b = fit_quadratic(doubled, 0.0);
  CHECK((a.P - b.P).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((a.q - b.q).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(std::abs(a.r - b.r) <= 1e-9);
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(fit_quadratic({}, 0.0), DataError);
  VectorXd x(1);
  x << 1.0;
  CHECK_THROWS_AS(fit_quadratic({{x, 1.0}}, -1.0), ConfigError);
  CHECK_THROWS_AS(fit_quadratic({{x, std::nan("")}}, 0.0), DataError);
}

TEST_CASE("default ridge tracks the sample count, not the cost scale") {
  VectorXd x(1);
  x << 1.0;
  std::vector<SamplePair> samples{{x, 100.0}, {x, 300.0}};
  CHECK(default_ridge(samples) == doctest::Approx(1e-8 * 2.0));
  // Rescaling every cost a million-fold must not change the penalty's pull
  // on the normalized coefficients.
  std::vector<SamplePair> big{{x, 1e8}, {x, 3e8}};
  CHECK(default_ridge(big) == doctest::Approx(default_ridge(samples)));
}

}  // TEST_SUITE
