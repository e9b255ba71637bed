#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/gp.hpp"
#include "gpmpc/rng.hpp"

using namespace gpmpc;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

Matrix random_inputs(std::size_t n, std::size_t d, RngStream& rng, double scale = 1.0) {
  Matrix z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z(i, j) = scale * rng.normal();
  return z;
}

Hyperparameters make_psi(double zeta, std::vector<double> lambda, double sigma) {
  Hyperparameters p;
  p.log_zeta = std::log(zeta);
  for (double l : lambda) p.log_lambda.push_back(std::log(l));
  p.log_sigma_nu = std::log(sigma);
  return p;
}

// Posterior from scratch with Eigen's dense solver.
Posterior direct_posterior(const Matrix& z, const Vector& y, const Hyperparameters& psi,
                           const std::vector<std::uint8_t>& flags, std::span<const double> q) {
  const Eigen::MatrixXd k = to_eigen(covariance_matrix(z, psi, flags));
  Eigen::VectorXd kv(z.rows()), ye(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    kv(i) = se_kernel(z.row(i), q, psi);
    ye(i) = y[i];
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(k);
  const double mean = kv.dot(lu.solve(ye));
  const double var = psi.zeta_sq() - kv.dot(lu.solve(kv));
  return {mean, var};
}

}  // namespace

TEST(SEKernel, BasicValues) {
  const Hyperparameters psi = make_psi(1.3, {0.7, 2.0}, 0.1);
  const Vector z{0.3, -1.2};
  EXPECT_DOUBLE_EQ(se_kernel(z, z, psi), 1.3 * 1.3);
  const Hyperparameters unit = make_psi(1.0, {1.0, 1.0}, 0.1);
  EXPECT_NEAR(se_kernel(Vector{std::sqrt(2.0), 0.0}, Vector{0.0, 0.0}, unit), std::exp(-1.0), 1e-15);
  EXPECT_THROW(se_kernel(Vector{1.0}, Vector{1.0, 2.0}, unit), DimensionMismatch);
}

TEST(SEKernel, ExtendedPrecisionAndSymmetry) {
  RngStream rng(1, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Hyperparameters psi = make_psi(0.5 + rng.uniform(), {0.5 + rng.uniform(), 0.5 + rng.uniform(), 2.0}, 0.1);
    const Vector a{rng.normal(), rng.normal(), rng.normal()}, b{rng.normal(), rng.normal(), rng.normal()};
    long double q = 0.0L;
    for (int d = 0; d < 3; ++d) {
      const long double diff = (static_cast<long double>(a[d]) - b[d]) / std::exp(static_cast<long double>(psi.log_lambda[d]));
      q += diff * diff;
    }
    const long double ref = std::exp(2.0L * psi.log_zeta) * std::exp(-0.5L * q);
    const double k = se_kernel(a, b, psi);
    EXPECT_NEAR(k, static_cast<double>(ref), 1e-14 * static_cast<double>(ref) + 1e-300);
    EXPECT_EQ(k, se_kernel(b, a, psi));
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, psi.zeta_sq());
  }
}

TEST(SEKernel, GramMatrixIsPositiveSemidefinite) {
  RngStream rng(2, 0);
  const Matrix z = random_inputs(50, 3, rng);
  const Hyperparameters psi = make_psi(1.0, {0.8, 1.5, 3.0}, 1e-3);
  const Eigen::MatrixXd g = to_eigen(covariance_matrix(z, psi, std::vector<std::uint8_t>(50, 0)));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
}

TEST(NegLogLik, ZeroTargetsGiveHalfLogDet) {
  const Matrix z{{0.0}, {0.4}};
  const Hyperparameters psi = make_psi(1.0, {1.0}, 0.2);
  const Eigen::MatrixXd k = to_eigen(covariance_matrix(z, psi, std::vector<std::uint8_t>(2, 1)));
  EXPECT_NEAR(neg_log_marginal_likelihood(psi, z, Vector{0.0, 0.0}), 0.5 * std::log(k.determinant()), 1e-12);
}

TEST(NegLogLik, DiagonalLimitClosedForm) {
  const Matrix z{{0.0}, {100.0}, {200.0}};
  const Vector y{0.3, -1.1, 0.7};
  const Hyperparameters psi = make_psi(0.9, {0.5}, 0.3);
  const double s = psi.zeta_sq() + psi.noise_var();
  double expected = 0.0;
  for (double yi : y) expected += 0.5 * std::log(s) + yi * yi / (2.0 * s);
  EXPECT_NEAR(neg_log_marginal_likelihood(psi, z, y), expected, 1e-12);
}

TEST(NegLogLik, MatchesDirectDenseEvaluation) {
  RngStream rng(3, 0);
  const Matrix z = random_inputs(10, 2, rng);
  Vector y(10);
  for (auto& v : y) v = rng.normal();
  const Hyperparameters psi = make_psi(1.2, {0.9, 1.7}, 0.15);
  const Eigen::MatrixXd k = to_eigen(covariance_matrix(z, psi, std::vector<std::uint8_t>(10, 1)));
  const Eigen::VectorXd ye = Eigen::Map<const Eigen::VectorXd>(y.data(), 10);
  const double expected = 0.5 * std::log(k.determinant()) + 0.5 * ye.dot(k.inverse() * ye);
  EXPECT_NEAR(neg_log_marginal_likelihood(psi, z, y), expected, 1e-10);
  EXPECT_THROW(neg_log_marginal_likelihood(psi, Matrix{{1.0, 2.0}}, Vector{1.0}), DomainError);
}

TEST(Fit, RecoversNoiseLevelOfKnownGP) {
  RngStream rng(11, 0);
  const std::size_t n = 80;
  const Matrix z = random_inputs(n, 2, rng);
  const Hyperparameters truth = make_psi(1.0, {1.0, 1.0}, 0.1);
  const Eigen::MatrixXd k = to_eigen(covariance_matrix(z, truth, std::vector<std::uint8_t>(n, 1)));
  const Eigen::MatrixXd l = k.llt().matrixL();
  Eigen::VectorXd w(n);
  for (std::size_t i = 0; i < n; ++i) w(i) = rng.normal();
  const Eigen::VectorXd ye = l * w;
  const Vector y(ye.data(), ye.data() + n);

  RngStream fit_rng(12, 0);
  const FitReport rep = fit_hyperparameters(z, y, 5, fit_rng);
  const double sigma = std::exp(rep.psi.log_sigma_nu);
  EXPECT_GT(sigma, 0.05);
  EXPECT_LT(sigma, 0.2);
  EXPECT_LE(rep.nll, rep.heuristic_nll);
  EXPECT_TRUE(rep.projected_gradient <= 1e-4 || rep.hit_iteration_cap) << rep.projected_gradient;
  EXPECT_EQ(rep.successful_starts, 5);
}

TEST(Fit, DuplicateInputsForceNoise) {
  Matrix z(20, 1);
  Vector y(20);
  RngStream rng(4, 0);
  for (std::size_t i = 0; i < 10; ++i) {
    const double x = rng.normal();
    z(2 * i, 0) = x;
    z(2 * i + 1, 0) = x;
    y[2 * i] = std::sin(x) + 0.3;
    y[2 * i + 1] = std::sin(x) - 0.3;
  }
  RngStream fit_rng(5, 0);
  const FitReport rep = fit_hyperparameters(z, y, 3, fit_rng);
  EXPECT_GT(std::exp(rep.psi.log_sigma_nu), 0.1);
}

TEST(Fit, DeterministicForFixedSeed) {
  RngStream rng(6, 0);
  const Matrix z = random_inputs(25, 2, rng);
  Vector y(25);
  for (std::size_t i = 0; i < 25; ++i) y[i] = std::cos(z(i, 0)) + 0.5 * z(i, 1);
  RngStream a(99, 0), b(99, 0);
  const FitReport ra = fit_hyperparameters(z, y, 5, a);
  const FitReport rb = fit_hyperparameters(z, y, 5, b);
  EXPECT_EQ(ra.psi, rb.psi);
  EXPECT_EQ(ra.nll, rb.nll);
  EXPECT_THROW(fit_hyperparameters(z, y, 0, a), DomainError);
}

TEST(Posterior, SinglePointClosedForm) {
  const Hyperparameters psi = make_psi(1.4, {0.6}, 0.3);
  const GPModel gp(Matrix{{0.2}}, Vector{0.8}, psi);
  const Posterior p = gp.posterior(Vector{0.2});
  const double z2 = psi.zeta_sq(), s2 = psi.noise_var();
  EXPECT_NEAR(p.mean, z2 * 0.8 / (z2 + s2), 1e-14);
  EXPECT_NEAR(p.variance, z2 - z2 * z2 / (z2 + s2), 1e-14);
  EXPECT_THROW(gp.posterior(Vector{0.2, 0.1}), DimensionMismatch);
}

TEST(Posterior, PriorFarFromData) {
  RngStream rng(7, 0);
  const Matrix z = random_inputs(10, 2, rng);
  Vector y(10, 1.0);
  const Hyperparameters psi = make_psi(1.1, {0.5, 0.5}, 0.1);
  const GPModel gp(z, y, psi);
  const Posterior p = gp.posterior(Vector{1e3, -1e3});
  EXPECT_NEAR(p.mean, 0.0, 1e-12);
  EXPECT_NEAR(p.variance, psi.zeta_sq(), 1e-12);
}

TEST(Posterior, NoiselessTrainingPointIsInterpolated) {
  RngStream rng(8, 0);
  const Matrix z = random_inputs(6, 2, rng);
  const Vector y{0.1, -0.4, 0.9, 1.2, -0.3, 0.5};
  const std::vector<std::uint8_t> flags{1, 0, 1, 0, 1, 1};
  const GPModel gp(z, y, make_psi(1.0, {1.0, 1.0}, 0.2), flags);
  for (std::size_t i : {1u, 3u}) {
    const Posterior p = gp.posterior(z.row(i));
    EXPECT_NEAR(p.mean, y[i], 1e-8);
    EXPECT_LE(p.variance, 1e-8);
  }
}

TEST(Posterior, AgreesWithDirectSolve) {
  RngStream rng(9, 0);
  const Matrix z = random_inputs(15, 3, rng);
  Vector y(15);
  for (auto& v : y) v = rng.normal();
  const Hyperparameters psi = make_psi(0.8, {1.0, 0.7, 1.9}, 0.2);
  const std::vector<std::uint8_t> flags(15, 1);
  const GPModel gp(z, y, psi, flags);
  for (int q = 0; q < 10; ++q) {
    const Vector x{rng.normal(), rng.normal(), rng.normal()};
    const Posterior a = gp.posterior(x);
    const Posterior b = direct_posterior(z, y, psi, flags, x);
    EXPECT_NEAR(a.mean, b.mean, 1e-10);
    EXPECT_NEAR(a.variance, b.variance, 1e-10);
    EXPECT_NEAR(gp.mean(x), a.mean, 1e-12);
  }
}

TEST(Posterior, GradientsMatchFiniteDifferences) {
  RngStream rng(10, 0);
  const Matrix z = random_inputs(12, 3, rng);
  Vector y(12);
  for (auto& v : y) v = rng.normal();
  const GPModel gp(z, y, make_psi(1.2, {0.9, 1.3, 0.6}, 0.1));
  const Vector x{0.3, -0.2, 0.5};
  Vector gm(3), gv(3), tmp(3);
  gp.mean_with_gradient(x, gm);
  gp.variance_with_gradient(x, gv);
  const double h = 1e-6;
  for (std::size_t d = 0; d < 3; ++d) {
    Vector xp = x, xm = x;
    xp[d] += h;
    xm[d] -= h;
    EXPECT_NEAR(gm[d], (gp.mean(xp) - gp.mean(xm)) / (2 * h), 1e-7);
    EXPECT_NEAR(gv[d], (gp.posterior(xp).variance - gp.posterior(xm).variance) / (2 * h), 1e-7);
  }
}

TEST(BlockInverse, BlockDiagonalCase) {
  const Matrix out = block_inverse_update(Matrix{{0.25}}, Vector{0.0}, 5.0);
  EXPECT_NEAR(out(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(out(1, 1), 0.2, 1e-15);
  EXPECT_EQ(out(0, 1), 0.0);
  EXPECT_EQ(out(1, 0), 0.0);
}

TEST(BlockInverse, MatchesDenseInverse) {
  RngStream rng(12, 0);
  for (std::size_t n : {1u, 5u, 10u, 30u}) {
    const Matrix z = random_inputs(n + 1, 2, rng);
    const Hyperparameters psi = make_psi(1.0, {1.0, 1.0}, 0.3);
    const Matrix full = covariance_matrix(z, psi, std::vector<std::uint8_t>(n + 1, 1));
    Matrix a(n, n);
    Vector k(n);
    for (std::size_t i = 0; i < n; ++i) {
      k[i] = full(i, n);
      for (std::size_t j = 0; j < n; ++j) a(i, j) = full(i, j);
    }
    Matrix ainv(n, n);
    const Eigen::MatrixXd ai = to_eigen(a).inverse();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ainv(i, j) = ai(i, j);
    const Matrix upd = block_inverse_update(ainv, k, full(n, n));
    const Eigen::MatrixXd direct = to_eigen(full).inverse();
    EXPECT_LE((to_eigen(upd) - direct).cwiseAbs().rowwise().sum().maxCoeff(), 1e-8) << "n=" << n;
  }
}

TEST(BlockInverse, ZeroSchurComplementIsSingular) {
  const Matrix inv{{0.5, 0.0}, {0.0, 0.25}};
  const Vector k{1.0, 2.0};
  const double kappa = 0.5 * 1.0 + 0.25 * 4.0;
  EXPECT_THROW(block_inverse_update(inv, k, kappa), SingularUpdate);
}

TEST(Condition, RecursiveEqualsBatch) {
  RngStream rng(13, 0);
  for (std::size_t n : {5u, 30u}) {
    const Matrix z = random_inputs(n, 3, rng);
    Vector y(n);
    for (auto& v : y) v = rng.normal();
    const Hyperparameters psi = make_psi(1.1, {0.9, 1.4, 0.8}, 0.2);
    GPModel gp(z, y, psi);
    Matrix zz = z;
    Vector yy = y;
    std::vector<std::uint8_t> flags(n, 1);
    for (int u = 0; u < 10; ++u) {
      const Vector znew{rng.normal(), rng.normal(), rng.normal()};
      const double ynew = rng.normal();
      const bool noiseless = (u % 3) == 1;
      gp = gp.condition(znew, ynew, noiseless);
      zz = zz.with_row(znew);
      yy.push_back(ynew);
      flags.push_back(noiseless ? 0 : 1);
    }
    const GPModel batch(zz, yy, psi, flags);
    EXPECT_EQ(gp.hyperparameters(), psi);
    EXPECT_EQ(gp.noise_flags(), flags);
    for (int q = 0; q < 20; ++q) {
      const Vector x{rng.normal(), rng.normal(), rng.normal()};
      const Posterior a = gp.posterior(x), b = batch.posterior(x);
      EXPECT_NEAR(a.mean, b.mean, 1e-8);
      EXPECT_NEAR(a.variance, b.variance, 1e-8);
    }
    // inv_cov * Sigma_Y = I and alpha = inv_cov * Y.
    const Matrix prod = gp.inv_cov() * covariance_matrix(zz, psi, flags);
    EXPECT_LE(max_abs_diff(prod, Matrix::identity(prod.rows())), 1e-7);
    EXPECT_LE(max_abs_diff(gp.alpha(), matvec(gp.inv_cov(), yy)), 1e-9);
  }
}

TEST(Condition, NoiselessPointIsReproduced) {
  RngStream rng(14, 0);
  const Matrix z = random_inputs(8, 2, rng);
  Vector y(8);
  for (auto& v : y) v = rng.normal();
  const GPModel gp(z, y, make_psi(1.0, {1.0, 1.0}, 0.1));
  const Vector znew{0.1, 0.2};
  const double before = gp.posterior(znew).variance;
  const GPModel c = gp.condition(znew, 0.77, true);
  const Posterior p = c.posterior(znew);
  EXPECT_NEAR(p.mean, 0.77, 1e-8);
  EXPECT_LE(p.variance, 1e-8);
  EXPECT_LE(p.variance, before);
  EXPECT_EQ(gp.size(), 8u);
  EXPECT_EQ(c.size(), 9u);
  EXPECT_THROW(c.condition(znew, 0.77, true), SingularUpdate);
}

TEST(Condition, NoisyRepeatOfTrainingPointEqualsBatch) {
  RngStream rng(15, 0);
  const Matrix z = random_inputs(6, 2, rng);
  Vector y(6);
  for (auto& v : y) v = rng.normal();
  const Hyperparameters psi = make_psi(1.0, {1.0, 1.0}, 0.2);
  const GPModel c = GPModel(z, y, psi).condition(z.row(2), y[2] + 0.1, false);
  Vector yy = y;
  yy.push_back(y[2] + 0.1);
  const GPModel batch(z.with_row(z.row(2)), yy, psi);
  const Vector q{0.0, 0.0};
  EXPECT_NEAR(c.posterior(q).mean, batch.posterior(q).mean, 1e-9);
  EXPECT_NEAR(c.posterior(z.row(2)).variance, batch.posterior(z.row(2)).variance, 1e-9);
}

TEST(Condition, VarianceNonIncreasingAtConditionedPoint) {
  RngStream rng(16, 0);
  const Matrix z = random_inputs(10, 2, rng);
  Vector y(10);
  for (auto& v : y) v = rng.normal();
  GPModel gp(z, y, make_psi(1.0, {0.8, 1.2}, 0.2));
  for (int i = 0; i < 10; ++i) {
    const Vector x{rng.normal(), rng.normal()};
    const double before = gp.posterior(x).variance;
    gp = gp.condition(x, rng.normal(), i % 2 == 0);
    EXPECT_LE(gp.posterior(x).variance, before + 1e-12);
  }
}
