#include "mppca/ppca.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mppca;

namespace {

// Dense N(x | mu, C) through an explicit Cholesky factor.
double dense_log_density(const Vector& x, const Vector& mu, const Matrix& cov) {
  const Eigen::LLT<Matrix> llt(cov);
  const Vector r = x - mu;
  const double quad = r.dot(llt.solve(r));
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + log_det + quad);
}

PpcaParams random_params(Rng& rng, Index d, Index q) {
  PpcaParams p;
  p.mu = standard_normal(rng, d);
  p.W = standard_normal(rng, d, q);
  p.sigma2 = std::exp(std::uniform_real_distribution<double>(-3.0, 1.0)(rng));
  return p;
}

}  // namespace

TEST(MarginalLogDensity, StandardNormalAtMode) {
  PpcaParams p{Vector::Zero(1), Matrix::Zero(1, 1), 1.0};
  EXPECT_NEAR(marginal_log_density(Vector::Zero(1), p), -0.5 * std::log(2.0 * M_PI), 1e-14);
  EXPECT_NEAR(marginal_log_density(Vector::Zero(1), p), -0.91894, 1e-5);
}

TEST(MarginalLogDensity, FixedInstanceMatchesNumpy) {
  PpcaParams p;
  p.mu = (Vector(5) << 0.3, -1.2, 0.5, 2.0, -0.7).finished();
  p.W = (Matrix(5, 1) << 1.0, 0.5, -0.3, 0.2, 0.8).finished();
  p.sigma2 = 0.4;
  const Vector x = (Vector(5) << 1.0, 0.0, -1.0, 0.5, 0.2).finished();
  EXPECT_NEAR(marginal_log_density(x, p), -9.821711914508109, 1e-12);
}

TEST(MarginalLogDensity, ZeroLoadingIsIsotropic) {
  Rng rng = make_rng(3);
  for (int t = 0; t < 20; ++t) {
    const Index d = 1 + t % 6;
    PpcaParams p{Vector::Zero(d), Matrix::Zero(d, 1), 0.1 + 0.2 * t};
    const Vector x = standard_normal(rng, d);
    const double want =
        -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * p.sigma2) - x.squaredNorm() / (2.0 * p.sigma2);
    EXPECT_NEAR(marginal_log_density(x, p), want, 1e-12);
  }
}

TEST(MarginalLogDensity, MatchesDenseForRandomInstances) {
  Rng rng = make_rng(11);
  for (int t = 0; t < 300; ++t) {
    const Index d = 1 + t % 20;
    const Index q = std::min<Index>(d, 1 + t % 3);
    const PpcaParams p = random_params(rng, d, q);
    const Vector x = p.mu + 2.0 * standard_normal(rng, d);
    EXPECT_NEAR(marginal_log_density(x, p), dense_log_density(x, p.mu, covariance(p)), 1e-8);
  }
}

TEST(MarginalLogDensity, IntegratesToOneIn2D) {
  PpcaParams p;
  p.mu = (Vector(2) << 0.3, -0.2).finished();
  p.W = (Matrix(2, 1) << 0.8, 0.5).finished();
  p.sigma2 = 0.3;
  const PpcaDensity dens(p);
  const double h = 0.02;
  double total = 0.0;
  Vector x(2);
  for (double a = -8; a <= 8; a += h)
    for (double b = -8; b <= 8; b += h) {
      x << a, b;
      total += std::exp(dens.log_density(x)) * h * h;
    }
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(MarginalLogDensity, RejectsBadInput) {
  PpcaParams p{Vector::Zero(3), Matrix::Zero(3, 1), 1.0};
  EXPECT_THROW(marginal_log_density(Vector::Zero(2), p), DimensionError);
  p.sigma2 = 0.0;
  EXPECT_THROW(marginal_log_density(Vector::Zero(3), p), std::invalid_argument);
  p.sigma2 = -1.0;
  EXPECT_THROW(marginal_log_density(Vector::Zero(3), p), std::invalid_argument);
}

TEST(LatentPosterior, ZeroLoadingGivesPrior) {
  PpcaParams p{Vector::Zero(3), Matrix::Zero(3, 2), 0.7};
  const auto post = latent_posterior((Vector(3) << 1, 2, 3).finished(), p);
  EXPECT_NEAR(post.mean.norm(), 0.0, 1e-15);
  EXPECT_NEAR((post.cov - Matrix::Identity(2, 2)).norm(), 0.0, 1e-15);
}

TEST(LatentPosterior, OneDimensionalConjugateCase) {
  PpcaParams p{Vector::Zero(1), Matrix::Ones(1, 1), 1.0};
  const auto post = latent_posterior(Vector::Constant(1, 2.0), p);
  EXPECT_NEAR(post.mean(0), 1.0, 1e-15);
  EXPECT_NEAR(post.cov(0, 0), 0.5, 1e-15);
}

TEST(LatentPosterior, FixedInstanceMatchesNumpy) {
  PpcaParams p;
  p.mu = (Vector(4) << 0.1, -0.4, 0.9, 0.0).finished();
  p.W = (Matrix(4, 2) << 1.0, 0.2, 0.0, 0.7, -0.5, 0.3, 0.4, -1.1).finished();
  p.sigma2 = 0.25;
  const auto post = latent_posterior((Vector(4) << 0.5, 1.5, -0.2, 0.3).finished(), p);
  EXPECT_NEAR(post.mean(0), 0.7628987790468686, 1e-12);
  EXPECT_NEAR(post.mean(1), 0.5036204441482113, 1e-12);
  EXPECT_NEAR(post.cov(0, 0), 0.15754233950374175, 1e-12);
  EXPECT_NEAR(post.cov(0, 1), 0.02953918865695153, 1e-12);
  EXPECT_NEAR(post.cov(1, 1), 0.12573090556548627, 1e-12);
}

TEST(LatentPosterior, CovarianceShrinksWithNoise) {
  Rng rng = make_rng(5);
  PpcaParams p = random_params(rng, 4, 2);
  double previous = 1e300;
  for (double s2 : {4.0, 1.0, 0.25, 0.01, 1e-4}) {
    p.sigma2 = s2;
    const auto a = latent_posterior(standard_normal(rng, 4), p);
    const auto b = latent_posterior(standard_normal(rng, 4), p);
    EXPECT_NEAR((a.cov - b.cov).norm(), 0.0, 1e-14);
    EXPECT_LT(a.cov.trace(), previous);
    previous = a.cov.trace();
  }
}

TEST(FitMle, TwoPointExample) {
  Matrix data(2, 2);
  data << 0, 0, 2, 0;
  const PpcaParams p = fit_mle(data, 1);
  EXPECT_NEAR(p.mu(0), 1.0, 1e-15);
  EXPECT_NEAR(p.mu(1), 0.0, 1e-15);
  EXPECT_EQ(p.sigma2, 0.0);
  EXPECT_NEAR(std::abs(p.W(0, 0)), std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(p.W(1, 0), 0.0, 1e-14);
}

TEST(FitMle, FixedDataMatchesNumpy) {
  Matrix data(6, 3);
  data << 0, 1, 2, 1, 3, 1, 2, 4, 0.5, 3, 7, 1.5, 4, 8, -1, 5, 11, 0;
  const PpcaParams p = fit_mle(data, 1);
  EXPECT_NEAR(p.mu(1), 5.666666666666667, 1e-12);
  EXPECT_NEAR(p.sigma2, 0.32880961736604025, 1e-12);
  EXPECT_NEAR(p.W.col(0).norm(), 4.140882089752762, 1e-12);
  const Vector dir = (Vector(3) << 0.44593924142983304, 0.8762602904065054, -0.1824995792041478).finished();
  EXPECT_NEAR(std::abs(dir.dot(p.W.col(0).normalized())), 1.0, 1e-12);
}

TEST(FitMle, RecoversGeneratingDirection) {
  PpcaParams truth;
  truth.mu = (Vector(3) << 1, -1, 0.5).finished();
  truth.W = (Matrix(3, 1) << 2.0, 1.0, -1.0).finished();
  truth.sigma2 = 0.2;
  const Matrix x = sample(truth, 100000, 42);
  const PpcaParams fit = fit_mle(x, 1);
  const double cosine = fit.W.col(0).normalized().dot(truth.W.col(0).normalized());
  EXPECT_GT(std::abs(cosine), 0.99);
  EXPECT_NEAR(fit.sigma2, 0.2, 0.01);
}

TEST(FitMle, IsotropicDataHasNoDirection) {
  PpcaParams truth{Vector::Zero(3), Matrix::Zero(3, 1), 2.0};
  const PpcaParams fit = fit_mle(sample(truth, 200000, 8), 1);
  EXPECT_NEAR(fit.sigma2, 2.0, 0.03);
  EXPECT_LT(fit.W.norm(), 0.3);
}

TEST(FitMle, IsLocallyOptimal) {
  Rng rng = make_rng(21);
  const PpcaParams truth = random_params(rng, 4, 1);
  const Matrix x = sample(truth, 500, rng);
  const PpcaParams best = fit_mle(x, 1);
  // fit_mle uses the N-1 covariance; compare against perturbations under the
  // matching likelihood (the optimum of the N-divisor likelihood is shifted by
  // a scale factor only, so the comparison uses that scaled fit).
  PpcaParams scaled = best;
  const double f = (static_cast<double>(x.rows()) - 1.0) / static_cast<double>(x.rows());
  scaled.sigma2 *= f;
  scaled.W *= std::sqrt(f);
  const double base = PpcaDensity(scaled).log_density_rows(x).sum();
  for (int t = 0; t < 50; ++t) {
    PpcaParams p = scaled;
    p.mu += 0.01 * standard_normal(rng, 4);
    p.W += 0.01 * standard_normal(rng, 4, 1);
    p.sigma2 *= std::exp(0.01 * standard_normal(rng, 1)(0));
    EXPECT_LE(PpcaDensity(p).log_density_rows(x).sum(), base + 1e-9);
  }
}

TEST(FitMle, RejectsInvalidInput) {
  EXPECT_THROW(fit_mle(Matrix::Zero(1, 3), 1), std::invalid_argument);
  EXPECT_THROW(fit_mle(Matrix::Random(5, 3), 3), std::invalid_argument);
  EXPECT_THROW(fit_mle(Matrix::Ones(5, 3), 1), DegenerateError);
}

TEST(Sample, MomentsOfStandardNormal) {
  PpcaParams p{Vector::Zero(3), Matrix::Zero(3, 1), 1.0};
  const Matrix x = sample(p, 1000000, 17);
  const Vector mean = x.colwise().mean().transpose();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 4e-3);
  EXPECT_LT((sample_covariance(x) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Sample, NoiselessLimitLiesOnLine) {
  PpcaParams p;
  p.mu = (Vector(3) << 1, 2, 3).finished();
  p.W = (Matrix(3, 1) << 0.6, 0.0, 0.8).finished();
  p.sigma2 = 1e-12;
  const Matrix x = sample(p, 1000, 4);
  const Vector u = p.W.col(0).normalized();
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector r = x.row(i).transpose() - p.mu;
    EXPECT_LT((r - u * u.dot(r)).norm(), 1e-5);
  }
}

TEST(Sample, SeededRunsAreIdentical) {
  Rng rng = make_rng(9);
  const PpcaParams p = random_params(rng, 4, 2);
  EXPECT_EQ(sample(p, 100, 77), sample(p, 100, 77));
}

TEST(SymmetricEigen, DescendingAndSignNormalized) {
  Matrix s(3, 3);
  s << 2, 0, 0, 0, 5, 0, 0, 0, 2;
  const auto e = symmetric_eigen_descending(s);
  EXPECT_DOUBLE_EQ(e.values(0), 5.0);
  EXPECT_DOUBLE_EQ(e.values(1), 2.0);
  for (Index k = 0; k < 3; ++k) {
    Index first = 0;
    while (std::abs(e.vectors(first, k)) < 1e-12) ++first;
    EXPECT_GT(e.vectors(first, k), 0.0);
  }
  // Tied eigenvalues: lexicographically larger vector first.
  EXPECT_NEAR(e.vectors(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(e.vectors(2, 2), 1.0, 1e-12);
}
