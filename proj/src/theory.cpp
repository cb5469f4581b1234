#include "mppca/theory.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mppca::theory {

Matrix TwoCategorySpec::covariance() const {
  return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
}

void TwoCategorySpec::validate() const {
  const Index d = dim();
  require(d >= 1, "two-category spec needs d >= 1");
  require_dim(mu_b.size(), d, "mu_b");
  require_dim(eigvals.size(), d, "eigvals");
  require_dim(eigvecs.rows(), d, "eigvecs rows");
  require_dim(eigvecs.cols(), d, "eigvecs cols");
  require((eigvals.array() > 0).all(), "eigenvalues must be positive");
  for (Index i = 1; i < d; ++i) require(eigvals(i - 1) >= eigvals(i), "eigenvalues must be descending");
  const double err = (eigvecs.transpose() * eigvecs - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
  require(err <= 1e-10, "eigenvectors must be orthonormal");
}

InfoDecomposition info_decomposition(const TwoCategorySpec& spec) {
  spec.validate();
  const Vector diff = spec.mu_a - spec.mu_b;
  InfoDecomposition out;
  out.r = (spec.eigvecs.transpose() * diff).array().square();
  out.r_ab = diff.squaredNorm();
  return out;
}

SnrTerms snr_analytic(Index q, const InfoDecomposition& decomp, const Vector& eigvals) {
  const Index d = decomp.r.size();
  require_dim(eigvals.size(), d, "eigvals");
  require(q >= 0 && q < d, "snr_analytic needs 0 <= q < d");
  const Index tail = d - q;
  const double noise = eigvals.tail(tail).dot(decomp.r.tail(tail));
  SnrTerms t;
  if (!(noise > 0)) {
    t.degenerate = true;
    return t;
  }
  t.mean = decomp.r_ab - decomp.r.head(q).sum();
  t.variance = 4.0 * noise;
  t.snr = 0.25 * t.mean * t.mean / noise;
  return t;
}

DropCondition drop_condition_terms(Index q, const InfoDecomposition& decomp, const Vector& eigvals) {
  const Index d = decomp.r.size();
  require_dim(eigvals.size(), d, "eigvals");
  require(q >= 0 && q <= d - 2, "drop_condition needs 0 <= q <= d-2");
  // 0-based: the candidate direction is index q, the remainder starts at q+1.
  const Index rest = d - q - 1;
  const double s = decomp.r.tail(rest).sum();
  if (!(s > 0)) {
    throw DegenerateError("condition undefined: no information beyond direction " + std::to_string(q + 1));
  }
  const double t = decomp.r.tail(rest).dot(eigvals.tail(rest));
  DropCondition c;
  c.lhs = eigvals(q);
  c.rhs = (decomp.r(q) / s + 2.0) * (t / s);
  c.holds = c.lhs < c.rhs;
  return c;
}

bool drop_condition(Index q, const InfoDecomposition& decomp, const Vector& eigvals) {
  return drop_condition_terms(q, decomp, eigvals).holds;
}

double accuracy_lower_bound(double snr) {
  require(snr >= 0, "SNR must be nonnegative");
  if (std::isinf(snr)) return 1.0;
  return snr / (1.0 + snr);
}

double projected_sq_distance(const Vector& x, const Vector& mu, const Matrix& eigvecs, Index q) {
  const Vector r = x - mu;
  if (q == 0) return r.squaredNorm();
  const Vector coords = eigvecs.leftCols(q).transpose() * r;
  return std::max(r.squaredNorm() - coords.squaredNorm(), 0.0);
}

double pca_classifier_prob(const Vector& x, const TwoCategorySpec& spec, Index q) {
  require_dim(x.size(), spec.dim(), "pca_classifier_prob input");
  require(q >= 0 && q < spec.dim(), "pca_classifier_prob needs 0 <= q < d");
  const double tau_a = projected_sq_distance(x, spec.mu_a, spec.eigvecs, q);
  const double tau_b = projected_sq_distance(x, spec.mu_b, spec.eigvecs, q);
  const double margin = tau_b - tau_a;
  // Stable logistic on either side of zero.
  if (margin >= 0) return 1.0 / (1.0 + std::exp(-margin));
  const double e = std::exp(margin);
  return e / (1.0 + e);
}

AlphaMonteCarlo monte_carlo_alpha(const TwoCategorySpec& spec, Index q, Index samples,
                                  std::uint64_t seed) {
  spec.validate();
  const Index d = spec.dim();
  require(q >= 0 && q < d, "monte_carlo_alpha needs 0 <= q < d");
  require(samples >= 2, "monte_carlo_alpha needs at least two samples");

  const Matrix uq = spec.eigvecs.leftCols(q);
  const Matrix residual = Matrix::Identity(d, d) - uq * uq.transpose();
  const Matrix root = spec.eigvecs * spec.eigvals.cwiseSqrt().asDiagonal();
  const Vector shift = spec.mu_a - spec.mu_b;

  constexpr Index kBatch = 1 << 16;
  std::vector<double> alpha(static_cast<std::size_t>(samples));
  Matrix g(d, kBatch);
  for (Index start = 0, batch = 0; start < samples; start += kBatch, ++batch) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(batch));
    const Index m = std::min(samples - start, kBatch);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < m; ++i)
      for (Index k = 0; k < d; ++k) g(k, i) = normal(rng);
    const Matrix e = root * g.leftCols(m);  // columns are x - mu_a
    const Matrix near = residual * e;
    const Matrix far = near.colwise() + residual * shift;
    for (Index i = 0; i < m; ++i) {
      alpha[static_cast<std::size_t>(start + i)] = far.col(i).squaredNorm() - near.col(i).squaredNorm();
    }
  }

  const double n = static_cast<double>(samples);
  double sum = 0.0;
  for (double a : alpha) sum += a;
  const double mean = sum / n;
  double m2 = 0.0, m4 = 0.0;
  Index positive = 0;
  for (double a : alpha) {
    const double c = a - mean;
    const double c2 = c * c;
    m2 += c2;
    m4 += c2 * c2;
    if (a > 0) ++positive;
  }
  AlphaMonteCarlo out;
  out.samples = samples;
  out.mean = mean;
  out.variance = m2 / (n - 1.0);
  out.mean_se = std::sqrt(out.variance / n);
  const double mu2 = m2 / n;
  const double mu4 = m4 / n;
  out.variance_se = std::sqrt(std::max(mu4 - mu2 * mu2, 0.0) / n);
  out.accuracy = static_cast<double>(positive) / n;
  out.accuracy_se = std::sqrt(std::max(out.accuracy * (1.0 - out.accuracy), 1.0 / n) / n);
  return out;
}

TwoCategorySpec random_spec(Rng& rng, Index d) {
  require(d >= 1, "random_spec needs d >= 1");
  std::uniform_real_distribution<double> log_unif(std::log(0.1), std::log(10.0));
  std::uniform_real_distribution<double> scale_unif(0.5, 2.0);

  TwoCategorySpec spec;
  spec.eigvals.resize(d);
  for (Index i = 0; i < d; ++i) spec.eigvals(i) = std::exp(log_unif(rng));
  std::sort(spec.eigvals.data(), spec.eigvals.data() + d, std::greater<>());

  const Eigen::HouseholderQR<Matrix> qr(standard_normal(rng, d, d));
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  // Sign fix against R's diagonal makes the draw Haar distributed.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  spec.eigvecs = q;

  spec.mu_a = standard_normal(rng, d);
  const double s = scale_unif(rng);
  spec.mu_b = spec.mu_a + s * standard_normal(rng, d);
  return spec;
}

}  // namespace mppca::theory
