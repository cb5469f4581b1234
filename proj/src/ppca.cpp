#include "mppca/ppca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mppca {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

}  // namespace

void PpcaParams::validate() const {
  require(mu.size() >= 1, "PPCA dimension must be at least 1");
  require_dim(W.rows(), mu.size(), "PPCA loading rows");
  require(W.cols() <= mu.size(), "PPCA rank must not exceed the dimension");
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument("PPCA noise variance must be positive and finite, got " +
                                std::to_string(sigma2));
  }
  require(mu.allFinite() && W.allFinite(), "PPCA parameters must be finite");
}

Matrix covariance(const PpcaParams& params) {
  Matrix c = params.W * params.W.transpose();
  c.diagonal().array() += params.sigma2;
  return c;
}

PpcaDensity::PpcaDensity(const PpcaParams& params) : params_(params) {
  params_.validate();
  const Index d = params_.dim();
  const Index q = params_.rank();
  log_det_ = static_cast<double>(d - q) * std::log(params_.sigma2);
  if (q > 0) {
    Matrix m = params_.W.transpose() * params_.W;
    m.diagonal().array() += params_.sigma2;
    m_llt_.compute(m);
    const Matrix& l = m_llt_.matrixL();
    log_det_ += 2.0 * l.diagonal().array().log().sum();
  }
}

double PpcaDensity::log_density(const Eigen::Ref<const Vector>& x) const {
  const Index d = params_.dim();
  require_dim(x.size(), d, "marginal_log_density input");
  const Vector r = x - params_.mu;
  double quad;
  if (params_.rank() == 0) {
    quad = r.squaredNorm() / params_.sigma2;
  } else {
    const Vector u = m_llt_.solve(params_.W.transpose() * r);
    quad = ((r - params_.W * u).squaredNorm() + params_.sigma2 * u.squaredNorm()) / params_.sigma2;
  }
  return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det_ + quad);
}

Vector PpcaDensity::log_density_rows(const Matrix& x) const {
  require_dim(x.cols(), params_.dim(), "marginal_log_density input");
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = log_density(x.row(i).transpose());
  return out;
}

double marginal_log_density(const Vector& x, const PpcaParams& params) {
  require_dim(x.size(), params.dim(), "marginal_log_density input");
  return PpcaDensity(params).log_density(x);
}

LatentPosterior latent_posterior(const Vector& x, const PpcaParams& params) {
  params.validate();
  require_dim(x.size(), params.dim(), "latent_posterior input");
  const Index q = params.rank();
  Matrix m = params.W.transpose() * params.W;
  m.diagonal().array() += params.sigma2;
  const Eigen::LLT<Matrix> llt(m);
  LatentPosterior post;
  post.mean = llt.solve(params.W.transpose() * (x - params.mu));
  post.cov = params.sigma2 * llt.solve(Matrix::Identity(q, q));
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  return post;
}

SymmetricEigen symmetric_eigen_descending(const Matrix& symmetric) {
  require(symmetric.rows() == symmetric.cols(), "eigendecomposition needs a square matrix");
  const Index d = symmetric.rows();
  const Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric);
  require(solver.info() == Eigen::Success, "symmetric eigendecomposition failed");

  Matrix vecs = solver.eigenvectors();
  const Vector& vals = solver.eigenvalues();
  const double zero_tol = 1e-12;
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < d; ++i) {
      if (std::abs(vecs(i, j)) > zero_tol) {
        if (vecs(i, j) < 0) vecs.col(j) *= -1.0;
        break;
      }
    }
  }

  const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
  const double tie_tol = 1e-12 * scale;
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (std::abs(vals(a) - vals(b)) > tie_tol) return vals(a) > vals(b);
    for (Index i = 0; i < d; ++i) {
      if (std::abs(vecs(i, a) - vecs(i, b)) > zero_tol) return vecs(i, a) > vecs(i, b);
    }
    return false;
  });

  SymmetricEigen out{Vector(d), Matrix(d, d)};
  for (Index k = 0; k < d; ++k) {
    out.values(k) = vals(order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = vecs.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

Matrix sample_covariance(const Matrix& data) {
  require(data.rows() >= 2, "sample covariance needs at least two observations");
  const Vector mean = data.colwise().mean();
  const Matrix centered = data.rowwise() - mean.transpose();
  Matrix s = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  return 0.5 * (s + s.transpose());
}

PpcaParams fit_mle(const Matrix& data, Index q) {
  const Index n = data.rows();
  const Index d = data.cols();
  require(n >= 2, "fit_mle needs at least two observations, got " + std::to_string(n));
  require(d >= 1, "fit_mle needs at least one dimension");
  require(q >= 0 && q < d, "fit_mle needs 0 <= q < d, got q=" + std::to_string(q) +
                               " with d=" + std::to_string(d));
  require(data.allFinite(), "fit_mle data must be finite");

  const Matrix s = sample_covariance(data);
  if (!(s.diagonal().maxCoeff() > 0)) {
    throw DegenerateError("fit_mle: data has zero variance in every dimension");
  }
  const SymmetricEigen eig = symmetric_eigen_descending(s);

  // Eigenvalues of a PSD matrix can come back as tiny negatives.
  const Vector lambda = eig.values.cwiseMax(0.0);
  PpcaParams p;
  p.mu = data.colwise().mean();
  p.sigma2 = lambda.tail(d - q).sum() / static_cast<double>(d - q);
  p.W = Matrix(d, q);
  for (Index k = 0; k < q; ++k) {
    p.W.col(k) = eig.vectors.col(k) * std::sqrt(std::max(lambda(k) - p.sigma2, 0.0));
  }
  return p;
}

Matrix sample(const PpcaParams& params, Index n, Rng& rng) {
  params.validate();
  require(n >= 1, "sample count must be positive");
  const Index d = params.dim();
  const Index q = params.rank();
  const double sigma = std::sqrt(params.sigma2);
  Matrix out(n, d);
  for (Index i = 0; i < n; ++i) {
    const Vector z = standard_normal(rng, q);
    const Vector eps = standard_normal(rng, d);
    out.row(i) = (params.mu + params.W * z + sigma * eps).transpose();
  }
  return out;
}

Matrix sample(const PpcaParams& params, Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return sample(params, n, rng);
}

}  // namespace mppca
