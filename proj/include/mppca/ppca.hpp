#pragma once

#include "mppca/random.hpp"
#include "mppca/types.hpp"

#include <cstdint>

namespace mppca {

/// One category represented by probabilistic PCA: x = W z + mu + eps with
/// z ~ N(0, I_q) and eps ~ N(0, sigma2 I_d). Columns of W are the directions
/// along which the category generalizes strongly.
struct PpcaParams {
  Vector mu;
  Matrix W;
  double sigma2 = 1.0;

  Index dim() const { return mu.size(); }
  Index rank() const { return W.cols(); }

  // Throws unless shapes agree and sigma2 is positive and finite.
  void validate() const;
};

struct LatentPosterior {
  Vector mean;
  Matrix cov;
};

/// Dense covariance W W^T + sigma2 I.
Matrix covariance(const PpcaParams& params);

/// Low-rank evaluator of the marginal density N(x | mu, W W^T + sigma2 I).
///
/// The q x q matrix M = W^T W + sigma2 I is factored once; each evaluation
/// then costs O(d q) via
///   log|C|      = (d - q) log sigma2 + log|M|
///   r^T C^-1 r  = (|r - W u|^2 + sigma2 |u|^2) / sigma2,  u = M^-1 W^T r
/// where the second form avoids the cancellation of |r|^2 - r^T W M^-1 W^T r.
class PpcaDensity {
 public:
  explicit PpcaDensity(const PpcaParams& params);

  double log_density(const Eigen::Ref<const Vector>& x) const;
  // One value per row of x.
  Vector log_density_rows(const Matrix& x) const;

  const PpcaParams& params() const { return params_; }
  double log_det_cov() const { return log_det_; }

 private:
  PpcaParams params_;
  Eigen::LLT<Matrix> m_llt_;
  double log_det_ = 0.0;
};

double marginal_log_density(const Vector& x, const PpcaParams& params);

LatentPosterior latent_posterior(const Vector& x, const PpcaParams& params);

/// Closed-form maximum-likelihood PPCA fit with q retained directions.
///
/// The sample covariance uses the unbiased N-1 divisor. sigma2 is the mean of
/// the d-q discarded eigenvalues and W = U_q (Lambda_q - sigma2 I)^{1/2}, with
/// negative differences clamped to zero. For rank-deficient data the returned
/// sigma2 can be exactly 0; such parameters are rejected by the density
/// functions and callers that need a density must floor sigma2.
PpcaParams fit_mle(const Matrix& data, Index q);

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order. Each eigenvector is sign-normalized so its first nonzero entry is
/// positive; equal eigenvalues are ordered by lexicographically larger
/// eigenvector first.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};
SymmetricEigen symmetric_eigen_descending(const Matrix& symmetric);

/// Sample covariance with divisor N-1.
Matrix sample_covariance(const Matrix& data);

/// n i.i.d. draws, one per row.
Matrix sample(const PpcaParams& params, Index n, Rng& rng);
Matrix sample(const PpcaParams& params, Index n, std::uint64_t seed);

}  // namespace mppca
