#pragma once

#include "mppca/random.hpp"
#include "mppca/types.hpp"

#include <cstdint>

namespace mppca::theory {

/// Two categories with a shared covariance U diag(eigvals) U^T.
struct TwoCategorySpec {
  Vector mu_a;
  Vector mu_b;
  Vector eigvals;  // descending, positive
  Matrix eigvecs;  // orthonormal columns

  Index dim() const { return mu_a.size(); }
  Matrix covariance() const;
  void validate() const;
};

/// r_i = ((mu_a - mu_b) . u_i)^2 and r_ab = |mu_a - mu_b|^2 = sum_i r_i.
struct InfoDecomposition {
  double r_ab = 0.0;
  Vector r;
};

InfoDecomposition info_decomposition(const TwoCategorySpec& spec);

/// Moments of the discrimination index
///   alpha_q = |(I-P)(x - mu_b)|^2 - |(I-P)(x - mu_a)|^2,  x ~ N(mu_a, Sigma),
/// with P the projector onto the top q eigenvectors:
///   E[alpha]   = sum_{i>q} r_i
///   Var[alpha] = 4 sum_{i>q} lambda_i r_i
///   SNR        = E^2 / Var.
struct SnrTerms {
  double mean = 0.0;
  double variance = 0.0;
  double snr = 0.0;
  // Set when sum_{i>q} lambda_i r_i = 0: no discriminative information is left
  // in the residual, alpha is identically 0 and all three values are 0.
  bool degenerate = false;
};

/// Valid for 0 <= q < d.
SnrTerms snr_analytic(Index q, const InfoDecomposition& decomp, const Vector& eigvals);

/// Dimension-dropping criterion
///   lambda_{q+1} < (r_{q+1}/S + 2) * (T / S),
///   S = sum_{i>=q+2} r_i,  T = sum_{i>=q+2} r_i lambda_i   (1-based indices).
///
/// Orientation: whenever r_{q+1} > 0 the criterion holds exactly when
/// SNR_q > SNR_{q+1}, i.e. when the residual that still contains direction q+1
/// (that direction left out of the subspace representation) has the higher SNR.
/// `theory-check` re-establishes this orientation empirically. When
/// r_{q+1} = 0 both SNRs coincide and the truth value carries no ordering.
///
/// Valid for 0 <= q <= d-2; throws DegenerateError when S = 0.
struct DropCondition {
  double lhs = 0.0;  // lambda_{q+1}
  double rhs = 0.0;
  bool holds = false;
};
DropCondition drop_condition_terms(Index q, const InfoDecomposition& decomp, const Vector& eigvals);
bool drop_condition(Index q, const InfoDecomposition& decomp, const Vector& eigvals);

/// One-sided Chebyshev bound SNR / (1 + SNR) on P(alpha > 0).
double accuracy_lower_bound(double snr);

/// Squared distance from x to the affine subspace mu + span(u_1..u_q).
double projected_sq_distance(const Vector& x, const Vector& mu, const Matrix& eigvecs, Index q);

/// p(a | x) = 1 / (1 + exp(-(tau_q(x, mu_b) - tau_q(x, mu_a)))) in the
/// sigma^2 -> 0 (PCA) limit, for 0 <= q < d.
double pca_classifier_prob(const Vector& x, const TwoCategorySpec& spec, Index q);

/// Monte Carlo estimates for alpha_q with x ~ N(mu_a, Sigma), computed with a
/// dense projector so that the estimate is independent of the analytic route.
struct AlphaMonteCarlo {
  Index samples = 0;
  double mean = 0.0;
  double mean_se = 0.0;
  double variance = 0.0;
  double variance_se = 0.0;
  double accuracy = 0.0;  // fraction with alpha > 0
  double accuracy_se = 0.0;
};

/// Samples are drawn in fixed-size batches, each from its own (seed, batch)
/// substream, so results do not depend on how batches are scheduled.
AlphaMonteCarlo monte_carlo_alpha(const TwoCategorySpec& spec, Index q, Index samples,
                                  std::uint64_t seed);

/// Random configuration: eigenvalues log-uniform in [0.1, 10] sorted
/// descending, Haar-distributed eigenvectors, prototypes N(0, I) and
/// mu_b = mu_a + N(0, s^2 I) with s uniform in [0.5, 2].
TwoCategorySpec random_spec(Rng& rng, Index d);

}  // namespace mppca::theory
