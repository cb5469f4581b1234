#pragma once

#include "mppca/dpmix.hpp"
#include "mppca/ppca.hpp"
#include "mppca/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mppca::fewshot {

/// A category known from a single observation: N(mean, sigma2 I + pc pc^T).
struct NewCategoryPredictive {
  Vector mean;
  Vector pc;
  double sigma2 = 1.0;

  PpcaParams as_ppca() const;
};

/// Mixture over candidate loading directions; weights sum to one.
struct NewCategoryMixture {
  std::vector<double> weights;
  std::vector<NewCategoryPredictive> terms;

  double log_density(const Vector& x) const;
};

/// One term per global component of the context, weighted by the share of
/// context categories that own it. sigma2 is the mean noise variance of the
/// context categories. Throws when the context has no components.
NewCategoryMixture new_category_predictive(const Vector& x1, const dpmix::MixtureModel& context);

/// Variant for models without shared components: loadings are drawn from the
/// base measure N(0, I / alpha_nu), equally weighted.
NewCategoryMixture new_category_predictive_from_prior(const Vector& x1,
                                                      const dpmix::Hyperparams& hyper,
                                                      double sigma2, Index samples,
                                                      std::uint64_t seed);

/// A subcategory inside a rank-1 parent, located at latent coordinate z_sub on
/// the parent's principal direction. p1 is the probability that a member of
/// the parent falls in the subcategory. sigma2 defaults to the parent's.
struct SubcategorySpec {
  PpcaParams parent;
  double z_sub = 0.0;
  double p1 = 0.5;
  std::optional<double> sigma2;

  void validate() const;
  Vector center() const;
  double sub_sigma2() const { return sigma2.value_or(parent.sigma2); }
};

/// log N(x | mu + w z_sub, sigma2 I).
double subcategory_log_density(const Vector& x, const SubcategorySpec& spec);

/// Posterior probability that x belongs to the subcategory rather than to the
/// remainder of the parent: the parent's latent coordinate is s z_sub +
/// (1 - s) z2 with s ~ Bernoulli(p1) and z2 ~ N(0, 1), so the remainder keeps
/// the parent's marginal density.
double subcategory_membership_prob(const Vector& x, const SubcategorySpec& spec);

}  // namespace mppca::fewshot
