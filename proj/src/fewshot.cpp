#include "mppca/fewshot.hpp"

#include <cmath>

namespace mppca::fewshot {

PpcaParams NewCategoryPredictive::as_ppca() const {
  PpcaParams p;
  p.mu = mean;
  p.W = pc;
  p.sigma2 = sigma2;
  return p;
}

double NewCategoryMixture::log_density(const Vector& x) const {
  require(!terms.empty(), "new-category mixture is empty");
  Vector logs(static_cast<Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j) {
    logs(static_cast<Index>(j)) = std::log(weights[j]) + marginal_log_density(x, terms[j].as_ppca());
  }
  return log_sum_exp(logs);
}

NewCategoryMixture new_category_predictive(const Vector& x1, const dpmix::MixtureModel& context) {
  require(context.shared && !context.global_components.empty(),
          "new_category_predictive needs a context with at least one global component");
  require_dim(x1.size(), context.dim(), "new-category observation");
  const std::vector<Index> sizes = context.component_sizes();
  double total = 0.0;
  for (Index s : sizes) total += static_cast<double>(s);
  require(total > 0, "context components have no owners");

  NewCategoryMixture mix;
  const double sigma2 = context.mean_sigma2();
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] == 0) continue;
    mix.weights.push_back(static_cast<double>(sizes[j]) / total);
    mix.terms.push_back({x1, context.global_components[j], sigma2});
  }
  return mix;
}

NewCategoryMixture new_category_predictive_from_prior(const Vector& x1,
                                                      const dpmix::Hyperparams& hyper,
                                                      double sigma2, Index samples,
                                                      std::uint64_t seed) {
  hyper.validate();
  require(samples >= 1, "need at least one prior draw");
  require(sigma2 > 0, "sigma2 must be positive");
  Rng rng = make_rng(seed, 0x70726f72ULL);
  const double scale = 1.0 / std::sqrt(hyper.alpha_nu);
  NewCategoryMixture mix;
  for (Index s = 0; s < samples; ++s) {
    mix.weights.push_back(1.0 / static_cast<double>(samples));
    mix.terms.push_back({x1, scale * standard_normal(rng, x1.size()), sigma2});
  }
  return mix;
}

void SubcategorySpec::validate() const {
  parent.validate();
  require(parent.rank() == 1, "subcategory parent must be rank-1");
  require(p1 >= 0.0 && p1 <= 1.0, "subcategory weight p1 must lie in [0, 1]");
  require(std::isfinite(z_sub), "z_sub must be finite");
  require(sub_sigma2() > 0, "subcategory variance must be positive");
}

Vector SubcategorySpec::center() const { return parent.mu + parent.W.col(0) * z_sub; }

double subcategory_log_density(const Vector& x, const SubcategorySpec& spec) {
  spec.validate();
  require_dim(x.size(), spec.parent.dim(), "subcategory input");
  const double v = spec.sub_sigma2();
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * M_PI * v) + (x - spec.center()).squaredNorm() / v);
}

double subcategory_membership_prob(const Vector& x, const SubcategorySpec& spec) {
  if (spec.p1 == 0.0) return 0.0;
  if (spec.p1 == 1.0) return 1.0;
  const double sub = std::log(spec.p1) + subcategory_log_density(x, spec);
  const double rest = std::log1p(-spec.p1) + marginal_log_density(x, spec.parent);
  return 1.0 / (1.0 + std::exp(rest - sub));
}

}  // namespace mppca::fewshot
