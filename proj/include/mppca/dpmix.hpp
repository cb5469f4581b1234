#pragma once

#include "mppca/ppca.hpp"
#include "mppca/random.hpp"
#include "mppca/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mppca::dpmix {

/// Prior settings of the hierarchical mixture. gamma drives the category-level
/// CRP, gamma_star the CRP over shared loading components. Prototypes are
/// N(0, I/alpha_mu), components N(0, I/alpha_nu), noise variances
/// Inv-Gamma(a_tau, b_tau), and a category loading scatters around its
/// component with variance xi_var.
struct Hyperparams {
  double gamma = 1.0;
  double gamma_star = 1.0;
  double alpha_mu = 1.0;
  double alpha_nu = 1.0;
  double a_tau = 1.0;
  double b_tau = 1.0;
  double xi_var = 0.01;

  void validate() const;
  // xi_var = 0.01 / alpha_nu.
  static Hyperparams with_default_xi(double gamma, double gamma_star, double alpha_mu,
                                     double alpha_nu, double a_tau, double b_tau);
};

/// Finite realization of the mixture. Every category is rank-1 PPCA. When
/// `shared` is set, category c takes its loading from component
/// global_components[ownership[c]]; otherwise loadings are drawn from the base
/// measure independently and the component lists are empty.
struct MixtureModel {
  std::vector<PpcaParams> categories;
  std::vector<Index> counts;
  std::vector<int> labels;  // caller-visible label per category
  std::vector<Vector> global_components;
  std::vector<Index> ownership;
  Hyperparams hyper;
  bool shared = true;

  Index dim() const;
  Index num_categories() const { return static_cast<Index>(categories.size()); }
  // Number of categories owning each component.
  std::vector<Index> component_sizes() const;
  double mean_sigma2() const;
  void validate() const;
};

// ---- Priors -----------------------------------------------------------------

/// Probability of joining each existing category (proportional to its count)
/// followed by the probability of opening a new one (proportional to gamma).
Vector crp_assignment_probs(std::span<const Index> counts, double gamma);

/// Log probability of a partition with the given block sizes under CRP(gamma).
double crp_log_partition_prob(std::span<const Index> counts, double gamma);

/// Block sizes of one sequential CRP run over n customers.
std::vector<Index> sample_crp_counts(Index n, double gamma, Rng& rng);

struct StickBreaking {
  Vector weights;
  double residual = 1.0;  // 1 - sum(weights)
};
/// pi_k = beta_k prod_{l<k} (1 - beta_l).
StickBreaking stick_breaking_weights(const Vector& betas);

// ---- Generative process -----------------------------------------------------

struct Generated {
  Dataset data;       // labels index truth.categories
  MixtureModel truth; // only realized categories/components, relabeled densely
  Vector z;           // latent coordinate of each observation
};

/// Full rollout with both stick-breaking processes truncated at `truncation`
/// (the last stick takes the remaining mass).
Generated generate(const Hyperparams& hyper, Index dim, Index n, Index truncation,
                   std::uint64_t seed);

/// Same draws with the structure fixed: category c is owned by component
/// owner[c] and receives exactly points_per_category observations.
Generated generate_structured(const Hyperparams& hyper, Index dim, const std::vector<Index>& owner,
                              Index points_per_category, std::uint64_t seed);

// ---- Inference --------------------------------------------------------------

/// Top-level CRP mixture over category loadings. Consumes only the category
/// parameters, never observations.
struct TopLevelOptions {
  bool unit_normalize = false;
  Index max_sweeps = 100;
};

struct TopLevelFit {
  std::vector<Index> ownership;
  std::vector<Vector> components;  // posterior means
  std::vector<int> signs;          // +1/-1 applied to each loading
  std::vector<double> objective_trace;
};

/// Deterministic MAP search over ownership and loading signs with the
/// component means integrated out (conjugate Gaussian). The objective is the
/// collapsed log joint log p(u | gamma*) + sum_j log p({s_c w_c : u_c = j});
/// it never decreases across sweeps.
TopLevelFit fit_components(std::span<const PpcaParams> categories, const Hyperparams& hyper,
                           const TopLevelOptions& options = {});

struct FitResult {
  MixtureModel model;
  std::vector<Index> assignments;  // category index per observation
  std::vector<double> objective_trace;
};

struct SupervisedOptions {
  TopLevelOptions top;
  // sigma2 floor relative to the mean per-dimension variance of the category.
  double relative_sigma2_floor = 1e-10;
};

/// Per-category PPCA maximum likelihood (q = 1), then top-level inference over
/// the loadings. Throws if any label has fewer than two observations.
FitResult fit_supervised(const Dataset& data, const Hyperparams& hyper,
                         const SupervisedOptions& options = {});

struct UnsupervisedOptions {
  Index epochs = 50;
  std::uint64_t seed = 0;
  bool share_components = true;
  Index em_steps = 3;
};

/// Joint MAP coordinate ascent over assignments, category parameters and the
/// top-level structure. A seeded greedy sequential pass initializes the
/// partition; each epoch then reassigns every observation (existing category
/// or a new one fitted to the point), takes generalized-EM steps on each
/// category's parameters under its prior, and re-runs the top-level search.
/// The log joint objective is non-decreasing across epochs.
FitResult fit_unsupervised(const Dataset& data, const Hyperparams& hyper,
                           const UnsupervisedOptions& options = {});

/// Log joint used by fit_unsupervised for a given partition and parameters.
double unsupervised_objective(const Dataset& data, const MixtureModel& model,
                              const std::vector<Index>& assignments);

// ---- Prediction -------------------------------------------------------------

struct PredictOptions {
  bool include_new_category = true;
  Index new_category_samples = 64;
  std::uint64_t seed = 0;
};

/// Monte Carlo prior predictive density of an unseen category: parameters are
/// drawn from the base measure (with loadings from the top-level predictive
/// when components are shared) and their densities averaged.
class NewCategoryPrior {
 public:
  NewCategoryPrior(const MixtureModel& model, Index samples, std::uint64_t seed);
  double log_density(const Vector& x) const;

 private:
  std::vector<PpcaDensity> draws_;
};

/// Precomputed category densities for repeated prediction.
class CategoryPredictor {
 public:
  CategoryPredictor(const MixtureModel& model, bool include_base_rate,
                    const PredictOptions& options = {});
  Prediction predict(const Vector& x) const;
  // Unnormalized log scores in Prediction order.
  Vector log_scores(const Vector& x) const;

 private:
  std::vector<PpcaDensity> densities_;
  Vector log_prior_;
  double log_prior_new_ = 0.0;
  bool include_new_;
  std::vector<NewCategoryPrior> new_prior_;
};

/// P(c | x) proportional to the CRP prior mass (or uniform when
/// include_base_rate is false) times the category's marginal density,
/// normalized over existing categories plus the new-category bucket.
Prediction predict_category(const Vector& x, const MixtureModel& model, bool include_base_rate,
                            const PredictOptions& options = {});

struct GeneralizationOptions {
  bool include_base_rate = false;
  bool include_new_category = true;
  Index new_category_samples = 64;
  std::uint64_t seed = 0;
};

/// Probability that a stimulus y joins the one-observation category opened by
/// `anchor`, against every existing category and (optionally) a further new
/// category.
class Generalizer {
 public:
  Generalizer(const MixtureModel& model, const Vector& anchor,
              const GeneralizationOptions& options = {});
  double operator()(const Vector& y) const;

 private:
  struct AnchorTerm {
    double log_weight;
    PpcaDensity density;
  };
  std::vector<AnchorTerm> anchor_terms_;
  CategoryPredictor alternatives_;
};

/// One probability per row of grid.
Vector generalization_grid(const MixtureModel& model, const Vector& anchor, const Matrix& grid,
                           const GeneralizationOptions& options = {});

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const Index> a, std::span<const Index> b);

}  // namespace mppca::dpmix
