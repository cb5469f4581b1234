#pragma once

#include "mppca/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mppca::baselines {

// Stored members per category. An empty attention vector means uniform
// weights (all ones).
struct ExemplarStore {
  std::vector<Matrix> exemplars;  // one row per stored member
  double sensitivity = 1.0;
  Vector attention;

  Index dim() const;
  void validate() const;
};

struct PrototypeStore {
  std::vector<Vector> prototypes;
  double sensitivity = 1.0;
  Vector attention;

  Index dim() const;
  void validate() const;
};

// sqrt(sum_i a_i (x_i - y_i)^2); a empty means all ones.
double attention_distance(const Vector& x, const Vector& y, const Vector& attention);

// log sum_{i in c} exp(-sensitivity * d_att(x, x_i)) per category.
Vector exemplar_log_similarity(const Vector& x, const ExemplarStore& store);
// -sensitivity * d_att(x, p_c)^2 per category.
Vector prototype_log_similarity(const Vector& x, const PrototypeStore& store);

Prediction exemplar_predict(const Vector& x, const ExemplarStore& store);
Prediction prototype_predict(const Vector& x, const PrototypeStore& store);

// Weights proportional to the inverse pooled within-category variance of each
// dimension, scaled to sum to d. A dimension with zero variance receives the
// cap of 1000 times the median weight (or, if every dimension is degenerate,
// uniform weights).
Vector fit_attention(const Dataset& data);

// 64 log-spaced candidates over [2^-5, 2^5].
std::vector<double> sensitivity_grid();

// Stores built from labeled data with sensitivity picked by grid search on the
// log-likelihood of the training labels. For exemplars each item is scored
// with itself left out, since its own zero-distance term would otherwise
// favor the largest sensitivity.
ExemplarStore fit_exemplar(const Dataset& data, bool use_attention);
PrototypeStore fit_prototype(const Dataset& data, bool use_attention);

// Category order used by the fitted stores: ascending label values.
std::vector<int> sorted_labels(const Dataset& data);

// Multinomial logistic regression on raw coordinates fitted to soft targets.
class LinearRule {
 public:
  // x: N x d stimuli, targets: N x K probabilities.
  LinearRule(const Matrix& x, const Matrix& targets, double l2 = 1e-6, Index iterations = 500);
  Vector predict(const Vector& x) const;
  const Matrix& weights() const { return weights_; }  // (d + 1) x K, bias row last

 private:
  Matrix weights_;
};

struct ModelPredictions {
  std::string name;
  std::vector<Vector> probs;  // one distribution per stimulus
};

struct ModelMetrics {
  std::string name;
  double expected_accuracy = 0.0;
  double expected_accuracy_se = 0.0;
  double correlation = 0.0;
  double correlation_se = 0.0;
};

// Expected accuracy is the mean over stimuli of sum_c p_model(c) p_ref(c);
// correlation is Pearson over all (stimulus, category) pairs. Standard errors
// come from `resamples` bootstrap draws over stimuli; stimuli are put in a
// canonical order first, so the result does not depend on input order.
ModelMetrics compare_model(const ModelPredictions& model, const std::vector<Vector>& reference,
                           Index resamples = 1000, std::uint64_t seed = 0);

std::vector<ModelMetrics> compare_models(const std::vector<ModelPredictions>& models,
                                         const std::vector<Vector>& reference,
                                         Index resamples = 1000, std::uint64_t seed = 0);

double pearson(const Vector& a, const Vector& b);

}  // namespace mppca::baselines
