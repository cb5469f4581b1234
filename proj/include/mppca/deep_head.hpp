#pragma once

#include "mppca/types.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mppca::deep {

// Rank-1 PPCA head over an embedding: N(mu, w w^T + exp(log_sigma2) I).
struct Head {
  Vector mu;
  Vector w;
  double log_sigma2 = 0.0;
};

struct HeadParams {
  std::vector<Head> heads;

  Index dim() const;
  Index num_classes() const { return static_cast<Index>(heads.size()); }
  void validate() const;
};

// Embeddings (B x d) with soft targets (B x C), rows summing to one.
struct SoftLabelBatch {
  Matrix embeddings;
  Matrix targets;

  Index size() const { return embeddings.rows(); }
  void validate() const;
  SoftLabelBatch subset(const std::vector<Index>& rows) const;
};

// Full: normalized Gaussian log-density.
// Literal: -log(w^T w + s) - Q / 2, the proportional form that drops the
// (d - 1) log s term, the factor 1/2 on the determinant and the constant.
enum class LikelihoodForm { Full, Literal };

// B x C matrix of per-head log-likelihoods.
Matrix head_log_likelihoods(const Matrix& embeddings, const HeadParams& heads,
                            LikelihoodForm form = LikelihoodForm::Full);

// lambda1 sum_j |theta_j|^2 - lambda2 sum_{j != k} theta_j . theta_k with
// theta_j = (mu_j, w_j). Requires lambda1 > (C - 1) lambda2 >= 0, except that
// lambda1 = lambda2 = 0 switches the penalty off.
struct Penalty {
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  void validate(Index num_classes) const;
  // lambda1 = C lambda2.
  static Penalty proportional(double lambda2, Index num_classes);
};

double penalty_value(const HeadParams& heads, const Penalty& penalty);

// Mean softmax cross-entropy plus the penalty.
double regularized_loss(const SoftLabelBatch& batch, const HeadParams& heads, const Penalty& penalty,
                        LikelihoodForm form = LikelihoodForm::Full);

// Analytic gradient in the shape of HeadParams (log_sigma2 holds d/d log s).
HeadParams loss_gradient(const SoftLabelBatch& batch, const HeadParams& heads, const Penalty& penalty,
                         LikelihoodForm form = LikelihoodForm::Full);

struct TrainOptions {
  Index epochs = 40;
  Index batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  Penalty penalty;
  LikelihoodForm form = LikelihoodForm::Full;
};

struct TrainResult {
  HeadParams heads;
  std::vector<double> train_loss;       // full-data loss after each epoch
  std::vector<double> validation_loss;  // empty without validation data
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

// Target-weighted class means, loadings of norm 0.01 in seeded random
// directions and log_sigma2 at the mean per-dimension variance.
HeadParams init_heads(const SoftLabelBatch& data, std::uint64_t seed);

// Minibatch gradient descent with momentum over seeded shuffles. Throws
// TrainingDiverged when a loss becomes non-finite.
TrainResult train(const SoftLabelBatch& data, const HeadParams& init, const TrainOptions& options,
                  const SoftLabelBatch* validation = nullptr);

// Deterministic train/validation split; returns (train rows, validation rows).
std::pair<std::vector<Index>, std::vector<Index>> split_indices(Index n, double validation_fraction,
                                                                std::uint64_t seed);
// Fold id in [0, k) per row, balanced and seeded.
std::vector<Index> kfold_assignment(Index n, Index k, std::uint64_t seed);

// Fraction of rows whose argmax head matches the argmax target.
double accuracy(const SoftLabelBatch& data, const HeadParams& heads,
                LikelihoodForm form = LikelihoodForm::Full);

// Dense covariance of each head.
std::vector<Matrix> head_covariances(const HeadParams& heads);

// Descending eigenvalues divided by the trace, per matrix. Throws on
// non-symmetric input.
std::vector<Vector> spectrum_report(const std::vector<Matrix>& covariances);

}  // namespace mppca::deep
