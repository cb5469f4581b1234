#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mppca {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Input shapes that disagree (vector length vs model dimension, ragged rows).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A quantity the caller asked for does not exist for this input, e.g. an SNR
// whose residual noise is exactly zero.
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

// Observations stored row-wise; labels are either empty or one per row.
struct Dataset {
  Matrix x;
  std::vector<int> labels;

  Index size() const { return x.rows(); }
  Index dim() const { return x.cols(); }
  bool labeled() const { return !labels.empty(); }
};

// Normalized distribution over K existing categories, optionally followed by a
// "new category" bucket. Values are kept in log space so that comparisons of
// masses close to 0 or 1 stay meaningful.
class Prediction {
 public:
  Prediction() = default;
  // Normalizes unnormalized log scores; the last score is the new-category
  // bucket when has_new is set.
  static Prediction from_log_scores(const Vector& scores, bool has_new);

  Index num_existing() const { return has_new_ ? log_probs_.size() - 1 : log_probs_.size(); }
  bool has_new() const { return has_new_; }

  double prob(Index k) const { return std::exp(log_probs_(k)); }
  double log_prob(Index k) const { return log_probs_(k); }
  double new_mass() const { return has_new_ ? std::exp(log_probs_(log_probs_.size() - 1)) : 0.0; }
  double log_new_mass() const;

  Vector probs() const { return log_probs_.array().exp().matrix(); }
  const Vector& log_probs() const { return log_probs_; }

 private:
  Vector log_probs_;
  bool has_new_ = false;
};

double log_sum_exp(const Vector& v);

}  // namespace mppca
