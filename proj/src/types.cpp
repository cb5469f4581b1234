#include "mppca/types.hpp"

#include <cmath>
#include <limits>

namespace mppca {

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Prediction Prediction::from_log_scores(const Vector& scores, bool has_new) {
  require(scores.size() > (has_new ? 1 : 0), "prediction needs at least one existing category");
  const double norm = log_sum_exp(scores);
  require(std::isfinite(norm), "prediction scores must contain a finite value");
  Prediction p;
  p.log_probs_ = scores.array() - norm;
  p.has_new_ = has_new;
  return p;
}

double Prediction::log_new_mass() const {
  return has_new_ ? log_probs_(log_probs_.size() - 1) : -std::numeric_limits<double>::infinity();
}

}  // namespace mppca
