#include "mppca/random.hpp"

#include <numeric>

namespace mppca {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d707063u};
  return Rng(seq);
}

Vector standard_normal(Rng& rng, Index n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

Matrix standard_normal(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  // Row-major fill so that a matrix of n draws matches n successive vectors.
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

double sample_gamma(Rng& rng, double shape, double scale) {
  require(shape > 0 && scale > 0, "gamma parameters must be positive");
  std::gamma_distribution<double> gamma(shape, scale);
  return gamma(rng);
}

double sample_beta(Rng& rng, double a, double b) {
  const double x = sample_gamma(rng, a, 1.0);
  const double y = sample_gamma(rng, b, 1.0);
  return x / (x + y);
}

double sample_inverse_gamma(Rng& rng, double shape, double scale) {
  return 1.0 / sample_gamma(rng, shape, 1.0 / scale);
}

std::size_t sample_categorical(Rng& rng, std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0, "categorical weights must have positive mass");
  std::uniform_real_distribution<double> unif(0.0, total);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  // Rounding can leave u == total; return the last index with positive weight.
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0) return k;
  return weights.size() - 1;
}

}  // namespace mppca
