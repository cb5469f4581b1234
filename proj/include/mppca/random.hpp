#pragma once

#include "mppca/types.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace mppca {

using Rng = std::mt19937_64;

// Independent generator for (seed, stream); used to give Monte Carlo batches
// and grid cells their own reproducible substreams.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Vector standard_normal(Rng& rng, Index n);
Matrix standard_normal(Rng& rng, Index rows, Index cols);

double sample_gamma(Rng& rng, double shape, double scale);
double sample_beta(Rng& rng, double a, double b);
// Inverse-gamma with density proportional to v^{-shape-1} exp(-scale / v).
double sample_inverse_gamma(Rng& rng, double shape, double scale);

// Draws an index with probability proportional to weights (nonnegative, not
// all zero).
std::size_t sample_categorical(Rng& rng, std::span<const double> weights);

}  // namespace mppca
