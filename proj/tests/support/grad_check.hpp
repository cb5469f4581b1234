#pragma once

#include "mppca/deep_head.hpp"
#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace mppca::gradcheck {

// Flat views of head parameters in (mu, w, log_sigma2) order per head.
inline Vector flatten(const deep::HeadParams& p) {
  const Index d = p.dim();
  Vector out(p.num_classes() * (2 * d + 1));
  Index k = 0;
  for (const auto& h : p.heads) {
    out.segment(k, d) = h.mu;
    out.segment(k + d, d) = h.w;
    out(k + 2 * d) = h.log_sigma2;
    k += 2 * d + 1;
  }
  return out;
}

inline deep::HeadParams unflatten(const Vector& v, Index classes, Index d) {
  deep::HeadParams p;
  for (Index c = 0; c < classes; ++c) {
    const Index k = c * (2 * d + 1);
    p.heads.push_back({v.segment(k, d), v.segment(k + d, d), v(k + 2 * d)});
  }
  return p;
}

struct GradInstance {
  deep::SoftLabelBatch batch;
  deep::HeadParams heads;
  deep::Penalty penalty;
  deep::LikelihoodForm form = deep::LikelihoodForm::Full;
};

inline GradInstance random_grad_instance(Rng& rng) {
  std::uniform_int_distribution<Index> classes(2, 5), dims(2, 8), rows(1, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index c = classes(rng), d = dims(rng), b = rows(rng);
  GradInstance g;
  g.batch.embeddings = standard_normal(rng, b, d);
  g.batch.targets.resize(b, c);
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < c; ++j) g.batch.targets(i, j) = sample_gamma(rng, 1.0, 1.0);
    g.batch.targets.row(i) /= g.batch.targets.row(i).sum();
  }
  for (Index j = 0; j < c; ++j)
    g.heads.heads.push_back({standard_normal(rng, d), standard_normal(rng, d), std::log(0.2 + unit(rng))});
  const double l2 = 0.1 * unit(rng);
  g.penalty = {static_cast<double>(c - 1) * l2 + 0.05 + 0.1 * unit(rng), l2};
  g.form = unit(rng) < 0.5 ? deep::LikelihoodForm::Full : deep::LikelihoodForm::Literal;
  return g;
}

// |analytic - central difference| / max(|analytic|, |numeric|), in the
// Euclidean norm over all parameters.
inline double gradient_relative_error(const GradInstance& g, double h = 1e-5) {
  const Index c = g.heads.num_classes(), d = g.heads.dim();
  const Vector theta = flatten(g.heads);
  const Vector analytic = flatten(deep::loss_gradient(g.batch, g.heads, g.penalty, g.form));
  Vector numeric(theta.size());
  for (Index k = 0; k < theta.size(); ++k) {
    Vector up = theta, down = theta;
    up(k) += h;
    down(k) -= h;
    numeric(k) = (deep::regularized_loss(g.batch, unflatten(up, c, d), g.penalty, g.form) -
                  deep::regularized_loss(g.batch, unflatten(down, c, d), g.penalty, g.form)) /
                 (2 * h);
  }
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-300});
  return (analytic - numeric).norm() / scale;
}

}  // namespace mppca::gradcheck
