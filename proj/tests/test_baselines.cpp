#include "mppca/baselines.hpp"
#include "mppca/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace mppca;
using namespace mppca::baselines;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

// Two categories whose within-category deviations are +-1 on x and +-2 on y.
Dataset cross_shaped() {
  Dataset d;
  d.x.resize(8, 2);
  const double dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 2, -2};
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i) {
      d.x.row(c * 4 + i) << 10.0 * c + dx[i], dy[i];
      d.labels.push_back(c == 0 ? 7 : 3);
    }
  return d;
}

Dataset gaussian_blobs(std::uint64_t seed, Index per) {
  Rng rng = make_rng(seed);
  Dataset d;
  d.x.resize(2 * per, 2);
  for (Index i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    d.x.row(i) = (v2(c ? 2.0 : -2.0, 0.0) + standard_normal(rng, 2)).transpose();
    d.labels.push_back(c);
  }
  return d;
}

}  // namespace

TEST(Distance, AttentionWeighted) {
  EXPECT_DOUBLE_EQ(attention_distance(v2(0, 0), v2(3, 4), Vector()), 5.0);
  EXPECT_DOUBLE_EQ(attention_distance(v2(0, 0), v2(3, 4), v2(1, 0)), 3.0);
  EXPECT_DOUBLE_EQ(attention_distance(v2(1, 1), v2(3, 4), v2(0.25, 4)), std::sqrt(1.0 + 36.0));
  EXPECT_THROW(attention_distance(v2(0, 0), Vector::Zero(3), Vector()), DimensionError);
}

TEST(Exemplar, SummedSimilarity) {
  ExemplarStore store;
  store.exemplars = {(Matrix(2, 2) << 0, 0, 1, 0).finished(), (Matrix(1, 2) << 3, 0).finished()};
  store.sensitivity = 2.0;
  const Vector s = exemplar_log_similarity(v2(0, 0), store);
  EXPECT_NEAR(s(0), std::log(1.0 + std::exp(-2.0)), 1e-14);
  EXPECT_NEAR(s(1), -6.0, 1e-14);
  const auto p = exemplar_predict(v2(0, 0), store);
  EXPECT_FALSE(p.has_new());
  EXPECT_NEAR(p.prob(0), (1 + std::exp(-2.0)) / (1 + std::exp(-2.0) + std::exp(-6.0)), 1e-14);
}

TEST(Prototype, SquaredDistanceScores) {
  PrototypeStore store{{v2(0, 0), v2(2, 0)}, 0.5, Vector()};
  const auto p = prototype_predict(v2(1, 0), store);
  EXPECT_NEAR(p.prob(0), 0.5, 1e-15);
  const Vector s = prototype_log_similarity(v2(0, 1), store);
  EXPECT_DOUBLE_EQ(s(0), -0.5);
  EXPECT_DOUBLE_EQ(s(1), -2.5);
}

TEST(Attention, InverseWithinVariance) {
  const Vector a = fit_attention(cross_shaped());
  EXPECT_NEAR(a(0), 1.6, 1e-12);
  EXPECT_NEAR(a(1), 0.4, 1e-12);
}

TEST(Attention, DegenerateDimensionIsCapped) {
  Dataset d = cross_shaped();
  d.x.col(1).setConstant(0.0);
  const Vector a = fit_attention(d);
  EXPECT_TRUE(a.allFinite());
  EXPECT_NEAR(a.sum(), 2.0, 1e-12);
  EXPECT_GT(a(1), a(0));
}

TEST(SensitivityGrid, LogSpaced) {
  const auto g = sensitivity_grid();
  ASSERT_EQ(g.size(), 64u);
  EXPECT_NEAR(g.front(), 1.0 / 32, 1e-15);
  EXPECT_NEAR(g.back(), 32.0, 1e-12);
  for (std::size_t i = 2; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], g[1] / g[0], 1e-12);
}

TEST(Fit, StoresFollowSortedLabels) {
  const Dataset d = cross_shaped();
  EXPECT_EQ(sorted_labels(d), (std::vector<int>{3, 7}));
  const auto proto = fit_prototype(d, false);
  EXPECT_EQ(proto.prototypes[0], v2(10, 0));
  EXPECT_EQ(proto.prototypes[1], v2(0, 0));
  const auto ex = fit_exemplar(d, true);
  EXPECT_EQ(ex.exemplars[0].rows(), 4);
  EXPECT_NEAR(ex.attention(0), 1.6, 1e-12);
}

TEST(Fit, SensitivityMaximizesTrainingLikelihood) {
  const Dataset d = gaussian_blobs(3, 40);
  const auto fitted = fit_prototype(d, false);
  auto loglik = [&](double s) {
    PrototypeStore st = fitted;
    st.sensitivity = s;
    double total = 0;
    for (Index i = 0; i < d.size(); ++i)
      total += prototype_predict(d.x.row(i).transpose(), st).log_prob(d.labels[static_cast<std::size_t>(i)]);
    return total;
  };
  for (double s : sensitivity_grid()) EXPECT_GE(loglik(fitted.sensitivity), loglik(s) - 1e-9);
}

TEST(Fit, ExemplarSensitivityIsInteriorForOverlappingCategories) {
  const auto ex = fit_exemplar(gaussian_blobs(4, 40), false);
  EXPECT_LT(ex.sensitivity, 32.0);
  EXPECT_GT(ex.sensitivity, 1.0 / 32);
}

TEST(LinearRule, RecoversLogisticTargets) {
  Rng rng = make_rng(5);
  const Matrix x = standard_normal(rng, 60, 2);
  Matrix t(60, 2);
  for (Index i = 0; i < 60; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(1.5 * x(i, 0) - x(i, 1) + 0.3)));
    t.row(i) << p, 1 - p;
  }
  const LinearRule rule(x, t, 1e-8, 2000);
  for (Index i = 0; i < 60; ++i) EXPECT_NEAR(rule.predict(x.row(i).transpose())(0), t(i, 0), 1e-3);
}

TEST(Compare, SpreadsheetValues) {
  const std::vector<Vector> model = {v2(.7, .3), v2(.2, .8), v2(.5, .5), v2(.9, .1)};
  const std::vector<Vector> ref = {v2(.6, .4), v2(.1, .9), v2(.3, .7), v2(1, 0)};
  const auto m = compare_model({"m", model}, ref, 200, 1);
  EXPECT_NEAR(m.expected_accuracy, 0.67, 1e-12);
  EXPECT_NEAR(m.correlation, 0.9308956529287689, 1e-12);
  EXPECT_GT(m.expected_accuracy_se, 0.0);
}

TEST(Compare, OrderInvariant) {
  const std::vector<Vector> model = {v2(.7, .3), v2(.2, .8), v2(.5, .5), v2(.9, .1), v2(.4, .6)};
  const std::vector<Vector> ref = {v2(.6, .4), v2(.1, .9), v2(.3, .7), v2(1, 0), v2(.5, .5)};
  std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  std::vector<Vector> pm, pr;
  for (auto i : perm) {
    pm.push_back(model[i]);
    pr.push_back(ref[i]);
  }
  const auto a = compare_models({{"m", model}}, ref, 300, 2)[0];
  const auto b = compare_models({{"m", pm}}, pr, 300, 2)[0];
  EXPECT_DOUBLE_EQ(a.expected_accuracy, b.expected_accuracy);
  EXPECT_DOUBLE_EQ(a.expected_accuracy_se, b.expected_accuracy_se);
  EXPECT_DOUBLE_EQ(a.correlation_se, b.correlation_se);
}

TEST(Compare, LengthMismatchNamesModel) {
  try {
    compare_model({"short", {v2(.5, .5)}}, {v2(.5, .5), v2(1, 0)});
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("short"), std::string::npos);
  }
}

TEST(Pearson, PerfectAndAnti) {
  const Vector a = (Vector(3) << 1, 2, 3).finished();
  EXPECT_NEAR(pearson(a, 2 * a), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, -a), -1.0, 1e-15);
}
