#include "mppca/contour.hpp"
#include "mppca/dpmix.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace mppca;
using namespace mppca::dpmix;

namespace {

// Points along `axis` (major sd) around each center, minor sd across.
Dataset elongated_clusters(const std::vector<Vector>& centers, const std::vector<int>& axes, Index per,
                           double major, double minor, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Dataset d;
  d.x.resize(per * static_cast<Index>(centers.size()), 2);
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (Index i = 0; i < per; ++i) {
      const Vector z = standard_normal(rng, 2);
      Vector sd(2);
      sd << (axes[c] == 0 ? major : minor), (axes[c] == 0 ? minor : major);
      d.x.row(static_cast<Index>(c) * per + i) = (centers[c] + sd.cwiseProduct(z)).transpose();
      d.labels.push_back(static_cast<int>(c));
    }
  return d;
}

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

double angle_to_deg(const Vector& v, const Vector& axis) {
  return std::acos(std::min(1.0, std::abs(v.normalized().dot(axis.normalized())))) * 180.0 / M_PI;
}

}  // namespace

TEST(Crp, AssignmentProbabilities) {
  const std::vector<Index> counts = {3, 1};
  const Vector p = crp_assignment_probs(counts, 1.0);
  ASSERT_EQ(p.size(), 3);
  EXPECT_DOUBLE_EQ(p(0), 0.6);
  EXPECT_DOUBLE_EQ(p(1), 0.2);
  EXPECT_DOUBLE_EQ(p(2), 0.2);
  const Vector first = crp_assignment_probs({}, 2.0);
  ASSERT_EQ(first.size(), 1);
  EXPECT_DOUBLE_EQ(first(0), 1.0);
}

TEST(Crp, PermutationEquivariant) {
  const std::vector<Index> a = {5, 2, 7}, b = {7, 5, 2};
  const Vector pa = crp_assignment_probs(a, 1.5), pb = crp_assignment_probs(b, 1.5);
  EXPECT_NEAR(pa.sum(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(pa(0), pb(1));
  EXPECT_DOUBLE_EQ(pa(1), pb(2));
  EXPECT_DOUBLE_EQ(pa(2), pb(0));
  EXPECT_DOUBLE_EQ(pa(3), pb(3));
}

TEST(Crp, PartitionProbabilitiesSumToOne) {
  // Set partitions of 3 items: {3}, three of type {2,1}, {1,1,1}.
  for (double g : {0.5, 1.0, 3.0}) {
    const double total = std::exp(crp_log_partition_prob(std::vector<Index>{3}, g)) +
                         3.0 * std::exp(crp_log_partition_prob(std::vector<Index>{2, 1}, g)) +
                         std::exp(crp_log_partition_prob(std::vector<Index>{1, 1, 1}, g));
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Crp, MeanClusterCount) {
  Rng rng = make_rng(1);
  double total = 0;
  const int runs = 20000;
  for (int r = 0; r < runs; ++r) total += static_cast<double>(sample_crp_counts(50, 1.0, rng).size());
  EXPECT_NEAR(total / runs, 4.499205338329423, 0.02 * 4.5);
}

TEST(StickBreaking, GeometricHalving) {
  const auto s = stick_breaking_weights(Vector::Constant(3, 0.5));
  EXPECT_DOUBLE_EQ(s.weights(0), 0.5);
  EXPECT_DOUBLE_EQ(s.weights(1), 0.25);
  EXPECT_DOUBLE_EQ(s.weights(2), 0.125);
  EXPECT_DOUBLE_EQ(s.residual, 0.125);
}

TEST(StickBreaking, ConcentrationLimit) {
  const auto s = stick_breaking_weights(Vector::Constant(4, 1.0 - 1e-9));
  EXPECT_NEAR(s.weights(0), 1.0, 1e-8);
  EXPECT_LT(s.weights.sum(), 1.0 + 1e-15);
}

TEST(StickBreaking, FirstWeightMean) {
  Rng rng = make_rng(2);
  double total = 0;
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) {
    Vector b(5);
    for (Index k = 0; k < 5; ++k) b(k) = sample_beta(rng, 1.0, 1.0);
    total += stick_breaking_weights(b).weights(0);
  }
  EXPECT_NEAR(total / draws, 0.5, 0.005);
}

TEST(Generate, DeterministicAndConsistent) {
  Hyperparams h;
  const auto a = generate(h, 3, 200, 20, 5);
  const auto b = generate(h, 3, 200, 20, 5);
  EXPECT_EQ(a.data.x, b.data.x);
  EXPECT_EQ(a.data.labels, b.data.labels);
  a.truth.validate();
  EXPECT_EQ(std::accumulate(a.truth.counts.begin(), a.truth.counts.end(), Index{0}), 200);
}

TEST(Generate, ConcentratedPriorGivesLinesThroughOrigin) {
  Hyperparams h;
  h.alpha_mu = 1e8;
  h.a_tau = 1000;
  h.b_tau = 1e-3;  // sigma2 around 1e-6
  const auto g = generate(h, 2, 300, 10, 3);
  for (Index i = 0; i < g.data.size(); ++i) {
    const auto& cat = g.truth.categories[static_cast<std::size_t>(g.data.labels[static_cast<std::size_t>(i)])];
    const Vector x = g.data.x.row(i).transpose();
    const Vector u = cat.W.col(0).normalized();
    EXPECT_LT((x - u * u.dot(x)).norm(), 0.02);
  }
}

TEST(FitSupervised, SharedAxisGivesOneComponent) {
  const Dataset d = elongated_clusters({v2(-5, 0), v2(5, 0)}, {1, 1}, 300, 2.0, 0.2, 11);
  const auto fit = fit_supervised(d, Hyperparams{});
  ASSERT_EQ(fit.model.global_components.size(), 1u);
  EXPECT_LT(angle_to_deg(fit.model.global_components[0], v2(0, 1)), 5.0);
}

TEST(FitSupervised, TwoAxesGiveTwoComponents) {
  const Dataset d = elongated_clusters({v2(-6, 0), v2(6, 0), v2(0, 6), v2(0, -6)}, {0, 0, 1, 1}, 300, 2.0, 0.2, 12);
  const auto fit = fit_supervised(d, Hyperparams{});
  ASSERT_EQ(fit.model.global_components.size(), 2u);
  const auto& o = fit.model.ownership;
  EXPECT_EQ(o[0], o[1]);
  EXPECT_EQ(o[2], o[3]);
  EXPECT_NE(o[0], o[2]);
  for (std::size_t j = 1; j < fit.objective_trace.size(); ++j)
    EXPECT_GE(fit.objective_trace[j], fit.objective_trace[j - 1] - 1e-9);
}

TEST(FitSupervised, SingleCategoryShrinks) {
  const Dataset d = elongated_clusters({v2(1, 1)}, {0}, 200, 1.5, 0.3, 13);
  const auto fit = fit_supervised(d, Hyperparams{});
  ASSERT_EQ(fit.model.global_components.size(), 1u);
  EXPECT_LE(fit.model.global_components[0].norm(), fit.model.categories[0].W.col(0).norm());
}

TEST(FitSupervised, SingletonLabelIsRejected) {
  Dataset d = elongated_clusters({v2(0, 0)}, {0}, 10, 1.0, 0.3, 14);
  d.x.conservativeResize(11, 2);
  d.x.row(10) << 5, 5;
  d.labels.push_back(7);
  try {
    fit_supervised(d, Hyperparams{});
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("fewshot"), std::string::npos);
  }
}

TEST(FitSupervised, HierarchyRecoveryOnGeneratedData) {
  Hyperparams h;
  h.alpha_nu = 0.25;
  h.xi_var = 0.04;
  h.a_tau = 10;
  h.b_tau = 1;
  int ok = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto g = generate_structured(h, 5, {0, 0, 1, 1}, 500, s);
    const auto fit = fit_supervised(g.data, h);
    const auto& o = fit.model.ownership;
    ok += fit.model.global_components.size() == 2 && o[0] == o[1] && o[2] == o[3] && o[0] != o[2];
  }
  EXPECT_GE(ok, 9);
}

TEST(FitComponents, ObjectiveNeverDecreases) {
  Rng rng = make_rng(15);
  std::vector<PpcaParams> cats;
  for (int c = 0; c < 12; ++c) {
    PpcaParams p{standard_normal(rng, 3), (c % 3 == 0 ? 2.0 : -2.0) * Matrix::Identity(3, 1) + 0.3 * standard_normal(rng, 3, 1), 0.1};
    if (c % 2) p.W = p.W.reverse().eval();
    cats.push_back(p);
  }
  const auto top = fit_components(cats, Hyperparams{});
  for (std::size_t j = 1; j < top.objective_trace.size(); ++j)
    EXPECT_GE(top.objective_trace[j], top.objective_trace[j - 1] - 1e-9);
  EXPECT_EQ(top.ownership.size(), cats.size());
}

TEST(FitUnsupervised, RecoversFourClusters) {
  std::vector<Vector> centers = {v2(0, 6), v2(0, -6), v2(6, 0), v2(-6, 0)};
  const Dataset labeled = elongated_clusters(centers, {0, 0, 1, 1}, 100, 1.5, 0.3, 7);
  std::vector<Index> truth(labeled.labels.begin(), labeled.labels.end());
  Hyperparams h;
  h.alpha_mu = 0.01;
  const auto fit = fit_unsupervised(Dataset{labeled.x, {}}, h, {50, 1, true, 3});
  EXPECT_EQ(fit.model.num_categories(), 4);
  EXPECT_GT(adjusted_rand_index(fit.assignments, truth), 0.9);
  for (std::size_t j = 1; j < fit.objective_trace.size(); ++j)
    EXPECT_GE(fit.objective_trace[j], fit.objective_trace[j - 1] - 1e-6 * std::abs(fit.objective_trace[j - 1]));
  const auto again = fit_unsupervised(Dataset{labeled.x, {}}, h, {50, 1, true, 3});
  EXPECT_EQ(fit.assignments, again.assignments);
}

TEST(FitUnsupervised, IdenticalPointsFormOneCategory) {
  Dataset d{Matrix::Constant(30, 2, 1.5), {}};
  Hyperparams h;
  const auto fit = fit_unsupervised(d, h, {10, 3, true, 3});
  EXPECT_EQ(fit.model.num_categories(), 1);
  // With no spread the noise variance is governed by the inverse-gamma prior
  // (mode b / (a + 1) scale).
  EXPECT_LT(fit.model.categories[0].sigma2, h.b_tau);
}

TEST(FitUnsupervised, ZeroEpochsRejected) {
  Dataset d{Matrix::Random(10, 2), {}};
  EXPECT_THROW(fit_unsupervised(d, Hyperparams{}, {0, 1, true, 3}), std::invalid_argument);
}

namespace {

MixtureModel two_category_model(const Vector& mu_a, const Vector& mu_b, Index count_a, Index count_b) {
  MixtureModel m;
  m.categories = {PpcaParams{mu_a, v2(0.5, 0.0), 0.2}, PpcaParams{mu_b, v2(0.5, 0.0), 0.2}};
  m.counts = {count_a, count_b};
  m.labels = {0, 1};
  m.global_components = {v2(0.5, 0.0)};
  m.ownership = {0, 0};
  return m;
}

}  // namespace

TEST(PredictCategory, IdenticalCategoriesSplitEvenly) {
  const auto m = two_category_model(v2(1, 1), v2(1, 1), 5, 5);
  for (const Vector& x : {v2(0, 0), v2(3, -2), v2(1, 1)}) {
    const auto p = predict_category(x, m, false, {false, 64, 0});
    EXPECT_NEAR(p.prob(0), 0.5, 1e-15);
    EXPECT_NEAR(p.probs().sum(), 1.0, 1e-12);
  }
}

TEST(PredictCategory, FarSeparatedPrototype) {
  const auto m = two_category_model(v2(-10, 0), v2(10, 0), 5, 5);
  const auto p = predict_category(v2(-10, 0), m, false, {true, 64, 0});
  EXPECT_GT(p.prob(0), 0.99);
  EXPECT_NEAR(p.probs().sum(), 1.0, 1e-12);
}

TEST(PredictCategory, BaseRateRatio) {
  const auto m = two_category_model(v2(0, 0), v2(0, 0), 9, 1);
  const auto p = predict_category(v2(0.3, 0.1), m, true, {false, 64, 0});
  EXPECT_NEAR(p.prob(0) / p.prob(1), 9.0, 1e-10);
}

TEST(PredictCategory, ShiftingScoresLeavesPredictionUnchanged) {
  const Vector s = (Vector(3) << -1.0, 2.5, 0.3).finished();
  const auto a = Prediction::from_log_scores(s, true);
  const auto b = Prediction::from_log_scores((s.array() + 123.0).matrix(), true);
  EXPECT_LT((a.probs() - b.probs()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generalization, AnchorIsMaximal) {
  const auto m = two_category_model(v2(-4, 0), v2(4, 0), 20, 20);
  const Vector anchor = v2(0, 1);
  Matrix grid(121, 2);
  Index r = 0;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) grid.row(r++) << 0.5 * i, 1.0 + 0.5 * j;
  const Vector g = generalization_grid(m, anchor, grid);
  Index best = 0;
  g.maxCoeff(&best);
  EXPECT_EQ(grid.row(best), anchor.transpose());
}

TEST(Generalization, ContourFollowsTrainingAxis) {
  // Training variance ratio (1.5 / 0.3)^2 = 25 along e2.
  const Dataset d = elongated_clusters({v2(-6, 0), v2(6, 0)}, {1, 1}, 200, 1.5, 0.3, 21);
  const auto fit = fit_supervised(d, Hyperparams{});
  const Vector anchor = v2(0, 0);
  const Generalizer g(fit.model, anchor);
  const auto c = contour::trace_contour([&](const Vector& y) { return g(y); }, anchor, {0.5, 180, 10.0, 200, 40});
  EXPECT_LT(std::abs(c.major_axis_deg() - 90.0), 10.0);
  EXPECT_GT(c.axis_ratio(), 2.0);
}

TEST(AdjustedRandIndex, KnownValues) {
  const std::vector<Index> a = {0, 0, 1, 1}, b = {5, 5, 2, 2}, c = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, b), 1.0);
  EXPECT_LT(adjusted_rand_index(a, c), 0.0);
}
