#include "mppca/harness.hpp"

#include "mppca/io.hpp"
#include "mppca/ppca.hpp"
#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mppca::harness {

namespace {

json sim1_defaults() {
  return {{"samples", 10000},
          {"variances", {4.0, 0.04}},
          {"noise_sd", {0.4, 0.7, 1.0, 1.3, 1.6}},
          {"distances", {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0}},
          {"configurations", {"dim1", "dim2", "dim3", "two", "three"}},
          {"ranks", {0, 1, 2}}};
}

Vector direction(const std::string& name) {
  Vector v = Vector::Zero(3);
  if (name == "dim1") v(0) = 1;
  else if (name == "dim2") v(1) = 1;
  else if (name == "dim3") v(2) = 1;
  else if (name == "two") v << 1, 1, 0;
  else if (name == "three") v << 1, 1, 1;
  else throw std::invalid_argument("unknown sim1 configuration '" + name + "'");
  return v / v.norm();
}

// Posterior probability of the true category for each test row (equal priors).
Vector true_probs(const PpcaDensity& a, const PpcaDensity& b, const Matrix& test_a, const Matrix& test_b) {
  Vector out(test_a.rows() + test_b.rows());
  for (Index i = 0; i < test_a.rows(); ++i) {
    const double la = a.log_density(test_a.row(i).transpose());
    const double lb = b.log_density(test_a.row(i).transpose());
    out(i) = 1.0 / (1.0 + std::exp(lb - la));
  }
  for (Index i = 0; i < test_b.rows(); ++i) {
    const double la = a.log_density(test_b.row(i).transpose());
    const double lb = b.log_density(test_b.row(i).transpose());
    out(test_a.rows() + i) = 1.0 / (1.0 + std::exp(la - lb));
  }
  return out;
}

double std_error(const Vector& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / (n - 1.0) / n);
}

}  // namespace

const Sim1Cell& Sim1Result::cell(const std::string& configuration, double noise_sd, double distance,
                                 Index q) const {
  for (const auto& c : cells) {
    if (c.configuration == configuration && c.q == q && std::abs(c.noise_sd - noise_sd) < 1e-12 &&
        std::abs(c.distance - distance) < 1e-12) {
      return c;
    }
  }
  throw std::out_of_range("no sim1 cell for the requested coordinates");
}

Sim1Result run_sim1(const CommandContext& ctx) {
  Sim1Result result;
  json cfg = merge_config(sim1_defaults(), ctx.config);
  if (ctx.samples) cfg["samples"] = *ctx.samples;
  result.config = cfg;

  const Index n = cfg["samples"].get<Index>();
  require(n >= 2, "sim1 needs at least two samples per category");
  const auto fixed = cfg["variances"].get<std::vector<double>>();
  require(fixed.size() == 2 && fixed[0] > 0 && fixed[1] > 0, "sim1 variances must be two positive values");
  const auto ranks = cfg["ranks"].get<std::vector<Index>>();
  for (Index q : ranks) require(q >= 0 && q < 3, "sim1 ranks must lie in 0..2");

  // Common random numbers shared by every cell.
  Rng rng = make_rng(ctx.seed, 0x73696d31ULL);
  const Matrix za_train = standard_normal(rng, n, 3);
  const Matrix zb_train = standard_normal(rng, n, 3);
  const Matrix za_test = standard_normal(rng, n, 3);
  const Matrix zb_test = standard_normal(rng, n, 3);

  for (const auto& name : cfg["configurations"].get<std::vector<std::string>>()) {
    const Vector dir = direction(name);
    for (double sd2 : cfg["noise_sd"].get<std::vector<double>>()) {
      require(sd2 > 0, "noise standard deviations must be positive");
      Vector sd(3);
      sd << std::sqrt(fixed[0]), sd2, std::sqrt(fixed[1]);
      const Matrix ea_train = za_train * sd.asDiagonal();
      const Matrix eb_train = zb_train * sd.asDiagonal();
      const Matrix ea_test = za_test * sd.asDiagonal();
      const Matrix eb_test = zb_test * sd.asDiagonal();
      for (double dist : cfg["distances"].get<std::vector<double>>()) {
        require(dist >= 0, "distances must be nonnegative");
        const Vector shift = dist * dir;
        const Matrix train_b = eb_train.rowwise() + shift.transpose();
        const Matrix test_b = eb_test.rowwise() + shift.transpose();

        std::vector<Vector> per_q;
        for (Index q : ranks) {
          PpcaParams pa = fit_mle(ea_train, q);
          PpcaParams pb = fit_mle(train_b, q);
          per_q.push_back(true_probs(PpcaDensity(pa), PpcaDensity(pb), ea_test, test_b));
        }
        const auto ref = std::find(ranks.begin(), ranks.end(), Index{1});
        for (std::size_t k = 0; k < ranks.size(); ++k) {
          Sim1Cell c;
          c.configuration = name;
          c.noise_sd = sd2;
          c.distance = dist;
          c.q = ranks[k];
          c.accuracy = per_q[k].mean();
          c.se = std_error(per_q[k]);
          c.diff_se_vs_q1 =
              ref == ranks.end() ? 0.0 : std_error(per_q[k] - per_q[static_cast<std::size_t>(ref - ranks.begin())]);
          result.cells.push_back(c);
        }
      }
    }
  }

  io::Table table;
  table.header = {"configuration", "noise_sd", "distance", "q", "accuracy", "se", "diff_se_vs_q1"};
  table.values.resize(static_cast<Index>(result.cells.size()), 6);
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    table.labels.push_back(c.configuration);
    table.values.row(static_cast<Index>(i)) << c.noise_sd, c.distance, static_cast<double>(c.q), c.accuracy, c.se,
        c.diff_se_vs_q1;
  }
  write_outputs(ctx.out_dir, "sim1", cfg, ctx.seed, {{"config", cfg.dump()}}, {{"sim1.csv", io::table_to_csv(table)}},
                {{"accuracy_definition",
                  "mean posterior probability of the true category over held-out draws, equal priors"}});
  return result;
}

}  // namespace mppca::harness
