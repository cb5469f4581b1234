#include "mppca/harness.hpp"

#include "mppca/dpmix.hpp"
#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>

namespace mppca::harness {

namespace {

json crp_defaults() {
  return {{"sequences", 100000},
          {"customers", 50},
          {"gamma", 1.0},
          {"stick_draws", 100000},
          {"tolerance", 0.01},
          {"chi2_runs", 400},
          {"chi2_customers", 10000},
          {"chi2_truncation", 100},
          {"chi2_bins", 5}};
}

// Upper 1% point of chi-square with `dof` degrees of freedom, by bisection on
// the regularized lower incomplete gamma (series form).
double chi2_critical_01(Index dof) {
  const double a = 0.5 * static_cast<double>(dof);
  auto cdf = [a](double x) {
    const double h = 0.5 * x;
    double term = 1.0 / a, sum = term;
    for (int k = 1; k < 1000; ++k) {
      term *= h / (a + k);
      sum += term;
      if (term < sum * 1e-16) break;
    }
    return std::exp(a * std::log(h) - h - std::lgamma(a)) * sum;
  };
  double lo = 0.0, hi = 200.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < 0.99 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double largest_fraction(const std::vector<Index>& counts, Index n) {
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(n);
}

}  // namespace

bool CrpCheckResult::ok() const {
  return relative_error <= config["tolerance"].get<double>() && std::abs(first_stick_z) <= 3.0 && chi2 <= chi2_critical;
}

CrpCheckResult run_crp_check(const CommandContext& ctx) {
  CrpCheckResult out;
  json cfg = merge_config(crp_defaults(), ctx.config);
  if (ctx.samples) cfg["sequences"] = *ctx.samples;
  out.config = cfg;

  const Index sequences = cfg["sequences"].get<Index>();
  const Index n = cfg["customers"].get<Index>();
  const double gamma = cfg["gamma"].get<double>();
  require(sequences >= 1 && n >= 1 && gamma > 0, "crp-check needs positive sequences, customers and gamma");

  Rng rng = make_rng(ctx.seed, 0x637270ULL);
  double total = 0.0;
  for (Index s = 0; s < sequences; ++s) total += static_cast<double>(dpmix::sample_crp_counts(n, gamma, rng).size());
  out.mean_clusters = total / static_cast<double>(sequences);
  for (Index i = 1; i <= n; ++i) out.expected_clusters += gamma / (gamma + static_cast<double>(i) - 1.0);
  out.relative_error = std::abs(out.mean_clusters - out.expected_clusters) / out.expected_clusters;

  // First stick weight: beta_1 ~ Beta(1, gamma), E = 1 / (1 + gamma).
  const Index stick_draws = cfg["stick_draws"].get<Index>();
  require(stick_draws >= 2, "crp-check needs at least two stick draws");
  Rng srng = make_rng(ctx.seed, 0x737469636bULL);
  double sum = 0.0, sum_sq = 0.0;
  for (Index s = 0; s < stick_draws; ++s) {
    Vector beta(2);
    beta << sample_beta(srng, 1.0, gamma), sample_beta(srng, 1.0, gamma);
    const double p = dpmix::stick_breaking_weights(beta).weights(0);
    sum += p;
    sum_sq += p * p;
  }
  const double m = static_cast<double>(stick_draws);
  out.mean_first_stick = sum / m;
  out.expected_first_stick = 1.0 / (1.0 + gamma);
  const double sd = std::sqrt(std::max(0.0, (sum_sq - m * out.mean_first_stick * out.mean_first_stick) / (m - 1.0)));
  out.first_stick_z = (out.mean_first_stick - out.expected_first_stick) / (sd / std::sqrt(m));

  // Largest-category share: full generative rollout vs sequential CRP,
  // 2 x bins contingency table over pooled quantile bins.
  const Index runs = cfg["chi2_runs"].get<Index>();
  const Index big_n = cfg["chi2_customers"].get<Index>();
  const Index bins = cfg["chi2_bins"].get<Index>();
  require(runs >= bins && bins >= 2, "crp-check needs at least as many runs as bins");
  dpmix::Hyperparams hyper;
  hyper.gamma = gamma;
  std::vector<double> gen, crp;
  Rng crng = make_rng(ctx.seed, 0x63687932ULL);
  for (Index r = 0; r < runs; ++r) {
    const auto g = dpmix::generate(hyper, 1, big_n, cfg["chi2_truncation"].get<Index>(),
                                   ctx.seed ^ (0x67656eULL + static_cast<std::uint64_t>(r) * 0x9e3779b97f4a7c15ULL));
    gen.push_back(largest_fraction(g.truth.counts, big_n));
    crp.push_back(largest_fraction(dpmix::sample_crp_counts(big_n, gamma, crng), big_n));
  }
  std::vector<double> pooled = gen;
  pooled.insert(pooled.end(), crp.begin(), crp.end());
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> edges;
  for (Index b = 1; b < bins; ++b) edges.push_back(pooled[static_cast<std::size_t>(b * static_cast<Index>(pooled.size()) / bins)]);
  auto bin_of = [&](double v) { return static_cast<Index>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()); };
  Matrix table = Matrix::Zero(2, bins);
  for (double v : gen) table(0, bin_of(v)) += 1.0;
  for (double v : crp) table(1, bin_of(v)) += 1.0;
  const double grand = table.sum();
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < bins; ++j) {
      const double expected = table.row(i).sum() * table.col(j).sum() / grand;
      if (expected > 0) out.chi2 += (table(i, j) - expected) * (table(i, j) - expected) / expected;
    }
  out.chi2_critical = chi2_critical_01(bins - 1);

  const json report = {{"mean_clusters", out.mean_clusters},
                       {"expected_clusters", out.expected_clusters},
                       {"relative_error", out.relative_error},
                       {"mean_first_stick", out.mean_first_stick},
                       {"expected_first_stick", out.expected_first_stick},
                       {"first_stick_z", out.first_stick_z},
                       {"largest_share_chi2", out.chi2},
                       {"chi2_critical_1pct", out.chi2_critical},
                       {"ok", out.ok()}};
  write_outputs(ctx.out_dir, "crp-check", cfg, ctx.seed, {{"config", cfg.dump()}},
                {{"crp_report.json", report.dump(2) + "\n"}});
  return out;
}

}  // namespace mppca::harness
