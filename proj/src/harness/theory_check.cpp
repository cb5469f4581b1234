#include "mppca/harness.hpp"

#include "mppca/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace mppca::harness {

namespace {

json theory_defaults() {
  return {{"snr_configs", 50},
          {"snr_draws", 1000000},
          {"orientation_configs", 1000},
          {"bound_configs", 200},
          {"bound_draws", 100000},
          {"min_dim", 2},
          {"max_dim", 5},
          {"z_threshold", 3.0}};
}

Index uniform_index(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

std::uint64_t substream(std::uint64_t base, Index i) { return base + static_cast<std::uint64_t>(i); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

bool TheoryCheckResult::ok() const {
  const Index used = orientation_configs - orientation_skipped;
  const bool consistent = used > 0 && (agree_holds_iff_q_higher == used || agree_holds_iff_q_higher == 0);
  return snr_failures == 0 && consistent && bound_violations == 0;
}

TheoryCheckResult run_theory_check(const CommandContext& ctx) {
  TheoryCheckResult out;
  json cfg = merge_config(theory_defaults(), ctx.config);
  if (ctx.samples) cfg["snr_draws"] = *ctx.samples;
  out.config = cfg;

  const Index min_d = cfg["min_dim"].get<Index>();
  const Index max_d = cfg["max_dim"].get<Index>();
  require(min_d >= 2 && max_d >= min_d, "theory-check needs 2 <= min_dim <= max_dim");
  const double zmax = cfg["z_threshold"].get<double>();
  const Index draws = cfg["snr_draws"].get<Index>();
  const Index bound_draws = cfg["bound_draws"].get<Index>();
  require(draws >= 2 && bound_draws >= 2, "theory-check needs at least two Monte Carlo draws");

  // ---- analytic SNR moments against Monte Carlo ----
  auto t0 = std::chrono::steady_clock::now();
  json snr_rows = json::array();
  out.snr_configs = cfg["snr_configs"].get<Index>();
  for (Index i = 0; i < out.snr_configs; ++i) {
    Rng rng = make_rng(ctx.seed, substream(0x736e7200000000ULL, i));
    const Index d = uniform_index(rng, min_d, max_d);
    const theory::TwoCategorySpec spec = theory::random_spec(rng, d);
    const Index q = uniform_index(rng, 0, d - 1);
    const auto decomp = theory::info_decomposition(spec);
    const auto an = theory::snr_analytic(q, decomp, spec.eigvals);
    const auto mc = theory::monte_carlo_alpha(spec, q, draws, rng());
    const double z_mean = std::abs(mc.mean - an.mean) / mc.mean_se;
    const double z_var = std::abs(mc.variance - an.variance) / mc.variance_se;
    const bool fail = !(z_mean <= zmax && z_var <= zmax);
    out.snr_failures += fail ? 1 : 0;
    out.snr_max_z = std::max({out.snr_max_z, z_mean, z_var});
    snr_rows.push_back({{"d", d},
                        {"q", q},
                        {"mean", an.mean},
                        {"mc_mean", mc.mean},
                        {"z_mean", z_mean},
                        {"variance", an.variance},
                        {"mc_variance", mc.variance},
                        {"z_variance", z_var},
                        {"pass", !fail}});
  }

  out.snr_seconds = seconds_since(t0);

  // ---- orientation of the dimension-dropping criterion ----
  t0 = std::chrono::steady_clock::now();
  out.orientation_configs = cfg["orientation_configs"].get<Index>();
  Index agree_lower = 0;
  for (Index i = 0; i < out.orientation_configs; ++i) {
    Rng rng = make_rng(ctx.seed, substream(0x6f72690000000ULL, i));
    const Index d = uniform_index(rng, std::max<Index>(min_d, 2), std::max<Index>(max_d, 3));
    const theory::TwoCategorySpec spec = theory::random_spec(rng, d);
    const Index q = uniform_index(rng, 0, d - 2);
    const auto decomp = theory::info_decomposition(spec);
    try {
      const bool holds = theory::drop_condition(q, decomp, spec.eigvals);
      const auto t0 = theory::snr_analytic(q, decomp, spec.eigvals);
      const auto t1 = theory::snr_analytic(q + 1, decomp, spec.eigvals);
      const double s0 = t0.snr, s1 = t1.snr;
      if (t0.degenerate || t1.degenerate || decomp.r(q) == 0.0 || std::abs(s0 - s1) <= 1e-12 * std::max(s0, s1)) {
        ++out.orientation_skipped;
        continue;
      }
      if (holds == (s0 > s1)) ++out.agree_holds_iff_q_higher;
      if (holds == (s0 < s1)) ++agree_lower;
    } catch (const DegenerateError&) {
      ++out.orientation_skipped;
    }
  }
  const Index used = out.orientation_configs - out.orientation_skipped;
  if (used > 0 && out.agree_holds_iff_q_higher == used)
    out.orientation = "holds iff SNR_q > SNR_(q+1)";
  else if (used > 0 && agree_lower == used)
    out.orientation = "holds iff SNR_q < SNR_(q+1)";
  else
    out.orientation = "inconsistent";

  out.orientation_seconds = seconds_since(t0);

  // ---- Chebyshev accuracy bound ----
  t0 = std::chrono::steady_clock::now();
  json bound_rows = json::array();
  out.bound_configs = cfg["bound_configs"].get<Index>();
  for (Index i = 0; i < out.bound_configs; ++i) {
    Rng rng = make_rng(ctx.seed, substream(0x626e640000000ULL, i));
    const Index d = uniform_index(rng, min_d, max_d);
    const theory::TwoCategorySpec spec = theory::random_spec(rng, d);
    const Index q = uniform_index(rng, 0, d - 1);
    const auto an = theory::snr_analytic(q, theory::info_decomposition(spec), spec.eigvals);
    const double bound = theory::accuracy_lower_bound(an.snr);
    const auto mc = theory::monte_carlo_alpha(spec, q, bound_draws, rng());
    const bool violated = mc.accuracy < bound - zmax * mc.accuracy_se;
    out.bound_violations += violated ? 1 : 0;
    bound_rows.push_back(
        {{"d", d}, {"q", q}, {"snr", an.snr}, {"bound", bound}, {"accuracy", mc.accuracy}, {"se", mc.accuracy_se}, {"violated", violated}});
  }

  out.bound_seconds = seconds_since(t0);

  out.report = {{"snr",
                 {{"configs", out.snr_configs},
                  {"failures", out.snr_failures},
                  {"max_z", out.snr_max_z},
                  {"rows", snr_rows}}},
                {"orientation",
                 {{"configs", out.orientation_configs},
                  {"skipped", out.orientation_skipped},
                  {"agree_holds_iff_snr_q_higher", out.agree_holds_iff_q_higher},
                  {"agree_holds_iff_snr_q_lower", agree_lower},
                  {"orientation", out.orientation}}},
                {"bound", {{"configs", out.bound_configs}, {"violations", out.bound_violations}, {"rows", bound_rows}}},
                {"ok", out.ok()}};
  write_outputs(ctx.out_dir, "theory-check", cfg, ctx.seed, {{"config", cfg.dump()}},
                {{"theory_report.json", out.report.dump(2) + "\n"}});
  return out;
}

}  // namespace mppca::harness
