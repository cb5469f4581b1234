#include "mppca/harness.hpp"
#include "mppca/io.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace mppca;
using namespace mppca::harness;

namespace {

struct Flags {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir;
  std::optional<Index> samples;
};

void add_flags(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--seed", flags.seed, "Random seed")->capture_default_str();
  cmd->add_option("--config", flags.config_path, "JSON file with parameter overrides")->check(CLI::ExistingFile);
  cmd->add_option("--out", flags.out_dir, "Output directory (default: out/<command>)");
  cmd->add_option("--samples", flags.samples, "Sample count override")->check(CLI::PositiveNumber);
}

CommandContext context(const Flags& flags, const std::string& command) {
  CommandContext ctx;
  ctx.seed = flags.seed;
  ctx.samples = flags.samples;
  ctx.out_dir = flags.out_dir.empty() ? (std::filesystem::path("out") / command).string() : flags.out_dir;
  if (!flags.config_path.empty()) {
    ctx.config = json::parse(io::read_text_file(flags.config_path));
    require(ctx.config.is_object(), flags.config_path + ": config must be a JSON object");
  }
  return ctx;
}

int sim1(const CommandContext& ctx) {
  const Sim1Result r = run_sim1(ctx);
  std::cout << "sim1: " << r.cells.size() << " cells written to " << ctx.out_dir << "\n";
  return 0;
}

int sim2(const CommandContext& ctx) {
  const Sim2Result r = run_sim2(ctx);
  std::cout << "sim2: mppca found " << r.mppca_categories << " categories, " << r.mppca_components
            << " components, ARI " << io::format_double(r.mppca_ari) << "\n";
  for (const auto& m : r.models) {
    std::cout << "  " << m.name << ": major axis " << io::format_double(m.contour.major_axis_deg())
              << " deg, anisotropy " << io::format_double(m.contour.anisotropy()) << "\n";
  }
  return 0;
}

int fewshot(const CommandContext& ctx) {
  const FewshotResult r = run_fewshot(ctx);
  for (const auto& m : r.metrics) {
    std::cout << m.task << "/" << m.model << ": expected accuracy " << io::format_double(m.expected_accuracy)
              << " +- " << io::format_double(m.expected_accuracy_se) << ", correlation "
              << io::format_double(m.correlation) << "\n";
  }
  return 0;
}

int theory_check(const CommandContext& ctx) {
  const TheoryCheckResult r = run_theory_check(ctx);
  std::cout << "snr: " << r.snr_failures << "/" << r.snr_configs << " configs beyond threshold (max z "
            << io::format_double(r.snr_max_z) << ")\n"
            << "orientation: " << r.orientation << " (" << r.orientation_skipped << " skipped)\n"
            << "bound: " << r.bound_violations << "/" << r.bound_configs << " violations\n";
  return r.ok() ? 0 : 1;
}

int deep_cmd(const CommandContext& ctx) {
  const DeepResult r = run_deep(ctx);
  std::cout << "deep: " << r.train_loss.size() << " epochs, final loss " << io::format_double(r.train_loss.back())
            << ", held-out accuracy " << io::format_double(r.validation_accuracy) << "\n";
  return 0;
}

int crp_check(const CommandContext& ctx) {
  const CrpCheckResult r = run_crp_check(ctx);
  std::cout << "mean clusters " << io::format_double(r.mean_clusters) << " vs "
            << io::format_double(r.expected_clusters) << " (relative error " << io::format_double(r.relative_error)
            << ")\nfirst stick " << io::format_double(r.mean_first_stick) << ", chi2 " << io::format_double(r.chi2)
            << " (critical " << io::format_double(r.chi2_critical) << ")\n";
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mPPCA categorization models and experiment harness"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"sim1", "Expected accuracy of PPCA classifiers by rank, distance and noise"},
      {"sim2", "Generalization grids and contours after axis-aligned training"},
      {"fewshot", "Few-shot new-category and subcategory comparison against a reference"},
      {"theory-check", "Analytic SNR, criterion orientation and accuracy bound checks"},
      {"deep", "Train rank-1 PPCA heads on embeddings with soft labels"},
      {"crp-check", "Chinese restaurant process and stick-breaking sanity checks"}};
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const CommandContext ctx = context(flags, command);
    if (command == "sim1") return sim1(ctx);
    if (command == "sim2") return sim2(ctx);
    if (command == "fewshot") return fewshot(ctx);
    if (command == "theory-check") return theory_check(ctx);
    if (command == "deep") return deep_cmd(ctx);
    return crp_check(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
