#pragma once

#include "mppca/contour.hpp"
#include "mppca/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mppca::harness {

using nlohmann::json;

// Shared settings of every command. `config` holds user overrides; each
// command merges them over its defaults and echoes the result in the
// manifest. With an empty out_dir nothing is written.
struct CommandContext {
  json config = json::object();
  std::uint64_t seed = 0;
  std::optional<Index> samples;
  std::string out_dir;
};

// git-style blob hash: sha1("blob <size>\0" + content), lowercase hex.
std::string git_blob_sha1(const std::string& content);

struct ManifestEntry {
  std::string name;
  std::string content;
};

// Writes <out_dir>/manifest.json with the command, seed, resolved config and
// the hashes of named inputs and outputs. Outputs are written as well.
void write_outputs(const std::string& out_dir, const std::string& command, const json& config,
                   std::uint64_t seed, const std::vector<ManifestEntry>& inputs,
                   const std::vector<ManifestEntry>& outputs, const json& extra = json::object());

// Recursive merge of `overrides` into `defaults`; unknown keys are rejected.
json merge_config(const json& defaults, const json& overrides, const std::string& path = "");

// ---- sim1 -------------------------------------------------------------------

struct Sim1Cell {
  std::string configuration;
  double noise_sd = 0.0;
  double distance = 0.0;
  Index q = 0;
  double accuracy = 0.0;
  double se = 0.0;
  double diff_se_vs_q1 = 0.0;  // standard error of (accuracy_q - accuracy_1), paired
};

struct Sim1Result {
  json config;
  std::vector<Sim1Cell> cells;

  const Sim1Cell& cell(const std::string& configuration, double noise_sd, double distance, Index q) const;
};

Sim1Result run_sim1(const CommandContext& ctx);

// ---- sim2 -------------------------------------------------------------------

struct Sim2Model {
  std::string name;
  Matrix grid;  // rows follow ys, columns follow xs
  contour::Contour contour;
};

struct Sim2Result {
  json config;
  json document;  // the emitted JSON
  std::vector<double> xs, ys;
  std::vector<Sim2Model> models;
  double mppca_ari = 0.0;
  Index mppca_categories = 0;
  Index mppca_components = 0;

  const Sim2Model& model(const std::string& name) const;
};

Sim2Result run_sim2(const CommandContext& ctx);

// ---- fewshot ----------------------------------------------------------------

struct FewshotMetrics {
  std::string task;
  std::string model;
  double expected_accuracy = 0.0;
  double expected_accuracy_se = 0.0;
  double correlation = 0.0;
  double correlation_se = 0.0;
};

struct FewshotResult {
  json config;
  Matrix test_stimuli;  // new-category task
  // Per model, one distribution over (category 1, category 2, new) per stimulus.
  std::vector<std::pair<std::string, std::vector<Vector>>> new_category_predictions;
  std::vector<Vector> new_category_reference;
  std::vector<FewshotMetrics> metrics;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // model -> training-data hash

  const FewshotMetrics& metric(const std::string& task, const std::string& model) const;
  const std::vector<Vector>& predictions(const std::string& model) const;
};

FewshotResult run_fewshot(const CommandContext& ctx);

// ---- theory-check -----------------------------------------------------------

struct TheoryCheckResult {
  json config;
  json report;
  // SNR moments
  Index snr_configs = 0;
  Index snr_failures = 0;
  double snr_max_z = 0.0;
  // drop-condition orientation
  Index orientation_configs = 0;
  Index orientation_skipped = 0;
  Index agree_holds_iff_q_higher = 0;  // holds <=> SNR_q > SNR_{q+1}
  std::string orientation;
  // accuracy bound
  Index bound_configs = 0;
  Index bound_violations = 0;
  // Wall-clock time per section; not part of the report.
  double snr_seconds = 0.0;
  double orientation_seconds = 0.0;
  double bound_seconds = 0.0;

  bool ok() const;
};

TheoryCheckResult run_theory_check(const CommandContext& ctx);

// ---- deep -------------------------------------------------------------------

struct DeepResult {
  json config;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  double validation_accuracy = 0.0;
  double train_seconds = 0.0;
  std::string heads_json;
  std::vector<Vector> spectrum;
};

// Writes a synthetic rank-1 cluster data set as embedding and soft-label CSV
// text (ids e0, e1, ...).
std::pair<std::string, std::string> synthetic_embeddings(Index clusters, Index dim, Index points,
                                                         std::uint64_t seed);

DeepResult run_deep(const CommandContext& ctx);

// ---- crp-check --------------------------------------------------------------

struct CrpCheckResult {
  json config;
  double mean_clusters = 0.0;
  double expected_clusters = 0.0;
  double relative_error = 0.0;
  double mean_first_stick = 0.0;
  double expected_first_stick = 0.0;
  double first_stick_z = 0.0;
  double chi2 = 0.0;
  double chi2_critical = 0.0;

  bool ok() const;
};

CrpCheckResult run_crp_check(const CommandContext& ctx);

}  // namespace mppca::harness
