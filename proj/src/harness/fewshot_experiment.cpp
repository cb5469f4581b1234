#include "mppca/harness.hpp"

#include "mppca/baselines.hpp"
#include "mppca/dpmix.hpp"
#include "mppca/fewshot.hpp"
#include "mppca/io.hpp"
#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

namespace mppca::harness {

namespace {

json fewshot_defaults() {
  return {{"category_sizes", {15, 45}},
          {"size_means", {-1.5, 0.0}},
          {"size_sd", 0.2},
          {"color_sd", 1.0},
          {"new_instance", {1.5, 0.0}},
          {"test_sizes", {1.0, 1.25, 1.5, 1.75, 2.0}},
          {"test_colors", {-1.5, -0.5, 0.5, 1.5}},
          {"hyper",
           {{"gamma", 1.0},
            {"gamma_star", 1.0},
            {"alpha_mu", 0.01},
            {"alpha_nu", 1.0},
            {"a_tau", 1.0},
            {"b_tau", 1.0},
            {"xi_var", 0.01}}},
          {"subcategory",
           {{"parent", 1},
            {"z_sub", 1.5},
            {"p1", 0.5},
            {"sigma2", 0.04},
            {"test_sizes", {-0.2, 0.0, 0.2}},
            {"test_colors", {-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0}}}},
          {"reference",
           {{"model", "mppca"}, {"participants", 30}, {"new_category_csv", ""}, {"subcategory_csv", ""}}},
          {"resamples", 1000}};
}

Vector softmax(const Vector& scores) { return (scores.array() - log_sum_exp(scores)).exp().matrix(); }

Matrix lattice(const std::vector<double>& sizes, const std::vector<double>& colors) {
  Matrix out(static_cast<Index>(sizes.size() * colors.size()), 2);
  Index r = 0;
  for (double s : sizes)
    for (double c : colors) out.row(r++) << s, c;
  return out;
}

std::vector<std::string> stimulus_ids(const std::string& prefix, Index n) {
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

// Rows of a reference file, reordered to the stimulus ids.
std::vector<Vector> reference_from_csv(const std::string& path, const std::vector<std::string>& ids,
                                       Index categories) {
  const io::IdRows rows = io::read_id_rows(path);
  require(rows.values.cols() == categories,
          path + ": expected " + std::to_string(categories) + " probabilities per row");
  std::vector<Vector> out;
  for (const auto& id : ids) {
    const auto it = std::find(rows.ids.begin(), rows.ids.end(), id);
    require(it != rows.ids.end(), path + ": missing stimulus '" + id + "'");
    const Vector p = rows.values.row(it - rows.ids.begin()).transpose();
    require((p.array() >= 0).all() && std::abs(p.sum() - 1.0) <= 1e-6,
            path + ": row for '" + id + "' is not a probability vector");
    out.push_back(p);
  }
  return out;
}

// Choice frequencies of simulated participants who each sample one response
// per stimulus from `probs`.
std::vector<Vector> simulate_participants(const std::vector<Vector>& probs, Index participants, Rng& rng) {
  require(participants >= 1, "reference.participants must be positive");
  std::vector<Vector> out;
  for (const auto& p : probs) {
    std::discrete_distribution<Index> pick(p.data(), p.data() + p.size());
    Vector freq = Vector::Zero(p.size());
    for (Index i = 0; i < participants; ++i) freq(pick(rng)) += 1.0;
    out.push_back(freq / static_cast<double>(participants));
  }
  return out;
}

Matrix stack(const std::vector<Vector>& rows) {
  Matrix out(static_cast<Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = rows[i].transpose();
  return out;
}

}  // namespace

const FewshotMetrics& FewshotResult::metric(const std::string& task, const std::string& model) const {
  for (const auto& m : metrics)
    if (m.task == task && m.model == model) return m;
  throw std::out_of_range("no fewshot metric for " + task + "/" + model);
}

const std::vector<Vector>& FewshotResult::predictions(const std::string& model) const {
  for (const auto& [name, p] : new_category_predictions)
    if (name == model) return p;
  throw std::out_of_range("no fewshot predictions for model '" + model + "'");
}

FewshotResult run_fewshot(const CommandContext& ctx) {
  FewshotResult result;
  json cfg = merge_config(fewshot_defaults(), ctx.config);
  if (ctx.samples) cfg["reference"]["participants"] = *ctx.samples;
  result.config = cfg;

  const auto sizes = cfg["category_sizes"].get<std::vector<Index>>();
  const auto size_means = cfg["size_means"].get<std::vector<double>>();
  require(sizes.size() == 2 && size_means.size() == 2, "fewshot uses exactly two training categories");
  const double size_sd = cfg["size_sd"].get<double>();
  const double color_sd = cfg["color_sd"].get<double>();
  require(size_sd > 0 && color_sd > 0, "fewshot standard deviations must be positive");

  Rng rng = make_rng(ctx.seed, 0x66657773ULL);
  Dataset data;
  data.x.resize(sizes[0] + sizes[1], 2);
  Index row = 0;
  for (int c = 0; c < 2; ++c) {
    require(sizes[static_cast<std::size_t>(c)] >= 2, "each training category needs two members");
    for (Index i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) {
      const Vector z = standard_normal(rng, 2);
      data.x.row(row++) << size_means[static_cast<std::size_t>(c)] + size_sd * z(0), color_sd * z(1);
      data.labels.push_back(c);
    }
  }
  io::IdRows train_rows{stimulus_ids("t", data.size()), data.x};
  const std::string train_csv = io::id_rows_to_csv(train_rows);

  // Every model is handed the same data set; the hash is taken per model at
  // the point of use.
  auto receive = [&](const std::string& model, const Dataset& d) -> const Dataset& {
    io::IdRows rows{stimulus_ids("t", d.size()), d.x};
    std::string text = io::id_rows_to_csv(rows);
    for (int label : d.labels) text += std::to_string(label) + "\n";
    result.input_hashes.emplace_back(model, git_blob_sha1(text));
    return d;
  };

  const auto h = cfg["hyper"];
  dpmix::Hyperparams hyper{h["gamma"].get<double>(),  h["gamma_star"].get<double>(), h["alpha_mu"].get<double>(),
                           h["alpha_nu"].get<double>(), h["a_tau"].get<double>(),      h["b_tau"].get<double>(),
                           h["xi_var"].get<double>()};
  hyper.validate();

  const dpmix::FitResult fit = dpmix::fit_supervised(receive("mppca", data), hyper);
  const baselines::ExemplarStore ex = baselines::fit_exemplar(receive("exemplar", data), false);
  const baselines::ExemplarStore ex_att = baselines::fit_exemplar(receive("exemplar_attention", data), true);
  const baselines::PrototypeStore pr = baselines::fit_prototype(receive("prototype", data), false);
  const baselines::PrototypeStore pr_att = baselines::fit_prototype(receive("prototype_attention", data), true);
  const std::vector<int> order = baselines::sorted_labels(data);

  std::vector<PpcaDensity> cat_density;
  std::vector<PpcaParams> cat_params;
  for (int label : order) {
    const auto it = std::find(fit.model.labels.begin(), fit.model.labels.end(), label);
    require(it != fit.model.labels.end(), "fitted model lost a training label");
    cat_params.push_back(fit.model.categories[static_cast<std::size_t>(it - fit.model.labels.begin())]);
    cat_density.emplace_back(cat_params.back());
  }

  // ---- new-category task: (category 1, category 2, new) ----
  const auto new_v = cfg["new_instance"].get<std::vector<double>>();
  require(new_v.size() == 2, "new_instance must be two-dimensional");
  Vector x_new(2);
  x_new << new_v[0], new_v[1];
  result.test_stimuli = lattice(cfg["test_sizes"].get<std::vector<double>>(), cfg["test_colors"].get<std::vector<double>>());
  require(result.test_stimuli.rows() >= 2, "fewshot needs at least two test stimuli");
  const fewshot::NewCategoryMixture mix = fewshot::new_category_predictive(x_new, fit.model);

  using Scorer = std::function<Vector(const Vector&)>;
  const std::vector<std::pair<std::string, Scorer>> new_models = {
      {"mppca",
       [&](const Vector& y) {
         Vector s(3);
         s << cat_density[0].log_density(y), cat_density[1].log_density(y), mix.log_density(y);
         return s;
       }},
      {"exemplar",
       [&](const Vector& y) {
         Vector s(3);
         s << baselines::exemplar_log_similarity(y, ex), -ex.sensitivity * baselines::attention_distance(y, x_new, ex.attention);
         return s;
       }},
      {"exemplar_attention",
       [&](const Vector& y) {
         Vector s(3);
         s << baselines::exemplar_log_similarity(y, ex_att),
             -ex_att.sensitivity * baselines::attention_distance(y, x_new, ex_att.attention);
         return s;
       }},
      {"prototype",
       [&](const Vector& y) {
         const double d = baselines::attention_distance(y, x_new, pr.attention);
         Vector s(3);
         s << baselines::prototype_log_similarity(y, pr), -pr.sensitivity * d * d;
         return s;
       }},
      {"prototype_attention", [&](const Vector& y) {
         const double d = baselines::attention_distance(y, x_new, pr_att.attention);
         Vector s(3);
         s << baselines::prototype_log_similarity(y, pr_att), -pr_att.sensitivity * d * d;
         return s;
       }}};

  for (const auto& [name, score] : new_models) {
    std::vector<Vector> probs;
    for (Index i = 0; i < result.test_stimuli.rows(); ++i) probs.push_back(softmax(score(result.test_stimuli.row(i).transpose())));
    result.new_category_predictions.emplace_back(name, std::move(probs));
  }

  // ---- subcategory task: (subcategory, rest of parent) ----
  const auto sc = cfg["subcategory"];
  const int parent_label = sc["parent"].get<int>();
  const auto pit = std::find(order.begin(), order.end(), parent_label);
  require(pit != order.end(), "subcategory.parent names no training category");
  const std::size_t parent = static_cast<std::size_t>(pit - order.begin());
  fewshot::SubcategorySpec spec{cat_params[parent], sc["z_sub"].get<double>(), sc["p1"].get<double>(),
                                sc["sigma2"].is_null() ? std::nullopt : std::optional<double>(sc["sigma2"].get<double>())};
  spec.validate();
  const Vector x_sub = spec.center();
  const Matrix sub_stimuli = lattice(sc["test_sizes"].get<std::vector<double>>(), sc["test_colors"].get<std::vector<double>>());
  require(sub_stimuli.rows() >= 2, "fewshot needs at least two subcategory stimuli");

  auto pair_probs = [](double log_sub, double log_rest) {
    Vector s(2);
    s << log_sub, log_rest;
    return softmax(s);
  };
  const std::vector<std::pair<std::string, Scorer>> sub_models = {
      {"mppca",
       [&](const Vector& y) {
         const double p = fewshot::subcategory_membership_prob(y, spec);
         Vector v(2);
         v << p, 1.0 - p;
         return v;
       }},
      {"exemplar",
       [&](const Vector& y) {
         return pair_probs(-ex.sensitivity * baselines::attention_distance(y, x_sub, ex.attention),
                           baselines::exemplar_log_similarity(y, ex)(static_cast<Index>(parent)));
       }},
      {"exemplar_attention",
       [&](const Vector& y) {
         return pair_probs(-ex_att.sensitivity * baselines::attention_distance(y, x_sub, ex_att.attention),
                           baselines::exemplar_log_similarity(y, ex_att)(static_cast<Index>(parent)));
       }},
      {"prototype",
       [&](const Vector& y) {
         const double d = baselines::attention_distance(y, x_sub, pr.attention);
         return pair_probs(-pr.sensitivity * d * d, baselines::prototype_log_similarity(y, pr)(static_cast<Index>(parent)));
       }},
      {"prototype_attention", [&](const Vector& y) {
         const double d = baselines::attention_distance(y, x_sub, pr_att.attention);
         return pair_probs(-pr_att.sensitivity * d * d,
                           baselines::prototype_log_similarity(y, pr_att)(static_cast<Index>(parent)));
       }}};
  std::vector<std::pair<std::string, std::vector<Vector>>> sub_predictions;
  for (const auto& [name, score] : sub_models) {
    std::vector<Vector> probs;
    for (Index i = 0; i < sub_stimuli.rows(); ++i) probs.push_back(score(sub_stimuli.row(i).transpose()));
    sub_predictions.emplace_back(name, std::move(probs));
  }

  // ---- reference ----
  const auto ref = cfg["reference"];
  const std::string ref_model = ref["model"].get<std::string>();
  const auto new_ids = stimulus_ids("n", result.test_stimuli.rows());
  const auto sub_ids = stimulus_ids("s", sub_stimuli.rows());
  std::vector<Vector> sub_reference;
  std::vector<ManifestEntry> inputs = {{"config", cfg.dump()}, {"training.csv", train_csv}};
  if (ref_model == "csv") {
    const std::string new_path = ref["new_category_csv"].get<std::string>();
    const std::string sub_path = ref["subcategory_csv"].get<std::string>();
    require(!new_path.empty() && !sub_path.empty(), "reference.model 'csv' needs both reference files");
    result.new_category_reference = reference_from_csv(new_path, new_ids, 3);
    sub_reference = reference_from_csv(sub_path, sub_ids, 2);
    inputs.push_back({new_path, io::read_text_file(new_path)});
    inputs.push_back({sub_path, io::read_text_file(sub_path)});
  } else {
    bool found = false;
    for (const auto& [name, p] : result.new_category_predictions)
      if (name == ref_model) {
        result.new_category_reference = p;
        found = true;
      }
    for (const auto& [name, p] : sub_predictions)
      if (name == ref_model) sub_reference = p;
    if (!found && ref_model == "simulated") {
      Rng prng = make_rng(ctx.seed, 0x70617274ULL);
      const Index n = ref["participants"].get<Index>();
      result.new_category_reference = simulate_participants(result.predictions("mppca"), n, prng);
      sub_reference = simulate_participants(sub_predictions.front().second, n, prng);
      found = true;
    }
    require(found, "unknown reference.model '" + ref_model + "'");
  }

  // Linear-rule oracle fitted to the reference of each task.
  const baselines::LinearRule new_rule(result.test_stimuli, stack(result.new_category_reference));
  const baselines::LinearRule sub_rule(sub_stimuli, stack(sub_reference));
  std::vector<Vector> new_rule_p, sub_rule_p;
  for (Index i = 0; i < result.test_stimuli.rows(); ++i) new_rule_p.push_back(new_rule.predict(result.test_stimuli.row(i).transpose()));
  for (Index i = 0; i < sub_stimuli.rows(); ++i) sub_rule_p.push_back(sub_rule.predict(sub_stimuli.row(i).transpose()));

  const Index resamples = cfg["resamples"].get<Index>();
  auto score_task = [&](const std::string& task, const std::vector<std::pair<std::string, std::vector<Vector>>>& preds,
                        const std::vector<Vector>& rule, const std::vector<Vector>& reference) {
    std::vector<baselines::ModelPredictions> models;
    for (const auto& [name, p] : preds) models.push_back({name, p});
    models.push_back({"linear_rule_oracle", rule});
    for (const auto& m : baselines::compare_models(models, reference, resamples, ctx.seed))
      result.metrics.push_back({task, m.name, m.expected_accuracy, m.expected_accuracy_se, m.correlation, m.correlation_se});
  };
  score_task("new_category", result.new_category_predictions, new_rule_p, result.new_category_reference);
  score_task("subcategory", sub_predictions, sub_rule_p, sub_reference);

  // ---- outputs ----
  io::Table table;
  table.header = {"task/model", "expected_accuracy", "expected_accuracy_se", "correlation", "correlation_se"};
  table.values.resize(static_cast<Index>(result.metrics.size()), 4);
  for (std::size_t i = 0; i < result.metrics.size(); ++i) {
    const auto& m = result.metrics[i];
    table.labels.push_back(m.task + "/" + m.model);
    table.values.row(static_cast<Index>(i)) << m.expected_accuracy, m.expected_accuracy_se, m.correlation, m.correlation_se;
  }

  auto prediction_json = [](const std::vector<std::string>& ids, const Matrix& stimuli,
                            const std::vector<std::pair<std::string, std::vector<Vector>>>& preds,
                            const std::vector<Vector>& reference) {
    json out = json::object();
    json st = json::array();
    for (Index i = 0; i < stimuli.rows(); ++i) st.push_back({{"id", ids[static_cast<std::size_t>(i)]}, {"x", {stimuli(i, 0), stimuli(i, 1)}}});
    out["stimuli"] = st;
    auto rows = [](const std::vector<Vector>& p) {
      json r = json::array();
      for (const auto& v : p) r.push_back(std::vector<double>(v.data(), v.data() + v.size()));
      return r;
    };
    for (const auto& [name, p] : preds) out["models"][name] = rows(p);
    out["reference"] = rows(reference);
    return out;
  };
  json hashes = json::object();
  for (const auto& [model, hash] : result.input_hashes) hashes[model] = hash;
  const json predictions = {
      {"new_category", prediction_json(new_ids, result.test_stimuli, result.new_category_predictions, result.new_category_reference)},
      {"subcategory", prediction_json(sub_ids, sub_stimuli, sub_predictions, sub_reference)},
      {"subcategory_center", {x_sub(0), x_sub(1)}},
      {"sensitivity",
       {{"exemplar", ex.sensitivity},
        {"exemplar_attention", ex_att.sensitivity},
        {"prototype", pr.sensitivity},
        {"prototype_attention", pr_att.sensitivity}}}};
  write_outputs(ctx.out_dir, "fewshot", cfg, ctx.seed, inputs,
                {{"fewshot_metrics.csv", io::table_to_csv(table)}, {"fewshot_predictions.json", predictions.dump(2) + "\n"}},
                {{"training_hashes", hashes},
                 {"conventions",
                  "exemplar similarity exp(-c d), prototype similarity exp(-c d^2); attention from inverse "
                  "within-category variance; sensitivity by grid search on training-label likelihood"}});
  return result;
}

}  // namespace mppca::harness
