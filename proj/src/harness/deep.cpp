#include "mppca/harness.hpp"

#include "mppca/deep_head.hpp"
#include "mppca/io.hpp"
#include "mppca/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <tuple>

namespace mppca::harness {

namespace {

json deep_defaults() {
  return {{"embeddings", ""},
          {"labels", ""},
          {"covariances", ""},
          {"synthetic", {{"clusters", 3}, {"dim", 16}, {"points", 600}}},
          {"validation_fraction", 0.2},
          {"epochs", 40},
          {"batch_size", 32},
          {"learning_rate", 0.01},
          {"momentum", 0.9},
          {"lambda2", 0.0},
          {"form", "full"}};
}

std::vector<Matrix> covariances_from_json(const std::string& text, const std::string& source) {
  const json doc = json::parse(text);
  require(doc.is_array(), source + ": expected an array of square matrices");
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    const auto rows = doc[k].get<std::vector<std::vector<double>>>();
    const Index n = static_cast<Index>(rows.size());
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i) {
      require(static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) == n,
              source + ": matrix " + std::to_string(k) + " is not square");
      for (Index j = 0; j < n; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

std::pair<std::string, std::string> synthetic_embeddings(Index clusters, Index dim, Index points,
                                                         std::uint64_t seed) {
  require(clusters >= 2 && dim >= 1 && points >= clusters, "invalid synthetic embedding settings");
  Rng rng = make_rng(seed, 0x656d62ULL);
  std::vector<Vector> means, loadings;
  for (Index c = 0; c < clusters; ++c) {
    means.push_back(2.0 * standard_normal(rng, dim));
    const Vector u = standard_normal(rng, dim);
    loadings.push_back(2.0 * u / u.norm());
  }
  const double noise_sd = std::sqrt(0.5);
  io::IdRows emb, lab;
  emb.values.resize(points, dim);
  lab.values = Matrix::Zero(points, clusters);
  for (Index i = 0; i < points; ++i) {
    const Index c = i % clusters;
    const double z = standard_normal(rng, 1)(0);
    emb.values.row(i) = (means[static_cast<std::size_t>(c)] + z * loadings[static_cast<std::size_t>(c)] +
                         noise_sd * standard_normal(rng, dim))
                            .transpose();
    lab.values(i, c) = 1.0;
    emb.ids.push_back("e" + std::to_string(i));
  }
  lab.ids = emb.ids;
  return {io::id_rows_to_csv(emb), io::id_rows_to_csv(lab)};
}

DeepResult run_deep(const CommandContext& ctx) {
  DeepResult out;
  json cfg = merge_config(deep_defaults(), ctx.config);
  if (ctx.samples) cfg["synthetic"]["points"] = *ctx.samples;
  out.config = cfg;

  std::string emb_name = cfg["embeddings"].get<std::string>();
  std::string lab_name = cfg["labels"].get<std::string>();
  require(emb_name.empty() == lab_name.empty(), "deep needs both an embedding file and a label file, or neither");
  std::string emb_text, lab_text;
  if (emb_name.empty()) {
    const auto syn = cfg["synthetic"];
    std::tie(emb_text, lab_text) = synthetic_embeddings(syn["clusters"].get<Index>(), syn["dim"].get<Index>(),
                                                        syn["points"].get<Index>(), ctx.seed);
    emb_name = "synthetic_embeddings.csv";
    lab_name = "synthetic_labels.csv";
  } else {
    emb_text = io::read_text_file(emb_name);
    lab_text = io::read_text_file(lab_name);
  }
  const deep::SoftLabelBatch all =
      io::join_soft_labels(io::id_rows_from_csv(emb_text, emb_name), io::id_rows_from_csv(lab_text, lab_name), lab_name);

  const std::string form_name = cfg["form"].get<std::string>();
  require(form_name == "full" || form_name == "literal", "form must be 'full' or 'literal'");
  deep::TrainOptions opts;
  opts.epochs = cfg["epochs"].get<Index>();
  opts.batch_size = cfg["batch_size"].get<Index>();
  opts.learning_rate = cfg["learning_rate"].get<double>();
  opts.momentum = cfg["momentum"].get<double>();
  opts.seed = ctx.seed;
  opts.form = form_name == "full" ? deep::LikelihoodForm::Full : deep::LikelihoodForm::Literal;
  const double lambda2 = cfg["lambda2"].get<double>();
  opts.penalty = lambda2 == 0.0 ? deep::Penalty{} : deep::Penalty::proportional(lambda2, all.targets.cols());

  const auto [train_rows, val_rows] = deep::split_indices(all.size(), cfg["validation_fraction"].get<double>(), ctx.seed);
  const deep::SoftLabelBatch train_set = all.subset(train_rows);
  const deep::SoftLabelBatch val_set = all.subset(val_rows);
  const deep::SoftLabelBatch* val_ptr = val_rows.empty() ? nullptr : &val_set;

  const auto start = std::chrono::steady_clock::now();
  const deep::TrainResult fit = deep::train(train_set, deep::init_heads(train_set, ctx.seed), opts, val_ptr);
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.train_loss = fit.train_loss;
  out.validation_loss = fit.validation_loss;
  out.validation_accuracy = val_ptr ? deep::accuracy(val_set, fit.heads, opts.form) : deep::accuracy(train_set, fit.heads, opts.form);
  out.heads_json = io::heads_to_json(fit.heads);

  io::Table trace;
  trace.header = {"epoch", "train_loss"};
  if (val_ptr) trace.header.push_back("validation_loss");
  trace.values.resize(static_cast<Index>(fit.train_loss.size()), static_cast<Index>(trace.header.size()));
  for (std::size_t e = 0; e < fit.train_loss.size(); ++e) {
    trace.values(static_cast<Index>(e), 0) = static_cast<double>(e + 1);
    trace.values(static_cast<Index>(e), 1) = fit.train_loss[e];
    if (val_ptr) trace.values(static_cast<Index>(e), 2) = fit.validation_loss[e];
  }

  std::vector<ManifestEntry> inputs = {{"config", cfg.dump()}, {emb_name, emb_text}, {lab_name, lab_text}};
  std::vector<ManifestEntry> outputs = {{"heads.json", out.heads_json}, {"trace.csv", io::table_to_csv(trace)}};
  if (cfg["embeddings"].get<std::string>().empty()) {
    outputs.push_back({emb_name, emb_text});
    outputs.push_back({lab_name, lab_text});
  }
  const std::string cov_name = cfg["covariances"].get<std::string>();
  if (!cov_name.empty()) {
    const std::string cov_text = io::read_text_file(cov_name);
    inputs.push_back({cov_name, cov_text});
    out.spectrum = deep::spectrum_report(covariances_from_json(cov_text, cov_name));
    io::Table spec;
    Index width = 0;
    for (const auto& s : out.spectrum) width = std::max(width, s.size());
    spec.header.push_back("matrix");
    for (Index k = 0; k < width; ++k) spec.header.push_back("eig" + std::to_string(k + 1));
    spec.values = Matrix::Zero(static_cast<Index>(out.spectrum.size()), width);
    for (std::size_t m = 0; m < out.spectrum.size(); ++m) {
      spec.labels.push_back(std::to_string(m));
      spec.values.row(static_cast<Index>(m)).head(out.spectrum[m].size()) = out.spectrum[m].transpose();
    }
    outputs.push_back({"spectrum.csv", io::table_to_csv(spec)});
  }
  write_outputs(ctx.out_dir, "deep", cfg, ctx.seed, inputs, outputs,
                {{"validation_accuracy", out.validation_accuracy}, {"validation_rows", val_rows.size()}});
  return out;
}

}  // namespace mppca::harness
