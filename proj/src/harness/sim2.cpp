#include "mppca/harness.hpp"

#include "mppca/baselines.hpp"
#include "mppca/dpmix.hpp"
#include "mppca/io.hpp"
#include "mppca/random.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace mppca::harness {

namespace {

json sim2_defaults() {
  return {{"points_per_cluster", 100},
          {"centers", {{0.0, 6.0}, {0.0, -6.0}, {6.0, 0.0}, {-6.0, 0.0}}},
          {"long_axis", {0, 0, 1, 1}},
          {"major_sd", 1.5},
          {"minor_sd", 0.3},
          {"rotation_deg", 0.0},
          {"anchor", {0.0, 0.0}},
          {"grid", {{"half_width", 5.0}, {"steps", 51}}},
          {"hyper",
           {{"gamma", 1.0},
            {"gamma_star", 1.0},
            {"alpha_mu", 0.01},
            {"alpha_nu", 1.0},
            {"a_tau", 1.0},
            {"b_tau", 1.0},
            {"xi_var", 0.01}}},
          {"epochs", 50},
          {"new_category_samples", 64},
          {"contour", {{"level", 0.5}, {"rays", 180}, {"max_radius", 8.0}, {"scan_steps", 80}, {"bisection_steps", 30}}}};
}

dpmix::Hyperparams hyper_from(const json& h) {
  dpmix::Hyperparams out{h["gamma"].get<double>(),  h["gamma_star"].get<double>(), h["alpha_mu"].get<double>(),
                         h["alpha_nu"].get<double>(), h["a_tau"].get<double>(),      h["b_tau"].get<double>(),
                         h["xi_var"].get<double>()};
  out.validate();
  return out;
}

Vector vec2(const json& j) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 2, "sim2 points must be two-dimensional");
  Vector out(2);
  out << v[0], v[1];
  return out;
}

json contour_json(const contour::Contour& c) {
  return {{"major_axis_deg", c.major_axis_deg()},
          {"moment_axis_deg", c.moment_axis_deg()},
          {"anisotropy", c.anisotropy()},
          {"axis_ratio", c.axis_ratio()},
          {"axis_deviation_deg", contour::deviation_from_coordinate_axes(c.major_axis_deg())},
          {"bounded", c.bounded},
          {"radii", c.radii}};
}

}  // namespace

const Sim2Model& Sim2Result::model(const std::string& name) const {
  for (const auto& m : models)
    if (m.name == name) return m;
  throw std::out_of_range("no sim2 model named '" + name + "'");
}

Sim2Result run_sim2(const CommandContext& ctx) {
  Sim2Result result;
  json cfg = merge_config(sim2_defaults(), ctx.config);
  if (ctx.samples) cfg["points_per_cluster"] = *ctx.samples;
  result.config = cfg;

  const Index per = cfg["points_per_cluster"].get<Index>();
  require(per >= 2, "sim2 needs at least two points per cluster");
  const auto centers = cfg["centers"];
  const auto axes = cfg["long_axis"].get<std::vector<int>>();
  require(centers.size() == axes.size() && !axes.empty(), "sim2 needs one long axis per center");
  const double major = cfg["major_sd"].get<double>();
  const double minor = cfg["minor_sd"].get<double>();
  require(major > 0 && minor > 0, "sim2 standard deviations must be positive");
  const double rot = cfg["rotation_deg"].get<double>() * M_PI / 180.0;
  Matrix r(2, 2);
  r << std::cos(rot), -std::sin(rot), std::sin(rot), std::cos(rot);

  Rng rng = make_rng(ctx.seed, 0x73696d32ULL);
  Dataset data;
  data.x.resize(per * static_cast<Index>(axes.size()), 2);
  std::vector<Index> truth;
  for (std::size_t c = 0; c < axes.size(); ++c) {
    require(axes[c] == 0 || axes[c] == 1, "long_axis entries must be 0 or 1");
    Vector sd(2);
    sd << (axes[c] == 0 ? major : minor), (axes[c] == 0 ? minor : major);
    const Vector center = vec2(centers[c]);
    for (Index i = 0; i < per; ++i) {
      const Vector z = standard_normal(rng, 2);
      const Vector x = r * (center + sd.cwiseProduct(z));
      data.x.row(static_cast<Index>(c) * per + i) = x.transpose();
      data.labels.push_back(static_cast<int>(c));
      truth.push_back(static_cast<Index>(c));
    }
  }
  const Vector anchor = r * vec2(cfg["anchor"]);

  const dpmix::Hyperparams hyper = hyper_from(cfg["hyper"]);
  const Index epochs = cfg["epochs"].get<Index>();
  const Index new_samples = cfg["new_category_samples"].get<Index>();
  Dataset unlabeled{data.x, {}};

  dpmix::UnsupervisedOptions shared_opts{epochs, ctx.seed, true, 3};
  const dpmix::FitResult mppca = dpmix::fit_unsupervised(unlabeled, hyper, shared_opts);
  dpmix::UnsupervisedOptions flat_opts{epochs, ctx.seed, false, 3};
  const dpmix::FitResult flat = dpmix::fit_unsupervised(unlabeled, hyper, flat_opts);
  result.mppca_ari = dpmix::adjusted_rand_index(mppca.assignments, truth);
  result.mppca_categories = mppca.model.num_categories();
  result.mppca_components = static_cast<Index>(mppca.model.global_components.size());

  const dpmix::GeneralizationOptions gen{false, true, new_samples, ctx.seed};
  const dpmix::Generalizer g_mppca(mppca.model, anchor, gen);
  const dpmix::Generalizer g_flat(flat.model, anchor, gen);

  const baselines::ExemplarStore ex = baselines::fit_exemplar(data, false);
  const baselines::PrototypeStore pr = baselines::fit_prototype(data, false);
  // Baselines: the anchor is a one-member category competing with the trained
  // categories and a constant background equal to the similarity at radius 1.
  auto g_exemplar = [&](const Vector& y) {
    const Vector alt = baselines::exemplar_log_similarity(y, ex);
    Vector all(alt.size() + 2);
    all << -ex.sensitivity * (y - anchor).norm(), alt, -ex.sensitivity;
    return std::exp(all(0) - log_sum_exp(all));
  };
  auto g_prototype = [&](const Vector& y) {
    const Vector alt = baselines::prototype_log_similarity(y, pr);
    Vector all(alt.size() + 2);
    all << -pr.sensitivity * (y - anchor).squaredNorm(), alt, -pr.sensitivity;
    return std::exp(all(0) - log_sum_exp(all));
  };

  const std::vector<std::pair<std::string, std::function<double(const Vector&)>>> fns = {
      {"mppca", [&](const Vector& y) { return g_mppca(y); }},
      {"dp_gaussian", [&](const Vector& y) { return g_flat(y); }},
      {"exemplar", g_exemplar},
      {"prototype", g_prototype}};

  const double half = cfg["grid"]["half_width"].get<double>();
  const Index steps = cfg["grid"]["steps"].get<Index>();
  require(half > 0 && steps >= 2, "sim2 grid needs a positive half width and at least two steps");
  for (Index i = 0; i < steps; ++i) {
    const double t = -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(steps - 1);
    result.xs.push_back(anchor(0) + t);
    result.ys.push_back(anchor(1) + t);
  }

  contour::ContourOptions copts;
  copts.level = cfg["contour"]["level"].get<double>();
  copts.rays = cfg["contour"]["rays"].get<Index>();
  copts.max_radius = cfg["contour"]["max_radius"].get<double>();
  copts.scan_steps = cfg["contour"]["scan_steps"].get<Index>();
  copts.bisection_steps = cfg["contour"]["bisection_steps"].get<Index>();

  json models = json::object();
  for (const auto& [name, f] : fns) {
    Sim2Model m;
    m.name = name;
    m.grid.resize(steps, steps);
    json rows = json::array();
    for (Index iy = 0; iy < steps; ++iy) {
      std::vector<double> row;
      for (Index ix = 0; ix < steps; ++ix) {
        Vector y(2);
        y << result.xs[static_cast<std::size_t>(ix)], result.ys[static_cast<std::size_t>(iy)];
        m.grid(iy, ix) = f(y);
        row.push_back(m.grid(iy, ix));
      }
      rows.push_back(row);
    }
    m.contour = contour::trace_contour(f, anchor, copts);
    models[name] = {{"grid", rows}, {"contour", contour_json(m.contour)}};
    result.models.push_back(std::move(m));
  }

  result.document = {{"anchor", {anchor(0), anchor(1)}},
                     {"xs", result.xs},
                     {"ys", result.ys},
                     {"models", models},
                     {"training",
                      {{"mppca",
                        {{"categories", result.mppca_categories},
                         {"components", result.mppca_components},
                         {"ari", result.mppca_ari},
                         {"objective", mppca.objective_trace.back()}}},
                       {"dp_gaussian",
                        {{"categories", flat.model.num_categories()},
                         {"ari", dpmix::adjusted_rand_index(flat.assignments, truth)}}},
                       {"exemplar_sensitivity", ex.sensitivity},
                       {"prototype_sensitivity", pr.sensitivity}}}};

  io::IdRows train_rows;
  for (Index i = 0; i < data.size(); ++i) train_rows.ids.push_back(std::to_string(data.labels[static_cast<std::size_t>(i)]));
  train_rows.values = data.x;
  write_outputs(ctx.out_dir, "sim2", cfg, ctx.seed, {{"config", cfg.dump()}, {"training.csv", io::id_rows_to_csv(train_rows)}},
                {{"sim2.json", result.document.dump(2) + "\n"},
                 {"mppca_model.json", io::model_to_json(mppca.model)}});
  return result;
}

}  // namespace mppca::harness
