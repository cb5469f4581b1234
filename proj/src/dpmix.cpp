#include "mppca/dpmix.hpp"

#include "mppca/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

namespace mppca::dpmix {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal_iso(const Vector& x, const Vector& mean, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * (kLog2Pi + std::log(var)) + (x - mean).squaredNorm() / var);
}

double log_normal_iso0(const Vector& x, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * (kLog2Pi + std::log(var)) + x.squaredNorm() / var);
}

double log_inverse_gamma(double v, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(v) - scale / v;
}

int canonical_sign(const Vector& w) {
  Index arg = 0;
  w.cwiseAbs().maxCoeff(&arg);
  return w(arg) < 0 ? -1 : 1;
}

// Sufficient statistics of the loadings owned by one component. Component
// means are integrated out: nu ~ N(0, I/alpha), w | nu ~ N(nu, xi I).
struct ComponentStats {
  Index n = 0;
  Vector sum;
  double sumsq = 0.0;

  explicit ComponentStats(Index d) : sum(Vector::Zero(d)) {}

  void add(const Vector& y) {
    ++n;
    sum += y;
    sumsq += y.squaredNorm();
  }
  void remove(const Vector& y) {
    --n;
    sum -= y;
    sumsq -= y.squaredNorm();
    if (n == 0) {
      sum.setZero();
      sumsq = 0.0;
    }
  }
  double precision(double alpha, double xi) const { return alpha + static_cast<double>(n) / xi; }
  Vector posterior_mean(double alpha, double xi) const { return sum / (xi * precision(alpha, xi)); }
  double predictive_var(double alpha, double xi) const { return 1.0 / precision(alpha, xi) + xi; }

  double log_predictive(const Vector& y, double alpha, double xi) const {
    return log_normal_iso(y, posterior_mean(alpha, xi), predictive_var(alpha, xi));
  }

  double log_marginal(double alpha, double xi) const {
    if (n == 0) return 0.0;
    const double d = static_cast<double>(sum.size());
    const double p = precision(alpha, xi);
    return -0.5 * static_cast<double>(n) * d * (kLog2Pi + std::log(xi)) + 0.5 * d * std::log(alpha / p) -
           0.5 * (sumsq / xi - sum.squaredNorm() / (xi * xi * p));
  }
};

// Collapsed top-level state over a set of loading vectors.
class TopLevelState {
 public:
  TopLevelState(Index dim, const Hyperparams& hyper) : dim_(dim), hyper_(hyper) {}

  Index add_component() {
    for (std::size_t j = 0; j < stats_.size(); ++j)
      if (stats_[j].n == 0) return static_cast<Index>(j);
    stats_.emplace_back(dim_);
    return static_cast<Index>(stats_.size() - 1);
  }

  ComponentStats& at(Index j) { return stats_[static_cast<std::size_t>(j)]; }
  const ComponentStats& at(Index j) const { return stats_[static_cast<std::size_t>(j)]; }
  Index slots() const { return static_cast<Index>(stats_.size()); }

  Index members() const {
    Index m = 0;
    for (const auto& s : stats_) m += s.n;
    return m;
  }

  double log_pred_new(const Vector& y) const {
    return log_normal_iso0(y, 1.0 / hyper_.alpha_nu + hyper_.xi_var);
  }
  double log_pred(Index j, const Vector& y) const {
    return at(j).log_predictive(y, hyper_.alpha_nu, hyper_.xi_var);
  }

  // Best placement for a loading not currently in the state: returns the
  // change in the collapsed log joint (including the CRP denominator) and the
  // chosen component (-1 for a new one) and sign.
  struct Placement {
    double score = kNegInf;
    Index component = -1;
    int sign = 1;
  };
  Placement best_placement(const Vector& w, int default_sign) const {
    Placement best;
    best.score = std::log(hyper_.gamma_star) + log_pred_new(w);
    best.sign = default_sign;
    for (Index j = 0; j < slots(); ++j) {
      if (at(j).n == 0) continue;
      for (int s : {1, -1}) {
        const double sc = std::log(static_cast<double>(at(j).n)) + log_pred(j, s * w);
        if (sc > best.score) best = {sc, j, s};
      }
    }
    best.score -= std::log(hyper_.gamma_star + static_cast<double>(members()));
    return best;
  }

  double objective() const {
    std::vector<Index> sizes;
    double total = 0.0;
    for (const auto& s : stats_) {
      if (s.n == 0) continue;
      sizes.push_back(s.n);
      total += s.log_marginal(hyper_.alpha_nu, hyper_.xi_var);
    }
    return total + crp_log_partition_prob(sizes, hyper_.gamma_star);
  }

 private:
  Index dim_;
  Hyperparams hyper_;
  std::vector<ComponentStats> stats_;
};

// One ICM sweep over (component, sign) of every loading in `ys`. Returns the
// number of changed items.
Index top_level_sweep(TopLevelState& state, const std::vector<Vector>& ys, std::vector<Index>& comp,
                      std::vector<int>& sign, const Hyperparams& hyper) {
  Index changed = 0;
  for (std::size_t c = 0; c < ys.size(); ++c) {
    const Index old = comp[c];
    state.at(old).remove(sign[c] * ys[c]);
    const bool old_empty = state.at(old).n == 0;

    // Score relative to the state without c; the CRP denominator is common.
    auto score_of = [&](Index j, int s) {
      if (j < 0 || state.at(j).n == 0) return std::log(hyper.gamma_star) + state.log_pred_new(ys[c]);
      return std::log(static_cast<double>(state.at(j).n)) + state.log_pred(j, s * ys[c]);
    };
    const double current = score_of(old_empty ? -1 : old, sign[c]);
    double best = current;
    Index best_j = old;
    int best_s = sign[c];
    const double margin = 1e-12 * std::max(1.0, std::abs(current));
    for (Index j = 0; j < state.slots(); ++j) {
      if (state.at(j).n == 0) continue;
      for (int s : {1, -1}) {
        const double sc = score_of(j, s);
        if (sc > best + margin) {
          best = sc;
          best_j = j;
          best_s = s;
        }
      }
    }
    if (!old_empty) {
      const double sc = score_of(-1, sign[c]);
      if (sc > best + margin) {
        best = sc;
        best_j = state.add_component();
        best_s = sign[c];
      }
    }
    if (best_j != old || best_s != sign[c]) ++changed;
    comp[c] = best_j;
    sign[c] = best_s;
    state.at(best_j).add(best_s * ys[c]);
  }
  return changed;
}

std::vector<Index> compact_components(std::vector<Index>& comp) {
  std::map<Index, Index> remap;
  std::vector<Index> order;
  for (Index& j : comp) {
    auto [it, inserted] = remap.emplace(j, static_cast<Index>(remap.size()));
    if (inserted) order.push_back(j);
    j = it->second;
  }
  return order;
}

// Stick weights with the final stick taking the remaining mass.
Vector truncated_sticks(Rng& rng, Index truncation, double concentration) {
  Vector betas(truncation);
  for (Index k = 0; k + 1 < truncation; ++k) betas(k) = sample_beta(rng, 1.0, concentration);
  betas(truncation - 1) = 1.0;
  Vector w(truncation);
  double remaining = 1.0;
  for (Index k = 0; k < truncation; ++k) {
    w(k) = betas(k) * remaining;
    remaining *= 1.0 - betas(k);
  }
  return w;
}

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

// ---- Hyperparams / MixtureModel ----------------------------------------------

void Hyperparams::validate() const {
  for (double v : {gamma, gamma_star, alpha_mu, alpha_nu, a_tau, b_tau, xi_var}) {
    require(v > 0 && std::isfinite(v), "hyperparameters must be positive and finite");
  }
}

Hyperparams Hyperparams::with_default_xi(double gamma, double gamma_star, double alpha_mu,
                                         double alpha_nu, double a_tau, double b_tau) {
  return {gamma, gamma_star, alpha_mu, alpha_nu, a_tau, b_tau, 0.01 / alpha_nu};
}

Index MixtureModel::dim() const {
  require(!categories.empty(), "mixture model is empty");
  return categories.front().dim();
}

std::vector<Index> MixtureModel::component_sizes() const {
  std::vector<Index> sizes(global_components.size(), 0);
  for (Index u : ownership) ++sizes[static_cast<std::size_t>(u)];
  return sizes;
}

double MixtureModel::mean_sigma2() const {
  require(!categories.empty(), "mixture model is empty");
  double s = 0.0;
  for (const auto& c : categories) s += c.sigma2;
  return s / static_cast<double>(categories.size());
}

void MixtureModel::validate() const {
  hyper.validate();
  require(!categories.empty(), "mixture model is empty");
  require(counts.size() == categories.size(), "one count per category required");
  const Index d = dim();
  for (const auto& c : categories) {
    c.validate();
    require_dim(c.dim(), d, "category dimension");
    require(c.rank() == 1, "mixture categories must be rank-1");
  }
  for (Index c : counts) require(c >= 0, "counts must be nonnegative");
  if (!labels.empty()) require(labels.size() == categories.size(), "one label per category required");
  if (shared) {
    require(ownership.size() == categories.size(), "one ownership index per category required");
    for (Index u : ownership) {
      require(u >= 0 && u < static_cast<Index>(global_components.size()),
              "ownership must index an existing component");
    }
    for (const auto& nu : global_components) require_dim(nu.size(), d, "component dimension");
  } else {
    require(ownership.empty() && global_components.empty(),
            "unshared models carry no component structure");
  }
}

// ---- Priors -------------------------------------------------------------------

Vector crp_assignment_probs(std::span<const Index> counts, double gamma) {
  require(gamma > 0, "CRP concentration must be positive");
  const Index k = static_cast<Index>(counts.size());
  Vector p(k + 1);
  double total = gamma;
  for (Index i = 0; i < k; ++i) {
    require(counts[static_cast<std::size_t>(i)] >= 0, "CRP counts must be nonnegative");
    p(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]);
    total += p(i);
  }
  p(k) = gamma;
  return p / total;
}

double crp_log_partition_prob(std::span<const Index> counts, double gamma) {
  require(gamma > 0, "CRP concentration must be positive");
  double n = 0.0;
  double out = std::lgamma(gamma);
  for (Index c : counts) {
    if (c <= 0) continue;
    out += std::log(gamma) + std::lgamma(static_cast<double>(c));
    n += static_cast<double>(c);
  }
  return out - std::lgamma(gamma + n);
}

std::vector<Index> sample_crp_counts(Index n, double gamma, Rng& rng) {
  require(gamma > 0, "CRP concentration must be positive");
  std::vector<Index> counts;
  for (Index i = 0; i < n; ++i) {
    std::uniform_real_distribution<double> unif(0.0, static_cast<double>(i) + gamma);
    double u = unif(rng);
    std::size_t k = 0;
    for (; k < counts.size(); ++k) {
      u -= static_cast<double>(counts[k]);
      if (u < 0) break;
    }
    if (k == counts.size()) counts.push_back(1);
    else ++counts[k];
  }
  return counts;
}

StickBreaking stick_breaking_weights(const Vector& betas) {
  StickBreaking out;
  out.weights.resize(betas.size());
  double remaining = 1.0;
  for (Index k = 0; k < betas.size(); ++k) {
    require(betas(k) > 0.0 && betas(k) < 1.0, "stick-breaking proportions must lie in (0, 1)");
    out.weights(k) = betas(k) * remaining;
    remaining *= 1.0 - betas(k);
  }
  out.residual = remaining;
  return out;
}

// ---- Generative process ---------------------------------------------------------

Generated generate(const Hyperparams& hyper, Index dim, Index n, Index truncation,
                   std::uint64_t seed) {
  hyper.validate();
  require(dim >= 1, "dimension must be positive");
  require(n >= 1, "sample count must be positive");
  require(truncation >= 1, "truncation must be at least 1");
  Rng rng = make_rng(seed);

  const double nu_sd = 1.0 / std::sqrt(hyper.alpha_nu);
  const double mu_sd = 1.0 / std::sqrt(hyper.alpha_mu);
  const double xi_sd = std::sqrt(hyper.xi_var);

  std::vector<Vector> nu;
  for (Index j = 0; j < truncation; ++j) nu.push_back(nu_sd * standard_normal(rng, dim));
  const Vector pi_star = truncated_sticks(rng, truncation, hyper.gamma_star);

  std::vector<Index> owner(static_cast<std::size_t>(truncation));
  std::vector<PpcaParams> cats(static_cast<std::size_t>(truncation));
  for (Index c = 0; c < truncation; ++c) {
    auto& cat = cats[static_cast<std::size_t>(c)];
    owner[static_cast<std::size_t>(c)] = static_cast<Index>(sample_categorical(rng, as_span(pi_star)));
    cat.W = nu[static_cast<std::size_t>(owner[static_cast<std::size_t>(c)])] + xi_sd * standard_normal(rng, dim);
    cat.mu = mu_sd * standard_normal(rng, dim);
  }
  const Vector pi = truncated_sticks(rng, truncation, hyper.gamma);
  for (auto& cat : cats) cat.sigma2 = sample_inverse_gamma(rng, hyper.a_tau, hyper.b_tau);

  Generated g;
  g.data.x.resize(n, dim);
  g.data.labels.resize(static_cast<std::size_t>(n));
  g.z.resize(n);
  std::vector<Index> raw(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index c = static_cast<Index>(sample_categorical(rng, as_span(pi)));
    const auto& cat = cats[static_cast<std::size_t>(c)];
    const double z = standard_normal(rng, 1)(0);
    const Vector eps = standard_normal(rng, dim);
    raw[static_cast<std::size_t>(i)] = c;
    g.z(i) = z;
    g.data.x.row(i) = (cat.mu + cat.W.col(0) * z + std::sqrt(cat.sigma2) * eps).transpose();
  }

  // Keep realized categories in index order, and the components they own.
  std::vector<Index> cat_map(static_cast<std::size_t>(truncation), -1);
  std::vector<Index> counts(static_cast<std::size_t>(truncation), 0);
  for (Index c : raw) ++counts[static_cast<std::size_t>(c)];
  std::vector<Index> comp_map(static_cast<std::size_t>(truncation), -1);
  for (Index c = 0; c < truncation; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    cat_map[static_cast<std::size_t>(c)] = g.truth.num_categories();
    g.truth.categories.push_back(cats[static_cast<std::size_t>(c)]);
    g.truth.counts.push_back(counts[static_cast<std::size_t>(c)]);
    g.truth.labels.push_back(static_cast<int>(g.truth.labels.size()));
    const Index u = owner[static_cast<std::size_t>(c)];
    if (comp_map[static_cast<std::size_t>(u)] < 0) {
      comp_map[static_cast<std::size_t>(u)] = static_cast<Index>(g.truth.global_components.size());
      g.truth.global_components.push_back(nu[static_cast<std::size_t>(u)]);
    }
    g.truth.ownership.push_back(comp_map[static_cast<std::size_t>(u)]);
  }
  for (Index i = 0; i < n; ++i) {
    g.data.labels[static_cast<std::size_t>(i)] =
        static_cast<int>(cat_map[static_cast<std::size_t>(raw[static_cast<std::size_t>(i)])]);
  }
  g.truth.hyper = hyper;
  g.truth.shared = true;
  return g;
}

Generated generate_structured(const Hyperparams& hyper, Index dim, const std::vector<Index>& owner,
                              Index points_per_category, std::uint64_t seed) {
  hyper.validate();
  require(dim >= 1, "dimension must be positive");
  require(!owner.empty(), "need at least one category");
  require(points_per_category >= 1, "points per category must be positive");
  const Index num_comp = *std::max_element(owner.begin(), owner.end()) + 1;
  for (Index u : owner) require(u >= 0, "owner indices must be nonnegative");
  Rng rng = make_rng(seed);

  Generated g;
  for (Index j = 0; j < num_comp; ++j) {
    g.truth.global_components.push_back(standard_normal(rng, dim) / std::sqrt(hyper.alpha_nu));
  }
  const Index num_cat = static_cast<Index>(owner.size());
  const Index n = num_cat * points_per_category;
  g.data.x.resize(n, dim);
  g.z.resize(n);
  for (Index c = 0; c < num_cat; ++c) {
    PpcaParams cat;
    const Index u = owner[static_cast<std::size_t>(c)];
    cat.W = g.truth.global_components[static_cast<std::size_t>(u)] +
            std::sqrt(hyper.xi_var) * standard_normal(rng, dim);
    cat.mu = standard_normal(rng, dim) / std::sqrt(hyper.alpha_mu);
    cat.sigma2 = sample_inverse_gamma(rng, hyper.a_tau, hyper.b_tau);
    for (Index i = 0; i < points_per_category; ++i) {
      const Index row = c * points_per_category + i;
      const double z = standard_normal(rng, 1)(0);
      g.z(row) = z;
      g.data.x.row(row) =
          (cat.mu + cat.W.col(0) * z + std::sqrt(cat.sigma2) * standard_normal(rng, dim)).transpose();
      g.data.labels.push_back(static_cast<int>(c));
    }
    g.truth.categories.push_back(cat);
    g.truth.counts.push_back(points_per_category);
    g.truth.labels.push_back(static_cast<int>(c));
    g.truth.ownership.push_back(u);
  }
  g.truth.hyper = hyper;
  g.truth.shared = true;
  return g;
}

// ---- Top-level inference ---------------------------------------------------------

TopLevelFit fit_components(std::span<const PpcaParams> categories, const Hyperparams& hyper,
                           const TopLevelOptions& options) {
  hyper.validate();
  require(!categories.empty(), "top-level inference needs at least one category");
  const Index d = categories.front().dim();
  std::vector<Vector> ys;
  std::vector<int> sign;
  for (const auto& c : categories) {
    require(c.rank() == 1, "top-level inference expects rank-1 categories");
    require_dim(c.dim(), d, "category dimension");
    Vector y = c.W.col(0);
    if (options.unit_normalize && y.norm() > 0) y /= y.norm();
    ys.push_back(y);
    sign.push_back(canonical_sign(y));
  }

  TopLevelState state(d, hyper);
  std::vector<Index> comp(ys.size(), -1);
  // Greedy sequential initialization.
  for (std::size_t c = 0; c < ys.size(); ++c) {
    auto place = state.best_placement(ys[c], sign[c]);
    const Index j = place.component < 0 ? state.add_component() : place.component;
    comp[c] = j;
    sign[c] = place.sign;
    state.at(j).add(sign[c] * ys[c]);
  }

  TopLevelFit fit;
  fit.objective_trace.push_back(state.objective());
  for (Index sweep = 0; sweep < options.max_sweeps; ++sweep) {
    const Index changed = top_level_sweep(state, ys, comp, sign, hyper);
    fit.objective_trace.push_back(state.objective());
    if (changed == 0) break;
  }

  const std::vector<Index> order = compact_components(comp);
  for (Index j : order) fit.components.push_back(state.at(j).posterior_mean(hyper.alpha_nu, hyper.xi_var));
  fit.ownership = comp;
  fit.signs = sign;
  return fit;
}

FitResult fit_supervised(const Dataset& data, const Hyperparams& hyper,
                         const SupervisedOptions& options) {
  hyper.validate();
  require(data.labeled(), "fit_supervised needs labeled data");
  require_dim(static_cast<Index>(data.labels.size()), data.size(), "label count");

  std::map<int, std::vector<Index>> groups;
  for (Index i = 0; i < data.size(); ++i) groups[data.labels[static_cast<std::size_t>(i)]].push_back(i);

  FitResult result;
  MixtureModel& model = result.model;
  std::map<int, Index> label_index;
  for (const auto& [label, rows] : groups) {
    if (rows.size() < 2) {
      throw std::invalid_argument("category " + std::to_string(label) + " has " +
                                  std::to_string(rows.size()) +
                                  " observation(s); fit_supervised needs at least two per category "
                                  "(use fewshot::new_category_predictive for one-shot categories)");
    }
    Matrix x(static_cast<Index>(rows.size()), data.dim());
    for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Index>(r)) = data.x.row(rows[r]);
    PpcaParams p = fit_mle(x, 1);
    const double floor = options.relative_sigma2_floor * sample_covariance(x).trace() /
                         static_cast<double>(data.dim());
    p.sigma2 = std::max({p.sigma2, floor, std::numeric_limits<double>::min()});
    label_index[label] = model.num_categories();
    model.categories.push_back(std::move(p));
    model.counts.push_back(static_cast<Index>(rows.size()));
    model.labels.push_back(label);
  }

  const TopLevelFit top = fit_components(model.categories, hyper, options.top);
  for (std::size_t c = 0; c < model.categories.size(); ++c) {
    model.categories[c].W *= static_cast<double>(top.signs[c]);
  }
  model.global_components = top.components;
  model.ownership = top.ownership;
  model.hyper = hyper;
  model.shared = true;

  result.assignments.resize(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    result.assignments[static_cast<std::size_t>(i)] = label_index.at(data.labels[static_cast<std::size_t>(i)]);
  }
  result.objective_trace = top.objective_trace;
  return result;
}

// ---- Unsupervised inference ----------------------------------------------------

namespace {

class UnsupervisedState {
 public:
  UnsupervisedState(const Dataset& data, const Hyperparams& hyper, bool shared, Index em_steps)
      : data_(&data), hyper_(hyper), shared_(shared), em_steps_(em_steps), top_(data.dim(), hyper) {}

  struct Category {
    PpcaParams params;
    std::vector<Index> members;
    Index comp = -1;
    int sign = 1;
    bool alive = true;
  };

  Index dim() const { return data_->dim(); }

  double log_theta_prior(const PpcaParams& p) const {
    return log_normal_iso0(p.mu, 1.0 / hyper_.alpha_mu) +
           log_inverse_gamma(p.sigma2, hyper_.a_tau, hyper_.b_tau);
  }

  Vector loading(const Category& c) const { return c.params.W.col(0); }

  // Prior on a category's loading implied by everything else: mean and
  // isotropic variance.
  std::pair<Vector, double> loading_prior(const Category& c) const {
    if (!shared_) return {Vector::Zero(dim()), 1.0 / hyper_.alpha_nu};
    const auto& st = top_.at(c.comp);
    ComponentStats rest = st;
    rest.remove(c.sign * loading(c));
    const Vector m = rest.n == 0 ? Vector::Zero(dim()) : rest.posterior_mean(hyper_.alpha_nu, hyper_.xi_var);
    const double v = rest.n == 0 ? 1.0 / hyper_.alpha_nu + hyper_.xi_var
                                 : rest.predictive_var(hyper_.alpha_nu, hyper_.xi_var);
    return {static_cast<double>(c.sign) * m, v};
  }

  // Generalized EM step for one category's (mu, w, sigma2) under prior
  // mu ~ N(0, I/alpha_mu), w ~ N(w_mean, w_var I), sigma2 ~ IG(a, b).
  PpcaParams em_step(const PpcaParams& p, const std::vector<Index>& rows, const Vector& w_mean,
                     double w_var) const {
    const Index d = dim();
    const double n = static_cast<double>(rows.size());
    const Vector w = p.W.col(0);
    const double b = w.squaredNorm() + p.sigma2;
    Vector sx = Vector::Zero(d), szx = Vector::Zero(d);
    double sz = 0.0, szz = 0.0;
    std::vector<double> ez(rows.size()), ezz(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Vector x = data_->x.row(rows[k]).transpose();
      ez[k] = w.dot(x - p.mu) / b;
      ezz[k] = p.sigma2 / b + ez[k] * ez[k];
      sx += x;
      szx += ez[k] * x;
      sz += ez[k];
      szz += ezz[k];
    }
    const double s2 = p.sigma2;
    const double a11 = n / s2 + hyper_.alpha_mu;
    const double a12 = sz / s2;
    const double a22 = szz / s2 + 1.0 / w_var;
    const double det = a11 * a22 - a12 * a12;
    const Vector r1 = sx / s2;
    const Vector r2 = szx / s2 + w_mean / w_var;
    PpcaParams out;
    out.mu = (a22 * r1 - a12 * r2) / det;
    out.W = (a11 * r2 - a12 * r1) / det;

    const Vector w_new = out.W.col(0);
    double rss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Vector r = data_->x.row(rows[k]).transpose() - out.mu;
      rss += r.squaredNorm() - 2.0 * ez[k] * w_new.dot(r) + ezz[k] * w_new.squaredNorm();
    }
    rss = std::max(rss, 0.0);
    out.sigma2 = (hyper_.b_tau + 0.5 * rss) / (hyper_.a_tau + 1.0 + 0.5 * n * static_cast<double>(d));
    return out;
  }

  // MAP-style parameters for a category holding only x, given a loading
  // prior; returns the parameters and the total score of opening it (theta
  // prior, top-level placement, likelihood and CRP weight).
  struct NewOption {
    double score = kNegInf;
    PpcaParams params;
    TopLevelState::Placement placement;
  };

  NewOption new_category_option(Index row) const {
    const Vector x = data_->x.row(row).transpose();
    const Index d = dim();
    std::vector<std::pair<Vector, double>> priors;
    if (shared_) {
      priors.emplace_back(Vector::Zero(d), 1.0 / hyper_.alpha_nu + hyper_.xi_var);
      for (Index j = 0; j < top_.slots(); ++j) {
        if (top_.at(j).n == 0) continue;
        priors.emplace_back(top_.at(j).posterior_mean(hyper_.alpha_nu, hyper_.xi_var),
                            top_.at(j).predictive_var(hyper_.alpha_nu, hyper_.xi_var));
      }
    } else {
      priors.emplace_back(Vector::Zero(d), 1.0 / hyper_.alpha_nu);
    }
    NewOption best;
    const std::vector<Index> rows{row};
    for (const auto& [m, v] : priors) {
      PpcaParams p;
      p.mu = x;
      p.W = m;
      p.sigma2 = hyper_.b_tau / (hyper_.a_tau + 1.0 + 0.5 * static_cast<double>(d));
      for (int it = 0; it < 8; ++it) p = em_step(p, rows, m, v);
      NewOption opt;
      opt.params = p;
      double top_term;
      if (shared_) {
        opt.placement = top_.best_placement(p.W.col(0), canonical_sign(p.W.col(0)));
        top_term = opt.placement.score;
      } else {
        top_term = log_normal_iso0(p.W.col(0), 1.0 / hyper_.alpha_nu);
      }
      opt.score = std::log(hyper_.gamma) + log_theta_prior(p) + top_term + marginal_log_density(x, p);
      if (opt.score > best.score) best = std::move(opt);
    }
    return best;
  }

  void attach_loading(Category& c, const TopLevelState::Placement& place) {
    if (!shared_) return;
    c.comp = place.component < 0 ? top_.add_component() : place.component;
    c.sign = place.sign;
    top_.at(c.comp).add(c.sign * loading(c));
  }

  void detach_loading(const Category& c) {
    if (shared_) top_.at(c.comp).remove(c.sign * loading(c));
  }

  // Score of keeping a category that would otherwise vanish: same shape as
  // opening a new category, with its current parameters and placement.
  double singleton_score(const Category& c, const PpcaDensity& dens, Index row) const {
    double top_term;
    if (shared_) {
      const auto& st = top_.at(c.comp);
      const Vector y = c.sign * loading(c);
      const double join = st.n == 0 ? std::log(hyper_.gamma_star) + top_.log_pred_new(y)
                                    : std::log(static_cast<double>(st.n)) + top_.log_pred(c.comp, y);
      top_term = join - std::log(hyper_.gamma_star + static_cast<double>(top_.members()));
    } else {
      top_term = log_normal_iso0(loading(c), 1.0 / hyper_.alpha_nu);
    }
    return std::log(hyper_.gamma) + log_theta_prior(c.params) + top_term +
           dens.log_density(data_->x.row(row).transpose());
  }

  void open_category(Index row, NewOption opt) {
    Category c;
    c.params = std::move(opt.params);
    c.members = {row};
    attach_loading(c, opt.placement);
    // Reuse a dead slot if one exists.
    for (std::size_t k = 0; k < cats_.size(); ++k) {
      if (!cats_[k].alive) {
        cats_[k] = std::move(c);
        densities_[k] = PpcaDensity(cats_[k].params);
        assign_[static_cast<std::size_t>(row)] = static_cast<Index>(k);
        return;
      }
    }
    cats_.push_back(std::move(c));
    densities_.emplace_back(cats_.back().params);
    assign_[static_cast<std::size_t>(row)] = static_cast<Index>(cats_.size() - 1);
  }

  // Sum of the terms of the objective that depend on one category's
  // parameters, given its loading prior.
  double local_objective(const PpcaParams& p, const std::vector<Index>& rows, const Vector& w_mean,
                         double w_var) const {
    const PpcaDensity dens(p);
    double j = log_theta_prior(p) + log_normal_iso(p.W.col(0), w_mean, w_var);
    for (Index row : rows) j += dens.log_density(data_->x.row(row).transpose());
    return j;
  }

  // EM steps from the current parameters. EM cannot leave w = 0, so for
  // categories with two or more members the same steps are also run from the
  // maximum-likelihood fit (both signs) and the best result is kept.
  void refit(std::size_t k, Index steps) {
    Category& c = cats_[k];
    const auto [m, v] = loading_prior(c);
    detach_loading(c);
    auto run = [&](PpcaParams p) {
      for (Index s = 0; s < steps; ++s) p = em_step(p, c.members, m, v);
      return p;
    };
    PpcaParams best = run(c.params);
    double best_score = local_objective(best, c.members, m, v);
    if (c.members.size() >= 2) {
      Matrix x(static_cast<Index>(c.members.size()), dim());
      for (std::size_t r = 0; r < c.members.size(); ++r) x.row(static_cast<Index>(r)) = data_->x.row(c.members[r]);
      const double spread = (x.rowwise() - x.colwise().mean()).squaredNorm();
      if (spread > 0) {
        PpcaParams start = fit_mle(x, 1);
        start.sigma2 = std::max(start.sigma2, 1e-6 * spread / static_cast<double>(x.size()) + 1e-300);
        for (double sgn : {1.0, -1.0}) {
          PpcaParams init = start;
          init.W *= sgn;
          PpcaParams cand = run(init);
          const double score = local_objective(cand, c.members, m, v);
          if (score > best_score + 1e-12 * std::max(1.0, std::abs(best_score))) {
            best_score = score;
            best = std::move(cand);
          }
        }
      }
    }
    c.params = std::move(best);
    if (shared_) top_.at(c.comp).add(c.sign * loading(c));
    densities_[k] = PpcaDensity(c.params);
  }

  void greedy_init(const std::vector<Index>& order) {
    assign_.assign(static_cast<std::size_t>(data_->size()), -1);
    for (Index row : order) {
      const Vector x = data_->x.row(row).transpose();
      double best = kNegInf;
      Index best_k = -1;
      for (std::size_t k = 0; k < cats_.size(); ++k) {
        if (!cats_[k].alive) continue;
        const double sc = std::log(static_cast<double>(cats_[k].members.size())) + densities_[k].log_density(x);
        if (sc > best) {
          best = sc;
          best_k = static_cast<Index>(k);
        }
      }
      NewOption opt = new_category_option(row);
      if (opt.score > best) {
        open_category(row, std::move(opt));
      } else {
        auto& c = cats_[static_cast<std::size_t>(best_k)];
        c.members.push_back(row);
        assign_[static_cast<std::size_t>(row)] = best_k;
        refit(static_cast<std::size_t>(best_k), em_steps_);
      }
    }
  }

  Index assignment_sweep(const std::vector<Index>& order) {
    Index changed = 0;
    for (Index row : order) {
      const std::size_t k0 = static_cast<std::size_t>(assign_[static_cast<std::size_t>(row)]);
      Category& cur = cats_[k0];
      const Vector x = data_->x.row(row).transpose();
      auto& mem = cur.members;
      mem.erase(std::find(mem.begin(), mem.end(), row));
      const bool vanishing = mem.empty();

      double current;
      if (vanishing) {
        detach_loading(cur);
        current = singleton_score(cur, densities_[k0], row);
        // singleton_score evaluates the placement against the detached state.
      } else {
        current = std::log(static_cast<double>(mem.size())) + densities_[k0].log_density(x);
      }
      const double margin = 1e-12 * std::max(1.0, std::abs(current));
      double best = current;
      Index best_k = static_cast<Index>(k0);
      for (std::size_t k = 0; k < cats_.size(); ++k) {
        if (k == k0 || !cats_[k].alive) continue;
        const double sc = std::log(static_cast<double>(cats_[k].members.size())) + densities_[k].log_density(x);
        if (sc > best + margin) {
          best = sc;
          best_k = static_cast<Index>(k);
        }
      }
      NewOption opt = new_category_option(row);
      const bool open_new = opt.score > best + margin;

      if (vanishing && (open_new || best_k != static_cast<Index>(k0))) {
        cur.alive = false;
        cur.members.clear();
      } else if (vanishing) {
        // Stays: restore its top-level membership.
        if (shared_) top_.at(cur.comp).add(cur.sign * loading(cur));
      }

      if (open_new) {
        open_category(row, std::move(opt));
        ++changed;
      } else {
        cats_[static_cast<std::size_t>(best_k)].members.push_back(row);
        assign_[static_cast<std::size_t>(row)] = best_k;
        if (best_k != static_cast<Index>(k0)) ++changed;
      }
    }
    return changed;
  }

  void parameter_step() {
    for (std::size_t k = 0; k < cats_.size(); ++k)
      if (cats_[k].alive) refit(k, em_steps_);
  }

  void merge_into(std::size_t a, std::size_t b) {
    Category& src = cats_[b];
    detach_loading(src);
    for (Index row : src.members) {
      cats_[a].members.push_back(row);
      assign_[static_cast<std::size_t>(row)] = static_cast<Index>(a);
    }
    src.members.clear();
    src.alive = false;
    refit(a, 4 * em_steps_);
    top_level_step();
  }

  // Greedy pairwise merges: each candidate pools two categories, refits the
  // pooled parameters and re-runs the top-level search; the best candidate is
  // kept while it raises the objective.
  Index merge_step() {
    Index merges = 0;
    double current = objective();
    for (;;) {
      std::optional<UnsupervisedState> best;
      double best_j = current;
      for (std::size_t a = 0; a < cats_.size(); ++a) {
        if (!cats_[a].alive) continue;
        for (std::size_t b = a + 1; b < cats_.size(); ++b) {
          if (!cats_[b].alive) continue;
          UnsupervisedState cand = *this;
          cand.merge_into(a, b);
          const double j = cand.objective();
          if (j > best_j + 1e-12 * std::max(1.0, std::abs(best_j))) {
            best_j = j;
            best.emplace(std::move(cand));
          }
        }
      }
      if (!best) return merges;
      *this = std::move(*best);
      current = best_j;
      ++merges;
    }
  }

  Index top_level_step() {
    if (!shared_) return 0;
    std::vector<Vector> ys;
    std::vector<Index> comp;
    std::vector<int> sign;
    std::vector<std::size_t> which;
    for (std::size_t k = 0; k < cats_.size(); ++k) {
      if (!cats_[k].alive) continue;
      // top_level_sweep works with raw loadings and explicit signs.
      ys.push_back(loading(cats_[k]));
      comp.push_back(cats_[k].comp);
      sign.push_back(cats_[k].sign);
      which.push_back(k);
    }
    Index changed = top_level_sweep(top_, ys, comp, sign, hyper_);
    for (std::size_t i = 0; i < which.size(); ++i) {
      cats_[which[i]].comp = comp[i];
      cats_[which[i]].sign = sign[i];
    }
    return changed;
  }

  double objective() const {
    std::vector<Index> sizes;
    double j = 0.0;
    for (std::size_t k = 0; k < cats_.size(); ++k) {
      const auto& c = cats_[k];
      if (!c.alive) continue;
      sizes.push_back(static_cast<Index>(c.members.size()));
      j += log_theta_prior(c.params);
      for (Index row : c.members) j += densities_[k].log_density(data_->x.row(row).transpose());
      if (!shared_) j += log_normal_iso0(loading(c), 1.0 / hyper_.alpha_nu);
    }
    j += crp_log_partition_prob(sizes, hyper_.gamma);
    if (shared_) j += top_.objective();
    return j;
  }

  FitResult finish(std::vector<double> trace) const {
    FitResult r;
    MixtureModel& m = r.model;
    std::vector<Index> cat_map(cats_.size(), -1);
    std::vector<Index> comps;
    for (std::size_t k = 0; k < cats_.size(); ++k) {
      const auto& c = cats_[k];
      if (!c.alive) continue;
      cat_map[k] = m.num_categories();
      PpcaParams p = c.params;
      p.W *= static_cast<double>(c.sign);
      m.categories.push_back(std::move(p));
      m.counts.push_back(static_cast<Index>(c.members.size()));
      m.labels.push_back(static_cast<int>(m.labels.size()));
      if (shared_) comps.push_back(c.comp);
    }
    if (shared_) {
      const std::vector<Index> order = compact_components(comps);
      for (Index j : order) m.global_components.push_back(top_.at(j).posterior_mean(hyper_.alpha_nu, hyper_.xi_var));
      m.ownership = comps;
    }
    m.hyper = hyper_;
    m.shared = shared_;
    r.assignments.resize(assign_.size());
    for (std::size_t i = 0; i < assign_.size(); ++i) r.assignments[i] = cat_map[static_cast<std::size_t>(assign_[i])];
    r.objective_trace = std::move(trace);
    return r;
  }

 private:
  const Dataset* data_;
  Hyperparams hyper_;
  bool shared_;
  Index em_steps_;
  TopLevelState top_;
  std::vector<Category> cats_;
  std::vector<PpcaDensity> densities_;
  std::vector<Index> assign_;
};

}  // namespace

FitResult fit_unsupervised(const Dataset& data, const Hyperparams& hyper,
                           const UnsupervisedOptions& options) {
  hyper.validate();
  require(options.epochs >= 1, "fit_unsupervised needs at least one epoch");
  require(data.size() >= 2, "fit_unsupervised needs at least two observations");
  require(data.dim() >= 1, "fit_unsupervised needs at least one dimension");
  require(data.x.allFinite(), "observations must be finite");
  require(options.em_steps >= 1, "fit_unsupervised needs at least one EM step per epoch");

  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(options.seed, 0x756e7375ULL);
  std::shuffle(order.begin(), order.end(), rng);

  UnsupervisedState state(data, hyper, options.share_components, options.em_steps);
  state.greedy_init(order);
  state.top_level_step();

  std::vector<double> trace{state.objective()};
  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    const Index moved = state.assignment_sweep(order);
    state.parameter_step();
    const Index regrouped = state.top_level_step() + state.merge_step();
    const double j = state.objective();
    const double prev = trace.back();
    trace.push_back(j);
    if (moved == 0 && regrouped == 0 && std::abs(j - prev) <= 1e-10 * (1.0 + std::abs(j))) break;
  }
  return state.finish(std::move(trace));
}

double unsupervised_objective(const Dataset& data, const MixtureModel& model,
                              const std::vector<Index>& assignments) {
  model.validate();
  require_dim(static_cast<Index>(assignments.size()), data.size(), "assignment count");
  const Hyperparams& h = model.hyper;
  const Index k = model.num_categories();
  std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
  double j = 0.0;
  std::vector<PpcaDensity> dens;
  for (const auto& c : model.categories) dens.emplace_back(c);
  for (Index i = 0; i < data.size(); ++i) {
    const Index c = assignments[static_cast<std::size_t>(i)];
    require(c >= 0 && c < k, "assignment out of range");
    ++sizes[static_cast<std::size_t>(c)];
    j += dens[static_cast<std::size_t>(c)].log_density(data.x.row(i).transpose());
  }
  for (const auto& c : model.categories) {
    j += log_normal_iso0(c.mu, 1.0 / h.alpha_mu) + log_inverse_gamma(c.sigma2, h.a_tau, h.b_tau);
    if (!model.shared) j += log_normal_iso0(c.W.col(0), 1.0 / h.alpha_nu);
  }
  j += crp_log_partition_prob(sizes, h.gamma);
  if (model.shared) {
    std::vector<ComponentStats> stats(model.global_components.size(), ComponentStats(model.dim()));
    for (std::size_t c = 0; c < model.categories.size(); ++c) {
      stats[static_cast<std::size_t>(model.ownership[c])].add(model.categories[c].W.col(0));
    }
    std::vector<Index> comp_sizes;
    for (const auto& s : stats) {
      if (s.n == 0) continue;
      comp_sizes.push_back(s.n);
      j += s.log_marginal(h.alpha_nu, h.xi_var);
    }
    j += crp_log_partition_prob(comp_sizes, h.gamma_star);
  }
  return j;
}

// ---- Prediction -------------------------------------------------------------------

NewCategoryPrior::NewCategoryPrior(const MixtureModel& model, Index samples, std::uint64_t seed) {
  model.validate();
  require(samples >= 1, "new-category prior needs at least one draw");
  const Hyperparams& h = model.hyper;
  const Index d = model.dim();
  Rng rng = make_rng(seed, 0x6e657763ULL);

  std::vector<ComponentStats> stats;
  Vector weights;
  if (model.shared) {
    stats.assign(model.global_components.size(), ComponentStats(d));
    for (std::size_t c = 0; c < model.categories.size(); ++c) {
      stats[static_cast<std::size_t>(model.ownership[c])].add(model.categories[c].W.col(0));
    }
    weights.resize(static_cast<Index>(stats.size()) + 1);
    for (std::size_t j = 0; j < stats.size(); ++j) weights(static_cast<Index>(j)) = static_cast<double>(stats[j].n);
    weights(static_cast<Index>(stats.size())) = h.gamma_star;
  }

  for (Index s = 0; s < samples; ++s) {
    PpcaParams p;
    p.mu = standard_normal(rng, d) / std::sqrt(h.alpha_mu);
    p.sigma2 = sample_inverse_gamma(rng, h.a_tau, h.b_tau);
    if (model.shared) {
      const std::size_t j = sample_categorical(rng, as_span(weights));
      if (j < stats.size()) {
        p.W = stats[j].posterior_mean(h.alpha_nu, h.xi_var) +
              std::sqrt(stats[j].predictive_var(h.alpha_nu, h.xi_var)) * standard_normal(rng, d);
      } else {
        p.W = std::sqrt(1.0 / h.alpha_nu + h.xi_var) * standard_normal(rng, d);
      }
    } else {
      p.W = standard_normal(rng, d) / std::sqrt(h.alpha_nu);
    }
    draws_.emplace_back(p);
  }
}

double NewCategoryPrior::log_density(const Vector& x) const {
  Vector logs(static_cast<Index>(draws_.size()));
  for (std::size_t s = 0; s < draws_.size(); ++s) logs(static_cast<Index>(s)) = draws_[s].log_density(x);
  return log_sum_exp(logs) - std::log(static_cast<double>(draws_.size()));
}

CategoryPredictor::CategoryPredictor(const MixtureModel& model, bool include_base_rate,
                                     const PredictOptions& options)
    : include_new_(options.include_new_category) {
  model.validate();
  const Index k = model.num_categories();
  log_prior_.resize(k);
  for (Index c = 0; c < k; ++c) {
    densities_.emplace_back(model.categories[static_cast<std::size_t>(c)]);
    const double count = static_cast<double>(model.counts[static_cast<std::size_t>(c)]);
    log_prior_(c) = include_base_rate ? std::log(count) : 0.0;
  }
  log_prior_new_ = include_base_rate ? std::log(model.hyper.gamma) : 0.0;
  if (include_new_) new_prior_.emplace_back(model, options.new_category_samples, options.seed);
}

Vector CategoryPredictor::log_scores(const Vector& x) const {
  const Index k = static_cast<Index>(densities_.size());
  Vector s(include_new_ ? k + 1 : k);
  for (Index c = 0; c < k; ++c) s(c) = log_prior_(c) + densities_[static_cast<std::size_t>(c)].log_density(x);
  if (include_new_) s(k) = log_prior_new_ + new_prior_.front().log_density(x);
  return s;
}

Prediction CategoryPredictor::predict(const Vector& x) const {
  return Prediction::from_log_scores(log_scores(x), include_new_);
}

Prediction predict_category(const Vector& x, const MixtureModel& model, bool include_base_rate,
                            const PredictOptions& options) {
  return CategoryPredictor(model, include_base_rate, options).predict(x);
}

Generalizer::Generalizer(const MixtureModel& model, const Vector& anchor,
                         const GeneralizationOptions& options)
    : alternatives_(model, options.include_base_rate,
                    PredictOptions{options.include_new_category, options.new_category_samples,
                                   options.seed}) {
  require_dim(anchor.size(), model.dim(), "anchor");
  const fewshot::NewCategoryMixture mix =
      (model.shared && !model.global_components.empty())
          ? fewshot::new_category_predictive(anchor, model)
          : fewshot::new_category_predictive_from_prior(anchor, model.hyper, model.mean_sigma2(),
                                                        options.new_category_samples, options.seed);
  for (std::size_t j = 0; j < mix.terms.size(); ++j) {
    anchor_terms_.push_back({std::log(mix.weights[j]), PpcaDensity(mix.terms[j].as_ppca())});
  }
}

double Generalizer::operator()(const Vector& y) const {
  Vector a(static_cast<Index>(anchor_terms_.size()));
  for (std::size_t j = 0; j < anchor_terms_.size(); ++j) {
    a(static_cast<Index>(j)) = anchor_terms_[j].log_weight + anchor_terms_[j].density.log_density(y);
  }
  const double la = log_sum_exp(a);  // the anchor category holds one member: log 1 = 0
  const Vector alt = alternatives_.log_scores(y);
  Vector all(alt.size() + 1);
  all(0) = la;
  all.tail(alt.size()) = alt;
  return std::exp(la - log_sum_exp(all));
}

Vector generalization_grid(const MixtureModel& model, const Vector& anchor, const Matrix& grid,
                           const GeneralizationOptions& options) {
  const Generalizer g(model, anchor, options);
  Vector out(grid.rows());
  for (Index i = 0; i < grid.rows(); ++i) out(i) = g(grid.row(i).transpose());
  return out;
}

double adjusted_rand_index(std::span<const Index> a, std::span<const Index> b) {
  require(a.size() == b.size(), "labelings must have equal length");
  std::map<std::pair<Index, Index>, double> joint;
  std::map<Index, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto pairs = [](double n) { return n * (n - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, n] : joint) index += pairs(n);
  for (const auto& [k, n] : ra) sa += pairs(n);
  for (const auto& [k, n] : rb) sb += pairs(n);
  const double total = pairs(static_cast<double>(a.size()));
  const double expected = sa * sb / total;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace mppca::dpmix
