#include "mppca/baselines.hpp"

#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace mppca::baselines {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_attention(const Vector& attention, Index d) {
  if (attention.size() == 0) return;
  require_dim(attention.size(), d, "attention weights");
  require((attention.array() >= 0).all() && attention.allFinite(), "attention weights must be nonnegative");
}

std::map<int, std::vector<Index>> group_rows(const Dataset& data) {
  require(data.labeled(), "labeled data required");
  require_dim(static_cast<Index>(data.labels.size()), data.size(), "label count");
  std::map<int, std::vector<Index>> groups;
  for (Index i = 0; i < data.size(); ++i) groups[data.labels[static_cast<std::size_t>(i)]].push_back(i);
  return groups;
}

double sq_attention_distance(const Vector& x, const Vector& y, const Vector& attention) {
  if (attention.size() == 0) return (x - y).squaredNorm();
  return (attention.array() * (x - y).array().square()).sum();
}

Vector log_softmax(const Vector& s) { return s.array() - log_sum_exp(s); }

}  // namespace

Index ExemplarStore::dim() const {
  require(!exemplars.empty(), "exemplar store is empty");
  return exemplars.front().cols();
}

void ExemplarStore::validate() const {
  const Index d = dim();
  for (const auto& e : exemplars) {
    require(e.rows() >= 1, "every category needs at least one exemplar");
    require_dim(e.cols(), d, "exemplar dimension");
  }
  require(sensitivity > 0 && std::isfinite(sensitivity), "sensitivity must be positive");
  check_attention(attention, d);
}

Index PrototypeStore::dim() const {
  require(!prototypes.empty(), "prototype store is empty");
  return prototypes.front().size();
}

void PrototypeStore::validate() const {
  const Index d = dim();
  for (const auto& p : prototypes) require_dim(p.size(), d, "prototype dimension");
  require(sensitivity > 0 && std::isfinite(sensitivity), "sensitivity must be positive");
  check_attention(attention, d);
}

double attention_distance(const Vector& x, const Vector& y, const Vector& attention) {
  require_dim(y.size(), x.size(), "distance operands");
  check_attention(attention, x.size());
  return std::sqrt(sq_attention_distance(x, y, attention));
}

Vector exemplar_log_similarity(const Vector& x, const ExemplarStore& store) {
  store.validate();
  require_dim(x.size(), store.dim(), "exemplar input");
  Vector out(static_cast<Index>(store.exemplars.size()));
  for (std::size_t c = 0; c < store.exemplars.size(); ++c) {
    const Matrix& e = store.exemplars[c];
    Vector terms(e.rows());
    for (Index i = 0; i < e.rows(); ++i) {
      terms(i) = -store.sensitivity * std::sqrt(sq_attention_distance(x, e.row(i).transpose(), store.attention));
    }
    out(static_cast<Index>(c)) = log_sum_exp(terms);
  }
  return out;
}

Vector prototype_log_similarity(const Vector& x, const PrototypeStore& store) {
  store.validate();
  require_dim(x.size(), store.dim(), "prototype input");
  Vector out(static_cast<Index>(store.prototypes.size()));
  for (std::size_t c = 0; c < store.prototypes.size(); ++c) {
    out(static_cast<Index>(c)) = -store.sensitivity * sq_attention_distance(x, store.prototypes[c], store.attention);
  }
  return out;
}

Prediction exemplar_predict(const Vector& x, const ExemplarStore& store) {
  return Prediction::from_log_scores(exemplar_log_similarity(x, store), false);
}

Prediction prototype_predict(const Vector& x, const PrototypeStore& store) {
  return Prediction::from_log_scores(prototype_log_similarity(x, store), false);
}

Vector fit_attention(const Dataset& data) {
  const auto groups = group_rows(data);
  require(groups.size() >= 2, "fit_attention needs at least two categories");
  const Index d = data.dim();
  Vector ss = Vector::Zero(d);
  double dof = 0.0;
  for (const auto& [label, rows] : groups) {
    Vector mean = Vector::Zero(d);
    for (Index r : rows) mean += data.x.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    for (Index r : rows) ss += (data.x.row(r).transpose() - mean).array().square().matrix();
    dof += static_cast<double>(rows.size()) - 1.0;
  }
  require(dof > 0, "fit_attention needs a category with at least two members");
  const Vector var = ss / dof;

  Vector w(d);
  std::vector<double> finite;
  for (Index i = 0; i < d; ++i) {
    if (var(i) > 0) {
      w(i) = 1.0 / var(i);
      finite.push_back(w(i));
    } else {
      w(i) = std::numeric_limits<double>::infinity();
    }
  }
  if (finite.empty()) return Vector::Ones(d);
  std::sort(finite.begin(), finite.end());
  const std::size_t m = finite.size();
  const double median = m % 2 ? finite[m / 2] : 0.5 * (finite[m / 2 - 1] + finite[m / 2]);
  const double cap = 1e3 * median;
  for (Index i = 0; i < d; ++i) w(i) = std::min(w(i), cap);
  return w * (static_cast<double>(d) / w.sum());
}

std::vector<double> sensitivity_grid() {
  constexpr int kPoints = 64;
  std::vector<double> grid(kPoints);
  for (int i = 0; i < kPoints; ++i) grid[i] = std::exp2(-5.0 + 10.0 * i / (kPoints - 1));
  return grid;
}

std::vector<int> sorted_labels(const Dataset& data) {
  std::vector<int> out;
  for (const auto& [label, rows] : group_rows(data)) out.push_back(label);
  return out;
}

ExemplarStore fit_exemplar(const Dataset& data, bool use_attention) {
  const auto groups = group_rows(data);
  ExemplarStore store;
  std::vector<Index> cat_of(static_cast<std::size_t>(data.size()));
  Index c = 0;
  for (const auto& [label, rows] : groups) {
    Matrix e(static_cast<Index>(rows.size()), data.dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      e.row(static_cast<Index>(r)) = data.x.row(rows[r]);
      cat_of[static_cast<std::size_t>(rows[r])] = c;
    }
    store.exemplars.push_back(std::move(e));
    ++c;
  }
  if (use_attention && groups.size() >= 2) store.attention = fit_attention(data);

  const Index n = data.size();
  Matrix dist(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      dist(i, j) = dist(j, i) = std::sqrt(
          sq_attention_distance(data.x.row(i).transpose(), data.x.row(j).transpose(), store.attention));
    }
  }

  double best_ll = kNegInf;
  double best_s = 1.0;
  const Index k = static_cast<Index>(groups.size());
  for (double s : sensitivity_grid()) {
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Index own = cat_of[static_cast<std::size_t>(i)];
      if (store.exemplars[static_cast<std::size_t>(own)].rows() < 2) continue;
      std::vector<std::vector<double>> terms(static_cast<std::size_t>(k));
      for (Index j = 0; j < n; ++j) {
        if (j == i) continue;
        terms[static_cast<std::size_t>(cat_of[static_cast<std::size_t>(j)])].push_back(-s * dist(i, j));
      }
      Vector scores(k);
      for (Index q = 0; q < k; ++q) {
        const auto& t = terms[static_cast<std::size_t>(q)];
        scores(q) = t.empty() ? kNegInf : log_sum_exp(Eigen::Map<const Vector>(t.data(), static_cast<Index>(t.size())));
      }
      ll += scores(own) - log_sum_exp(scores);
    }
    if (ll > best_ll) {
      best_ll = ll;
      best_s = s;
    }
  }
  store.sensitivity = best_s;
  return store;
}

PrototypeStore fit_prototype(const Dataset& data, bool use_attention) {
  const auto groups = group_rows(data);
  PrototypeStore store;
  std::vector<Index> cat_of(static_cast<std::size_t>(data.size()));
  Index c = 0;
  for (const auto& [label, rows] : groups) {
    Vector mean = Vector::Zero(data.dim());
    for (Index r : rows) {
      mean += data.x.row(r).transpose();
      cat_of[static_cast<std::size_t>(r)] = c;
    }
    store.prototypes.push_back(mean / static_cast<double>(rows.size()));
    ++c;
  }
  if (use_attention && groups.size() >= 2) store.attention = fit_attention(data);

  const Index k = static_cast<Index>(groups.size());
  Matrix sq(data.size(), k);
  for (Index i = 0; i < data.size(); ++i)
    for (Index q = 0; q < k; ++q)
      sq(i, q) = sq_attention_distance(data.x.row(i).transpose(), store.prototypes[static_cast<std::size_t>(q)],
                                       store.attention);

  double best_ll = kNegInf;
  double best_s = 1.0;
  for (double s : sensitivity_grid()) {
    double ll = 0.0;
    for (Index i = 0; i < data.size(); ++i) {
      const Vector scores = -s * sq.row(i).transpose();
      ll += scores(cat_of[static_cast<std::size_t>(i)]) - log_sum_exp(scores);
    }
    if (ll > best_ll) {
      best_ll = ll;
      best_s = s;
    }
  }
  store.sensitivity = best_s;
  return store;
}

LinearRule::LinearRule(const Matrix& x, const Matrix& targets, double l2, Index iterations) {
  require(x.rows() >= 1 && x.rows() == targets.rows(), "linear rule needs one target row per stimulus");
  require(targets.cols() >= 2, "linear rule needs at least two categories");
  require(l2 >= 0, "l2 must be nonnegative");
  const Index n = x.rows(), d = x.cols(), k = targets.cols();
  Matrix xa(n, d + 1);
  xa.leftCols(d) = x;
  xa.col(d).setOnes();
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(xa.transpose() * xa / static_cast<double>(n),
                                                  Eigen::EigenvaluesOnly);
  const double step = 1.0 / (0.5 * eig.eigenvalues().maxCoeff() + 2.0 * l2);

  weights_ = Matrix::Zero(d + 1, k);
  for (Index it = 0; it < iterations; ++it) {
    Matrix p = xa * weights_;
    for (Index i = 0; i < n; ++i) p.row(i) = log_softmax(p.row(i).transpose()).array().exp().transpose();
    const Matrix grad = xa.transpose() * (p - targets) / static_cast<double>(n) + 2.0 * l2 * weights_;
    weights_ -= step * grad;
  }
}

Vector LinearRule::predict(const Vector& x) const {
  require_dim(x.size(), weights_.rows() - 1, "linear rule input");
  Vector xa(x.size() + 1);
  xa.head(x.size()) = x;
  xa(x.size()) = 1.0;
  return log_softmax(weights_.transpose() * xa).array().exp();
}

double pearson(const Vector& a, const Vector& b) {
  require_dim(b.size(), a.size(), "correlation operands");
  require(a.size() >= 2, "correlation needs at least two pairs");
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (!(den > 0)) return std::numeric_limits<double>::quiet_NaN();
  return ca.dot(cb) / den;
}

namespace {

struct Metrics {
  double ea;
  double corr;
};

Metrics metrics_for(const std::vector<const Vector*>& model, const std::vector<const Vector*>& ref) {
  double ea = 0.0;
  Index total = 0;
  for (std::size_t s = 0; s < model.size(); ++s) {
    ea += model[s]->dot(*ref[s]);
    total += model[s]->size();
  }
  Vector a(total), b(total);
  Index pos = 0;
  for (std::size_t s = 0; s < model.size(); ++s) {
    a.segment(pos, model[s]->size()) = *model[s];
    b.segment(pos, ref[s]->size()) = *ref[s];
    pos += model[s]->size();
  }
  return {ea / static_cast<double>(model.size()), pearson(a, b)};
}

double std_dev(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  if (f.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double ss = 0.0;
  for (double x : f) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(f.size() - 1));
}

}  // namespace

ModelMetrics compare_model(const ModelPredictions& model, const std::vector<Vector>& reference,
                           Index resamples, std::uint64_t seed) {
  require(model.probs.size() == reference.size(), "model '" + model.name + "' has " +
                                                      std::to_string(model.probs.size()) +
                                                      " predictions for " +
                                                      std::to_string(reference.size()) + " stimuli");
  require(!reference.empty(), "compare_models needs at least one stimulus");
  for (std::size_t s = 0; s < reference.size(); ++s) {
    require_dim(model.probs[s].size(), reference[s].size(), "prediction length");
  }

  std::vector<std::size_t> order(reference.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto lex_less = [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (lex_less(reference[i], reference[j])) return true;
    if (lex_less(reference[j], reference[i])) return false;
    return lex_less(model.probs[i], model.probs[j]);
  });

  std::vector<const Vector*> m, r;
  for (std::size_t i : order) {
    m.push_back(&model.probs[i]);
    r.push_back(&reference[i]);
  }
  const Metrics full = metrics_for(m, r);

  ModelMetrics out;
  out.name = model.name;
  out.expected_accuracy = full.ea;
  out.correlation = full.corr;
  if (resamples > 0) {
    Rng rng = make_rng(seed, 0x626f6f74ULL);
    std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
    std::vector<double> eas, corrs;
    std::vector<const Vector*> bm(order.size()), br(order.size());
    for (Index b = 0; b < resamples; ++b) {
      for (std::size_t s = 0; s < order.size(); ++s) {
        const std::size_t i = pick(rng);
        bm[s] = m[i];
        br[s] = r[i];
      }
      const Metrics mb = metrics_for(bm, br);
      eas.push_back(mb.ea);
      corrs.push_back(mb.corr);
    }
    out.expected_accuracy_se = std_dev(eas);
    out.correlation_se = std_dev(corrs);
  }
  return out;
}

std::vector<ModelMetrics> compare_models(const std::vector<ModelPredictions>& models,
                                         const std::vector<Vector>& reference, Index resamples,
                                         std::uint64_t seed) {
  std::vector<ModelMetrics> out;
  for (const auto& m : models) out.push_back(compare_model(m, reference, resamples, seed));
  return out;
}

}  // namespace mppca::baselines
