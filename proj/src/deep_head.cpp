#include "mppca/deep_head.hpp"

#include "mppca/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mppca::deep {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Coefficients of -c_det log a - c_sig (d-1) log s in the log-likelihood.
struct FormCoeffs {
  double det;
  double sig;
  bool constant;
};

FormCoeffs coeffs(LikelihoodForm form) {
  return form == LikelihoodForm::Full ? FormCoeffs{0.5, 0.5, true} : FormCoeffs{1.0, 0.0, false};
}

Matrix softmax_rows(const Matrix& ll) {
  Matrix p(ll.rows(), ll.cols());
  for (Index b = 0; b < ll.rows(); ++b) {
    const double m = ll.row(b).maxCoeff();
    p.row(b) = (ll.row(b).array() - m).exp();
    p.row(b) /= p.row(b).sum();
  }
  return p;
}

double cross_entropy(const Matrix& ll, const Matrix& targets) {
  double total = 0.0;
  for (Index b = 0; b < ll.rows(); ++b) {
    const double lse = log_sum_exp(ll.row(b).transpose());
    for (Index c = 0; c < ll.cols(); ++c) {
      if (targets(b, c) > 0) total -= targets(b, c) * (ll(b, c) - lse);
    }
  }
  return total / static_cast<double>(ll.rows());
}

Vector theta(const Head& h) {
  Vector t(h.mu.size() + h.w.size());
  t << h.mu, h.w;
  return t;
}

}  // namespace

Index HeadParams::dim() const {
  require(!heads.empty(), "no heads");
  return heads.front().mu.size();
}

void HeadParams::validate() const {
  const Index d = dim();
  for (const auto& h : heads) {
    require_dim(h.mu.size(), d, "head mu");
    require_dim(h.w.size(), d, "head w");
    require(h.mu.allFinite() && h.w.allFinite() && std::isfinite(h.log_sigma2),
            "head parameters must be finite");
  }
}

void SoftLabelBatch::validate() const {
  require(embeddings.rows() >= 1, "batch is empty");
  require_dim(targets.rows(), embeddings.rows(), "target rows");
  require(embeddings.allFinite(), "embeddings must be finite");
  for (Index b = 0; b < targets.rows(); ++b) {
    require((targets.row(b).array() >= 0).all(), "targets row " + std::to_string(b) + " has a negative entry");
    require(std::abs(targets.row(b).sum() - 1.0) <= 1e-6,
            "targets row " + std::to_string(b) + " does not sum to 1");
  }
}

SoftLabelBatch SoftLabelBatch::subset(const std::vector<Index>& rows) const {
  SoftLabelBatch out;
  out.embeddings.resize(static_cast<Index>(rows.size()), embeddings.cols());
  out.targets.resize(static_cast<Index>(rows.size()), targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.embeddings.row(static_cast<Index>(i)) = embeddings.row(rows[i]);
    out.targets.row(static_cast<Index>(i)) = targets.row(rows[i]);
  }
  return out;
}

Matrix head_log_likelihoods(const Matrix& embeddings, const HeadParams& heads, LikelihoodForm form) {
  heads.validate();
  const Index d = heads.dim();
  require_dim(embeddings.cols(), d, "embedding");
  const FormCoeffs k = coeffs(form);
  const double dd = static_cast<double>(d);
  Matrix ll(embeddings.rows(), heads.num_classes());
  for (Index c = 0; c < heads.num_classes(); ++c) {
    const Head& h = heads.heads[static_cast<std::size_t>(c)];
    const double s = std::exp(h.log_sigma2);
    const double a = h.w.squaredNorm() + s;
    const double base = -k.det * std::log(a) - k.sig * (dd - 1.0) * h.log_sigma2 -
                        (k.constant ? 0.5 * dd * kLog2Pi : 0.0);
    for (Index b = 0; b < embeddings.rows(); ++b) {
      const Vector r = embeddings.row(b).transpose() - h.mu;
      const double p = h.w.dot(r);
      const double q = (r.squaredNorm() - p * p / a) / s;
      ll(b, c) = base - 0.5 * q;
    }
  }
  return ll;
}

void Penalty::validate(Index num_classes) const {
  require(std::isfinite(lambda1) && std::isfinite(lambda2), "penalty coefficients must be finite");
  if (lambda1 == 0.0 && lambda2 == 0.0) return;
  require(lambda2 >= 0 && lambda1 > static_cast<double>(num_classes - 1) * lambda2,
          "penalty needs lambda1 > (C-1) lambda2 >= 0 for a positive-definite quadratic form");
}

Penalty Penalty::proportional(double lambda2, Index num_classes) {
  return {static_cast<double>(num_classes) * lambda2, lambda2};
}

double penalty_value(const HeadParams& heads, const Penalty& penalty) {
  penalty.validate(heads.num_classes());
  if (penalty.lambda1 == 0.0 && penalty.lambda2 == 0.0) return 0.0;
  Vector total = Vector::Zero(2 * heads.dim());
  double self = 0.0;
  for (const auto& h : heads.heads) {
    const Vector t = theta(h);
    total += t;
    self += t.squaredNorm();
  }
  // sum_{j != k} t_j . t_k = |sum t|^2 - sum |t_j|^2
  return penalty.lambda1 * self - penalty.lambda2 * (total.squaredNorm() - self);
}

double regularized_loss(const SoftLabelBatch& batch, const HeadParams& heads, const Penalty& penalty,
                        LikelihoodForm form) {
  batch.validate();
  require_dim(batch.targets.cols(), heads.num_classes(), "target columns");
  const Matrix ll = head_log_likelihoods(batch.embeddings, heads, form);
  return cross_entropy(ll, batch.targets) + penalty_value(heads, penalty);
}

HeadParams loss_gradient(const SoftLabelBatch& batch, const HeadParams& heads, const Penalty& penalty,
                         LikelihoodForm form) {
  batch.validate();
  require_dim(batch.targets.cols(), heads.num_classes(), "target columns");
  penalty.validate(heads.num_classes());
  const Matrix ll = head_log_likelihoods(batch.embeddings, heads, form);
  const Matrix dll = (softmax_rows(ll) - batch.targets) / static_cast<double>(batch.size());
  const FormCoeffs k = coeffs(form);
  const Index d = heads.dim();
  const double dd = static_cast<double>(d);

  HeadParams g;
  for (Index c = 0; c < heads.num_classes(); ++c) {
    const Head& h = heads.heads[static_cast<std::size_t>(c)];
    const double s = std::exp(h.log_sigma2);
    const double a = h.w.squaredNorm() + s;
    Head gh{Vector::Zero(d), Vector::Zero(d), 0.0};
    double ds = 0.0;
    for (Index b = 0; b < batch.size(); ++b) {
      const double coef = dll(b, c);
      if (coef == 0.0) continue;
      const Vector r = batch.embeddings.row(b).transpose() - h.mu;
      const double p = h.w.dot(r);
      const double resid = r.squaredNorm() - p * p / a;
      gh.mu += coef * (r - (p / a) * h.w) / s;
      gh.w += coef * (-2.0 * k.det * h.w / a + (p / (s * a)) * r - (p * p / (s * a * a)) * h.w);
      ds += coef * (-k.det / a - k.sig * (dd - 1.0) / s + 0.5 * resid / (s * s) - 0.5 * p * p / (s * a * a));
    }
    gh.log_sigma2 = ds * s;
    g.heads.push_back(std::move(gh));
  }

  if (penalty.lambda1 != 0.0 || penalty.lambda2 != 0.0) {
    Vector total = Vector::Zero(2 * d);
    for (const auto& h : heads.heads) total += theta(h);
    for (Index c = 0; c < heads.num_classes(); ++c) {
      const Vector t = theta(heads.heads[static_cast<std::size_t>(c)]);
      const Vector gp = 2.0 * penalty.lambda1 * t - 2.0 * penalty.lambda2 * (total - t);
      g.heads[static_cast<std::size_t>(c)].mu += gp.head(d);
      g.heads[static_cast<std::size_t>(c)].w += gp.tail(d);
    }
  }
  return g;
}

HeadParams init_heads(const SoftLabelBatch& data, std::uint64_t seed) {
  data.validate();
  const Index d = data.embeddings.cols();
  const Index c = data.targets.cols();
  Rng rng = make_rng(seed, 0x696e6974ULL);
  const Vector overall = data.embeddings.colwise().mean().transpose();
  const double var = (data.embeddings.rowwise() - overall.transpose()).squaredNorm() /
                     static_cast<double>(data.size() * d);
  HeadParams heads;
  for (Index k = 0; k < c; ++k) {
    const double mass = data.targets.col(k).sum();
    Head h;
    h.mu = mass > 0 ? Vector(data.embeddings.transpose() * data.targets.col(k) / mass) : overall;
    const Vector dir = standard_normal(rng, d);
    h.w = 0.01 * dir / dir.norm();
    h.log_sigma2 = std::log(std::max(var, 1e-12));
    heads.heads.push_back(std::move(h));
  }
  return heads;
}

TrainResult train(const SoftLabelBatch& data, const HeadParams& init, const TrainOptions& options,
                  const SoftLabelBatch* validation) {
  data.validate();
  init.validate();
  require_dim(data.targets.cols(), init.num_classes(), "target columns");
  require(options.epochs >= 0, "epochs must be nonnegative");
  require(options.batch_size >= 1, "batch size must be positive");
  require(options.learning_rate >= 0, "learning rate must be nonnegative");
  require(options.momentum >= 0 && options.momentum < 1, "momentum must lie in [0, 1)");
  options.penalty.validate(init.num_classes());

  TrainResult out;
  out.heads = init;
  HeadParams velocity;
  for (const auto& h : init.heads) {
    velocity.heads.push_back({Vector::Zero(h.mu.size()), Vector::Zero(h.w.size()), 0.0});
  }

  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(options.seed, 0x74726eULL);

  auto record = [&](std::vector<double>& trace, const SoftLabelBatch& set, const char* what) {
    const double loss = regularized_loss(set, out.heads, options.penalty, options.form);
    trace.push_back(loss);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(std::string("training diverged: non-finite ") + what + " loss at epoch " +
                                 std::to_string(trace.size() - 1),
                             out.train_loss);
    }
  };
  record(out.train_loss, data, "training");
  if (validation) record(out.validation_loss, *validation, "validation");

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const SoftLabelBatch mb = data.subset(std::vector<Index>(order.begin() + start, order.begin() + end));
      const HeadParams g = loss_gradient(mb, out.heads, options.penalty, options.form);
      for (std::size_t c = 0; c < g.heads.size(); ++c) {
        Head& v = velocity.heads[c];
        Head& h = out.heads.heads[c];
        v.mu = options.momentum * v.mu - options.learning_rate * g.heads[c].mu;
        v.w = options.momentum * v.w - options.learning_rate * g.heads[c].w;
        v.log_sigma2 = options.momentum * v.log_sigma2 - options.learning_rate * g.heads[c].log_sigma2;
        h.mu += v.mu;
        h.w += v.w;
        h.log_sigma2 += v.log_sigma2;
        if (!h.mu.allFinite() || !h.w.allFinite() || !std::isfinite(h.log_sigma2)) {
          throw TrainingDiverged("training diverged: non-finite parameters in epoch " +
                                     std::to_string(epoch + 1),
                                 out.train_loss);
        }
      }
    }
    record(out.train_loss, data, "training");
    if (validation) record(out.validation_loss, *validation, "validation");
  }
  return out;
}

std::pair<std::vector<Index>, std::vector<Index>> split_indices(Index n, double validation_fraction,
                                                                std::uint64_t seed) {
  require(n >= 2, "split needs at least two rows");
  require(validation_fraction > 0 && validation_fraction < 1, "validation fraction must lie in (0, 1)");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(seed, 0x73706c74ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const Index nv = std::clamp<Index>(static_cast<Index>(std::llround(validation_fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<Index> valid(order.begin(), order.begin() + nv);
  std::vector<Index> trainr(order.begin() + nv, order.end());
  std::sort(valid.begin(), valid.end());
  std::sort(trainr.begin(), trainr.end());
  return {trainr, valid};
}

std::vector<Index> kfold_assignment(Index n, Index k, std::uint64_t seed) {
  require(k >= 2 && k <= n, "k-fold needs 2 <= k <= n");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(seed, 0x6b666f6cULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> fold(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % k;
  return fold;
}

double accuracy(const SoftLabelBatch& data, const HeadParams& heads, LikelihoodForm form) {
  const Matrix ll = head_log_likelihoods(data.embeddings, heads, form);
  Index hits = 0;
  for (Index b = 0; b < data.size(); ++b) {
    Index pred = 0, truth = 0;
    ll.row(b).maxCoeff(&pred);
    data.targets.row(b).maxCoeff(&truth);
    if (pred == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<Matrix> head_covariances(const HeadParams& heads) {
  heads.validate();
  std::vector<Matrix> out;
  for (const auto& h : heads.heads) {
    Matrix c = h.w * h.w.transpose();
    c.diagonal().array() += std::exp(h.log_sigma2);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Vector> spectrum_report(const std::vector<Matrix>& covariances) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < covariances.size(); ++i) {
    const Matrix& c = covariances[i];
    require(c.rows() == c.cols() && c.rows() >= 1, "covariance " + std::to_string(i) + " must be square");
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    require((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
            "covariance " + std::to_string(i) + " is not symmetric");
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
    Vector v = eig.eigenvalues().reverse();
    const double trace = v.sum();
    require(trace > 0, "covariance " + std::to_string(i) + " has non-positive trace");
    out.push_back(v / trace);
  }
  return out;
}

}  // namespace mppca::deep
