#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "elx/linalg.hpp"
#include "elx/nn.hpp"
#include "elx/targets.hpp"

namespace elx {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double plateau_factor = 0.1;
  int patience = 7;
  double min_lr = 1e-7;
  std::uint64_t seed = 0;
  bool select_best_validation = true;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: bad epochs/batch");
    if (!(lr > 0.0) || !(min_lr > 0.0) || !(plateau_factor > 0.0 && plateau_factor < 1.0) || patience < 0)
      throw std::invalid_argument("TrainConfig: bad scheduler settings");
  }
};

/// Reduce-on-plateau: every epoch without a new best validation loss counts
/// against the patience; exceeding it multiplies the rate by `factor` down
/// to `min_lr`.
struct PlateauScheduler {
  double lr = 1e-3;
  double factor = 0.1;
  int patience = 7;
  double min_lr = 1e-7;

  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  /// Feed one validation loss; returns the rate to use next.
  double observe(double val_loss) {
    if (val_loss < best) {
      best = val_loss;
      bad_epochs = 0;
    } else if (++bad_epochs > patience) {
      lr = std::max(lr * factor, min_lr);
      bad_epochs = 0;
    }
    return lr;
  }
};

struct EpochLog {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

/// Training view: row-major float signal cache plus raw concentration labels.
/// Splits index into the cache.
struct TrainingSet {
  const float* signals = nullptr;  // n * 8 * 4096
  std::size_t n = 0;
  std::span<const double> labels_raw;
  std::span<const std::size_t> train_idx;
  std::span<const std::size_t> val_idx;

  static constexpr std::size_t kRecordLen = 8 * 4096;
};

namespace detail {

inline ad::Tensor batch_tensor(const float* signals, std::span<const std::size_t> idx) {
  const int n = static_cast<int>(idx.size());
  std::vector<double> buf(static_cast<std::size_t>(n) * TrainingSet::kRecordLen);
  for (int i = 0; i < n; ++i) {
    const float* src = signals + idx[static_cast<std::size_t>(i)] * TrainingSet::kRecordLen;
    double* dst = buf.data() + static_cast<std::size_t>(i) * TrainingSet::kRecordLen;
    for (std::size_t j = 0; j < TrainingSet::kRecordLen; ++j) dst[j] = src[j];
  }
  return ad::Tensor::from(std::move(buf), {n, 8, 4096});
}

inline ad::Tensor head_loss(EcgNet& model, const ad::Tensor& x, std::span<const std::size_t> idx,
                            const TrainingSet& data, const TargetCodec& codec, bool train) {
  EcgNet::Outputs out = model.forward(x, train);
  switch (model.head()) {
    case HeadKind::direct: {
      std::vector<double> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = codec.to_model(data.labels_raw[idx[i]]);
      return ad::mse_loss(out.primary, y);
    }
    case HeadKind::gaussian: {
      std::vector<double> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = codec.to_model(data.labels_raw[idx[i]]);
      return ad::gaussian_nll(out.primary, out.secondary, y);
    }
    case HeadKind::classification: {
      std::vector<int> cls(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        cls[i] = codec.discretizer->discretize(codec.eval_space(data.labels_raw[idx[i]]));
      return ad::ce_with_logits(out.primary, cls);
    }
    case HeadKind::ordinal: {
      const int n_int = codec.discretizer->n_intervals();
      std::vector<double> targets(idx.size() * static_cast<std::size_t>(n_int - 1));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const int c = codec.discretizer->discretize(codec.eval_space(data.labels_raw[idx[i]]));
        const std::vector<double> t = ordinal_encode(c, n_int);
        std::copy(t.begin(), t.end(), targets.begin() + static_cast<std::ptrdiff_t>(i * t.size()));
      }
      return ad::bce_with_logits(out.primary, targets);
    }
  }
  throw std::logic_error("head_loss: unreachable");
}

inline double evaluate_loss(EcgNet& model, const TrainingSet& data, const TargetCodec& codec,
                            std::span<const std::size_t> idx, int batch_size) {
  double total = 0.0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> part = idx.subspan(start, stop - start);
    const ad::Tensor x = batch_tensor(data.signals, part);
    const ad::Tensor loss = head_loss(model, x, part, data, codec, /*train=*/false);
    total += loss.item() * static_cast<double>(part.size());
    seen += part.size();
  }
  return total / static_cast<double>(seen);
}

}  // namespace detail

/// Adam + reduce-on-plateau training loop. The returned model state is the
/// epoch with the lowest validation loss. Throws on a NaN validation loss
/// (divergence) with a diagnostic message.
inline TrainLog train_model(EcgNet& model, const TrainingSet& data, const TargetCodec& codec,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (data.train_idx.empty() || data.val_idx.empty())
    throw std::invalid_argument("train_model: empty train or validation split");
  if ((model.head() == HeadKind::classification || model.head() == HeadKind::ordinal) && !codec.discretizer)
    throw std::invalid_argument("train_model: class-based head requires a discretizer in the codec");

  Rng shuffle_rng = Rng(cfg.seed).derive(0x5bf1);
  model.reseed_dropout(Rng(cfg.seed).derive(0xd207).next_u64());

  std::vector<ad::Param*> params = model.params();
  ad::Adam opt;
  opt.lr = cfg.lr;

  TrainLog log;
  PlateauScheduler scheduler{cfg.lr, cfg.plateau_factor, cfg.patience, cfg.min_lr};
  double best_val = std::numeric_limits<double>::infinity();
  EcgNet::Snapshot best;

  std::vector<std::size_t> order(data.train_idx.begin(), data.train_idx.end());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the run's own stream
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> part(order.data() + start, stop - start);
      const ad::Tensor x = detail::batch_tensor(data.signals, part);
      opt.zero_grad(params);
      const ad::Tensor loss = detail::head_loss(model, x, part, data, codec, /*train=*/true);
      loss.backward();
      opt.step(params);
      train_loss += loss.item() * static_cast<double>(part.size());
      seen += part.size();
    }
    train_loss /= static_cast<double>(seen);

    const double val_loss = detail::evaluate_loss(model, data, codec, data.val_idx, cfg.batch_size);
    if (!std::isfinite(val_loss))
      throw std::runtime_error("train_model: diverged at epoch " + std::to_string(epoch + 1) +
                               " (validation loss is not finite)");
    log.epochs.push_back({train_loss, val_loss, opt.lr});

    if (val_loss < best_val) {
      best_val = val_loss;
      log.best_epoch = epoch;
      if (cfg.select_best_validation) best = model.snapshot();
    }
    opt.lr = scheduler.observe(val_loss);
  }
  log.best_val_loss = best_val;
  if (cfg.select_best_validation && log.best_epoch >= 0) model.restore(best);
  return log;
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

/// Mean/variance predictions in raw concentration units (gaussian head),
/// plus the pooled features each prediction came from.
struct GaussianPrediction {
  std::vector<double> mean;       // raw units (eval space for log targets)
  std::vector<double> variance;   // aleatoric, eval-space units squared
  std::vector<std::vector<double>> features;
};

inline GaussianPrediction predict_gaussian(EcgNet& model, const TrainingSet& data,
                                           std::span<const std::size_t> idx, const TargetCodec& codec,
                                           int batch_size = 64) {
  if (model.head() != HeadKind::gaussian) throw std::invalid_argument("predict_gaussian: wrong head");
  GaussianPrediction out;
  out.mean.reserve(idx.size());
  out.variance.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> part = idx.subspan(start, stop - start);
    const ad::Tensor x = detail::batch_tensor(data.signals, part);
    EcgNet::Outputs o = model.forward(x, /*train=*/false);
    const int f = model.config().feature_dim();
    for (std::size_t i = 0; i < part.size(); ++i) {
      const double mu_z = o.primary.val()[i];
      const double s2_z = std::exp(o.secondary.val()[i]);
      out.mean.push_back(codec.znorm.invert(mu_z));
      out.variance.push_back(s2_z * codec.znorm.sd * codec.znorm.sd);
      out.features.emplace_back(o.features.val().begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(f)),
                                o.features.val().begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(f)));
    }
  }
  return out;
}

/// Direct-head point predictions in eval-space units.
inline std::vector<double> predict_direct(EcgNet& model, const TrainingSet& data,
                                          std::span<const std::size_t> idx, const TargetCodec& codec,
                                          int batch_size = 64) {
  if (model.head() != HeadKind::direct) throw std::invalid_argument("predict_direct: wrong head");
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> part = idx.subspan(start, stop - start);
    const ad::Tensor x = detail::batch_tensor(data.signals, part);
    EcgNet::Outputs o = model.forward(x, /*train=*/false);
    for (std::size_t i = 0; i < part.size(); ++i) out.push_back(codec.znorm.invert(o.primary.val()[i]));
  }
  return out;
}

/// Class-probability predictions. For the classification head these are
/// softmax probabilities over intervals [n, k]; for the ordinal head,
/// rank probabilities P(class > j) [n, k-1], non-increasing in j.
inline std::vector<std::vector<double>> predict_class_probs(EcgNet& model, const TrainingSet& data,
                                                            std::span<const std::size_t> idx, int batch_size = 64) {
  if (model.head() != HeadKind::classification && model.head() != HeadKind::ordinal)
    throw std::invalid_argument("predict_class_probs: wrong head");
  std::vector<std::vector<double>> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> part = idx.subspan(start, stop - start);
    const ad::Tensor x = detail::batch_tensor(data.signals, part);
    EcgNet::Outputs o = model.forward(x, /*train=*/false);
    const ad::Tensor probs = model.head() == HeadKind::classification ? ad::softmax(o.primary) : ad::sigmoid(o.primary);
    const int k = probs.dim(1);
    for (std::size_t i = 0; i < part.size(); ++i)
      out.emplace_back(probs.val().begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(k)),
                       probs.val().begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(k)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classical baseline
// ---------------------------------------------------------------------------

/// Closed-form ridge regression w = (X^T X + lambda I)^-1 X^T y.
/// lambda = 0 is permitted only when the normal equations are nonsingular.
inline std::vector<double> ridge_fit(const std::vector<std::vector<double>>& x, std::span<const double> y,
                                     double lambda) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("ridge_fit: bad data");
  const std::size_t f = x.front().size();
  la::Mat gram(f, f);
  std::vector<double> rhs(f, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != f) throw std::invalid_argument("ridge_fit: ragged features");
    for (std::size_t a = 0; a < f; ++a) {
      rhs[a] += x[i][a] * y[i];
      for (std::size_t b = a; b < f; ++b) gram(a, b) += x[i][a] * x[i][b];
    }
  }
  for (std::size_t a = 0; a < f; ++a) {
    gram(a, a) += lambda;
    for (std::size_t b = a + 1; b < f; ++b) gram(b, a) = gram(a, b);
  }
  try {
    la::cholesky(gram);
  } catch (const std::runtime_error&) {
    throw std::runtime_error("ridge_fit: singular system (increase lambda)");
  }
  return la::cholesky_solve(gram, rhs);
}

inline double ridge_predict(std::span<const double> weights, std::span<const double> features) {
  if (weights.size() != features.size()) throw std::invalid_argument("ridge_predict: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * features[i];
  return s;
}

}  // namespace elx
