#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "elx/checkpoint.hpp"
#include "elx/metrics.hpp"
#include "elx/nn.hpp"
#include "elx/pca.hpp"
#include "elx/perturb.hpp"
#include "elx/record_io.hpp"
#include "elx/signal.hpp"
#include "elx/synth.hpp"
#include "elx/targets.hpp"
#include "elx/train.hpp"
#include "elx/uncertainty.hpp"
#include "elx/version.hpp"

namespace elx {

/// Preprocessed corpus: float signal cache (8 x 4096 per record at 400 Hz),
/// labels, metadata and split indices. The cache feeds training batches and
/// evaluation without re-running the filter chain.
struct PreparedCorpus {
  Electrolyte kind = Electrolyte::potassium;
  bool log_space = false;
  std::size_t n = 0;
  std::vector<float> signals;  // n * 8 * 4096
  std::vector<double> labels;  // raw concentration units
  std::vector<PatientMeta> meta;
  DatasetSplits splits;
  double bayes_mae_train = std::numeric_limits<double>::quiet_NaN();
  double bayes_mae_validation = std::numeric_limits<double>::quiet_NaN();
  double bayes_mae_random_test = std::numeric_limits<double>::quiet_NaN();
  double bayes_mae_temporal_test = std::numeric_limits<double>::quiet_NaN();

  static constexpr std::size_t kRecordLen = 8 * 4096;

  TrainingSet training_view() const {
    TrainingSet t;
    t.signals = signals.data();
    t.n = n;
    t.labels_raw = labels;
    t.train_idx = splits.train;
    t.val_idx = splits.validation;
    return t;
  }

  std::span<const std::size_t> split(const std::string& name) const {
    if (name == "train") return splits.train;
    if (name == "validation") return splits.validation;
    if (name == "random-test") return splits.random_test;
    if (name == "temporal-test") return splits.temporal_test;
    throw std::invalid_argument("unknown split: " + name);
  }

  ProcessedEcg record(std::size_t i) const {
    ProcessedEcg e;
    const float* src = signals.data() + i * kRecordLen;
    for (std::size_t j = 0; j < kRecordLen; ++j) e.samples[j] = src[j];
    e.meta = meta[i];
    return e;
  }

  void store(std::size_t i, const ProcessedEcg& e) {
    float* dst = signals.data() + i * kRecordLen;
    for (std::size_t j = 0; j < kRecordLen; ++j) dst[j] = static_cast<float>(e.samples[j]);
  }
};

/// Runs the preprocessing chain over a generated corpus.
inline PreparedCorpus prepare_corpus(const GeneratedCorpus& corpus) {
  PreparedCorpus out;
  out.kind = corpus.cfg.kind;
  out.log_space = corpus.cfg.log_space;
  out.n = corpus.records.size();
  out.signals.resize(out.n * PreparedCorpus::kRecordLen);
  out.labels.resize(out.n);
  out.meta.resize(out.n);
  for (std::size_t i = 0; i < out.n; ++i) {
    const ProcessedEcg p = preprocess(corpus.records[i].ecg);
    out.store(i, p);
    out.labels[i] = corpus.records[i].y;
    out.meta[i] = corpus.records[i].ecg.meta;
  }
  out.splits = corpus.splits;
  out.bayes_mae_train = corpus.bayes_mae_train;
  out.bayes_mae_validation = corpus.bayes_mae_validation;
  out.bayes_mae_random_test = corpus.bayes_mae_random_test;
  out.bayes_mae_temporal_test = corpus.bayes_mae_temporal_test;
  return out;
}

// ---------------------------------------------------------------------------
// Corpus persistence: manifest + per-record signal files
// ---------------------------------------------------------------------------

inline void write_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& dir,
                         const std::string& config_hash = "") {
  std::filesystem::create_directories(dir / "records");
  auto split_name = [&corpus](std::size_t idx) -> std::string {
    const auto& s = corpus.splits;
    auto in = [idx](const std::vector<std::size_t>& v) { return std::find(v.begin(), v.end(), idx) != v.end(); };
    if (in(s.train)) return "train";
    if (in(s.validation)) return "validation";
    if (in(s.random_test)) return "random-test";
    if (in(s.temporal_test)) return "temporal-test";
    return "unused";
  };

  const std::filesystem::path tmp = dir / "manifest.txt.tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("write_corpus: cannot open " + tmp.string());
    char buf[64];
    os << "elx-manifest 1\n";
    os << "version " << kVersion << "\n";
    os << "config_hash " << (config_hash.empty() ? "unhashed" : config_hash) << "\n";
    os << "electrolyte " << to_string(corpus.cfg.kind) << "\n";
    os << "log_space " << (corpus.cfg.log_space ? 1 : 0) << "\n";
    os << "n_records " << corpus.records.size() << "\n";
    for (const char* key : {"bayes_mae_train", "bayes_mae_validation", "bayes_mae_random_test", "bayes_mae_temporal_test"}) {
      double v = 0;
      if (std::string(key) == "bayes_mae_train") v = corpus.bayes_mae_train;
      if (std::string(key) == "bayes_mae_validation") v = corpus.bayes_mae_validation;
      if (std::string(key) == "bayes_mae_random_test") v = corpus.bayes_mae_random_test;
      if (std::string(key) == "bayes_mae_temporal_test") v = corpus.bayes_mae_temporal_test;
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << key << " " << buf << "\n";
    }
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
      const LabeledExample& ex = corpus.records[i];
      const std::string file = "records/r" + std::to_string(i) + ".ecg";
      save_ecg(ex.ecg, dir / file);
      std::snprintf(buf, sizeof buf, "%.17g", ex.y);
      os << "record " << i << " " << split_name(i) << " " << buf << " " << file << "\n";
    }
  }
  std::filesystem::rename(tmp, dir / "manifest.txt");
}

/// Loads a persisted corpus and runs preprocessing.
inline PreparedCorpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw std::runtime_error("load_corpus: cannot open manifest in " + dir.string());
  std::string line;
  if (!std::getline(is, line) || line != "elx-manifest 1") throw std::runtime_error("load_corpus: bad manifest magic");

  PreparedCorpus out;
  std::vector<std::string> files;
  std::vector<std::string> splits;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "electrolyte") {
      std::string v;
      ls >> v;
      out.kind = electrolyte_from_string(v);
    } else if (key == "log_space") {
      int v = 0;
      ls >> v;
      out.log_space = v != 0;
    } else if (key == "bayes_mae_train") {
      ls >> out.bayes_mae_train;
    } else if (key == "bayes_mae_validation") {
      ls >> out.bayes_mae_validation;
    } else if (key == "bayes_mae_random_test") {
      ls >> out.bayes_mae_random_test;
    } else if (key == "bayes_mae_temporal_test") {
      ls >> out.bayes_mae_temporal_test;
    } else if (key == "record") {
      std::size_t idx;
      std::string split, file;
      double y;
      ls >> idx >> split >> y >> file;
      if (idx != files.size()) throw std::runtime_error("load_corpus: record indices out of order");
      files.push_back(file);
      splits.push_back(split);
      out.labels.push_back(y);
    }
  }
  out.n = files.size();
  out.signals.resize(out.n * PreparedCorpus::kRecordLen);
  out.meta.resize(out.n);
  for (std::size_t i = 0; i < out.n; ++i) {
    const RawEcg raw = load_ecg(dir / files[i]);
    const ProcessedEcg p = preprocess(raw);
    out.store(i, p);
    out.meta[i] = raw.meta;
    if (splits[i] == "train")
      out.splits.train.push_back(i);
    else if (splits[i] == "validation")
      out.splits.validation.push_back(i);
    else if (splits[i] == "random-test")
      out.splits.random_test.push_back(i);
    else if (splits[i] == "temporal-test")
      out.splits.temporal_test.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runs
// ---------------------------------------------------------------------------

/// Codec fit on the training split in evaluation space; discretizer attached
/// for class-based heads.
inline TargetCodec fit_codec(const PreparedCorpus& data, HeadKind head, int k) {
  std::vector<double> train_y;
  train_y.reserve(data.splits.train.size());
  for (std::size_t i : data.splits.train)
    train_y.push_back(data.log_space ? std::log(data.labels[i]) : data.labels[i]);
  TargetCodec codec;
  codec.log_space = data.log_space;
  codec.znorm = ZNormalizer::fit(train_y);
  if (head == HeadKind::classification || head == HeadKind::ordinal) {
    if (k < 2) throw std::invalid_argument("fit_codec: class heads need k >= 2");
    codec.discretizer = fit_discretizer(k, train_y, data.kind);
  }
  return codec;
}

/// Trains one network (one seed) and assembles its checkpoint. Gaussian-head
/// runs get a last-layer Laplace posterior fitted on the training split.
inline Checkpoint train_run(const PreparedCorpus& data, HeadKind head, int k, const BackboneConfig& backbone,
                            TrainConfig cfg, const std::string& config_hash = "") {
  const TargetCodec codec = fit_codec(data, head, k);
  const int model_classes = codec.discretizer ? codec.discretizer->n_intervals() : 0;
  EcgNet net(backbone, head, model_classes == 0 ? 1 : model_classes, cfg.seed);
  if (codec.discretizer) {
    std::vector<double> priors(static_cast<std::size_t>(model_classes), 0.0);
    for (std::size_t i : data.splits.train)
      priors[static_cast<std::size_t>(codec.discretizer->discretize(codec.eval_space(data.labels[i])) - 1)] += 1.0;
    for (double& p : priors) p /= static_cast<double>(data.splits.train.size());
    net.set_class_prior_bias(priors);
  }
  const TrainingSet view = data.training_view();
  TrainLog log = train_model(net, view, codec, cfg);

  Checkpoint ckpt;
  ckpt.code_version = std::string(kVersion);
  ckpt.config_hash = config_hash;
  ckpt.head = head;
  ckpt.model_classes = model_classes;
  ckpt.seed = cfg.seed;
  ckpt.backbone = backbone;
  ckpt.train_cfg = cfg;
  ckpt.codec = codec;
  ckpt.snapshot = net.snapshot();
  ckpt.log = std::move(log);

  if (head == HeadKind::gaussian) {
    // Laplace posterior over the mean-head weights, fitted in z space.
    GaussianPrediction train_pred = predict_gaussian(net, view, data.splits.train, codec);
    std::vector<double> var_z(train_pred.variance.size());
    std::vector<double> resid_z(train_pred.variance.size());
    const double s2 = codec.znorm.sd * codec.znorm.sd;
    for (std::size_t i = 0; i < var_z.size(); ++i) {
      var_z[i] = train_pred.variance[i] / s2;
      const double y_eval = data.log_space ? std::log(data.labels[data.splits.train[i]]) : data.labels[data.splits.train[i]];
      resid_z[i] = codec.znorm.apply(y_eval) - codec.znorm.apply(train_pred.mean[i]);
    }
    auto [w, b] = net.mean_head_weights();
    ckpt.laplace = laplace_fit(train_pred.features, var_z, resid_z, w, b);
  }
  return ckpt;
}

/// PCA + ridge classical baseline; reuses the checkpoint container.
inline Checkpoint train_ridge(const PreparedCorpus& data, std::size_t pca_components, double lambda,
                              const std::string& config_hash = "") {
  const TargetCodec codec = fit_codec(data, HeadKind::direct, 0);
  const std::size_t n_train = data.splits.train.size();
  if (n_train < 2) throw std::invalid_argument("train_ridge: too few training records");
  const std::size_t k = std::min(pca_components, n_train);

  std::vector<double> flat(n_train * PreparedCorpus::kRecordLen);
  for (std::size_t i = 0; i < n_train; ++i) {
    const float* src = data.signals.data() + data.splits.train[i] * PreparedCorpus::kRecordLen;
    for (std::size_t j = 0; j < PreparedCorpus::kRecordLen; ++j) flat[i * PreparedCorpus::kRecordLen + j] = src[j];
  }
  PcaModel pca = pca_fit(flat.data(), n_train, PreparedCorpus::kRecordLen, k);
  flat.clear();
  flat.shrink_to_fit();

  std::vector<std::vector<double>> feats(n_train);
  std::vector<double> y(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const std::size_t idx = data.splits.train[i];
    ProcessedEcg rec = data.record(idx);
    feats[i] = pca.transform(rec.samples);
    feats[i].push_back(1.0);  // intercept feature
    y[i] = codec.to_model(data.labels[idx]);
  }
  std::vector<double> w = ridge_fit(feats, y, lambda);

  Checkpoint ckpt;
  ckpt.code_version = std::string(kVersion);
  ckpt.config_hash = config_hash;
  ckpt.head = HeadKind::direct;
  ckpt.model_classes = 0;
  ckpt.seed = 0;
  ckpt.codec = codec;
  ckpt.pca = std::move(pca);
  ckpt.ridge_weights = std::move(w);
  return ckpt;
}

inline std::vector<double> ridge_predict_split(const Checkpoint& ckpt, const PreparedCorpus& data,
                                               std::span<const std::size_t> idx) {
  if (!ckpt.ridge_weights || !ckpt.pca) throw std::invalid_argument("ridge_predict_split: not a ridge checkpoint");
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    ProcessedEcg rec = data.record(i);
    std::vector<double> f = ckpt.pca->transform(rec.samples);
    f.push_back(1.0);
    out.push_back(ckpt.codec.znorm.invert(ridge_predict(*ckpt.ridge_weights, f)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble evaluation
// ---------------------------------------------------------------------------

/// Optional input perturbation applied before evaluation.
struct Perturbation {
  enum class Kind { none, snr, masking } kind = Kind::none;
  double amount = 0.0;  // snr ratio or mask proportion
  std::uint64_t seed = 99;

  std::string name() const {
    char buf[48];
    switch (kind) {
      case Kind::none: return "baseline";
      case Kind::snr: std::snprintf(buf, sizeof buf, "snr_%g", amount); return buf;
      case Kind::masking: std::snprintf(buf, sizeof buf, "mask_%g", amount); return buf;
    }
    return "?";
  }
};

/// Evaluation view: a (possibly perturbed) copy of the records of one split.
inline PreparedCorpus perturbed_view(const PreparedCorpus& data, std::span<const std::size_t> idx,
                                     const Perturbation& pert) {
  PreparedCorpus out;
  out.kind = data.kind;
  out.log_space = data.log_space;
  out.n = idx.size();
  out.signals.resize(out.n * PreparedCorpus::kRecordLen);
  out.labels.resize(out.n);
  out.meta.resize(out.n);
  Rng rng(pert.seed);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ProcessedEcg rec = data.record(idx[i]);
    Rng rec_rng = rng.derive(i);
    if (pert.kind == Perturbation::Kind::snr)
      rec = add_noise_snr(rec, pert.amount, rec_rng).ecg;
    else if (pert.kind == Perturbation::Kind::masking)
      rec = mask(rec, pert.amount, rec_rng);
    out.store(i, rec);
    out.labels[i] = data.labels[idx[i]];
    out.meta[i] = data.meta[idx[i]];
  }
  out.splits.random_test.resize(out.n);
  std::iota(out.splits.random_test.begin(), out.splits.random_test.end(), 0);
  return out;
}

/// Per-record combined ensemble outputs plus per-seed regression metrics.
struct EnsembleEvaluation {
  std::vector<double> targets;    // evaluation space
  std::vector<double> mean;       // combined prediction
  std::vector<double> aleatoric;  // variances, evaluation-space units^2
  std::vector<double> epistemic_ensemble;
  std::vector<double> epistemic_laplace;
  std::vector<RegressionMetrics> per_seed;  // one per member
  RegressionMetrics combined;
  double target_sd = 0.0;
};

/// Runs every Gaussian member over the given records and combines them:
/// mean/aleatoric averages, population variance of means, average Laplace
/// quadratic form.
inline EnsembleEvaluation evaluate_gaussian_ensemble(std::vector<Checkpoint>& members, const PreparedCorpus& data,
                                                     std::span<const std::size_t> idx) {
  if (members.empty()) throw std::invalid_argument("evaluate_gaussian_ensemble: empty ensemble");
  const std::size_t n = idx.size();
  if (n == 0) throw std::invalid_argument("evaluate_gaussian_ensemble: empty split");

  EnsembleEvaluation ev;
  ev.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ev.targets[i] = data.log_space ? std::log(data.labels[idx[i]]) : data.labels[idx[i]];
  {
    double mu = 0.0;
    for (double t : ev.targets) mu += t;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double t : ev.targets) var += (t - mu) * (t - mu);
    ev.target_sd = std::sqrt(var / static_cast<double>(n));
  }

  const std::size_t m = members.size();
  std::vector<std::vector<double>> means(m), variances(m), laplace_var(m);
  for (std::size_t s = 0; s < m; ++s) {
    Checkpoint& ck = members[s];
    if (ck.head != HeadKind::gaussian) throw std::invalid_argument("evaluate_gaussian_ensemble: non-gaussian member");
    EcgNet net = ck.instantiate();
    TrainingSet view;
    view.signals = data.signals.data();
    view.n = data.n;
    view.labels_raw = data.labels;
    GaussianPrediction pred = predict_gaussian(net, view, idx, ck.codec);
    // predictions are already in evaluation space (log space for creatinine)
    means[s].resize(n);
    variances[s].resize(n);
    laplace_var[s].resize(n, 0.0);
    const double s2 = ck.codec.znorm.sd * ck.codec.znorm.sd;
    for (std::size_t i = 0; i < n; ++i) {
      means[s][i] = pred.mean[i];
      variances[s][i] = pred.variance[i];
      if (ck.laplace) laplace_var[s][i] = ck.laplace->variance_with_bias(pred.features[i]) * s2;
    }
    const RegressionMetrics rm = regression_metrics(means[s], ev.targets, ev.target_sd);
    ev.per_seed.push_back(rm);
  }

  ev.mean.resize(n);
  ev.aleatoric.resize(n);
  ev.epistemic_ensemble.resize(n);
  ev.epistemic_laplace.resize(n);
  std::vector<double> member_mean(m), member_var(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < m; ++s) {
      member_mean[s] = means[s][i];
      member_var[s] = variances[s][i];
    }
    const PredictiveDistribution pd = combine_members(member_mean, member_var);
    ev.mean[i] = pd.mean;
    ev.aleatoric[i] = pd.aleatoric;
    ev.epistemic_ensemble[i] = pd.epistemic_ensemble;
    double lap = 0.0;
    for (std::size_t s = 0; s < m; ++s) lap += laplace_var[s][i];
    ev.epistemic_laplace[i] = lap / static_cast<double>(m);
  }
  ev.combined = regression_metrics(ev.mean, ev.targets, ev.target_sd);
  return ev;
}

/// Direct-head (or ridge) evaluation: per-seed regression metrics plus the
/// seed-averaged prediction metrics.
struct DirectEvaluation {
  std::vector<double> targets;
  std::vector<double> mean;
  std::vector<RegressionMetrics> per_seed;
  RegressionMetrics combined;
  double target_sd = 0.0;
};

inline DirectEvaluation evaluate_direct_models(std::vector<Checkpoint>& members, const PreparedCorpus& data,
                                               std::span<const std::size_t> idx) {
  if (members.empty()) throw std::invalid_argument("evaluate_direct_models: empty checkpoint list");
  const std::size_t n = idx.size();
  DirectEvaluation ev;
  ev.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ev.targets[i] = data.log_space ? std::log(data.labels[idx[i]]) : data.labels[idx[i]];
  {
    double mu = 0.0;
    for (double t : ev.targets) mu += t;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double t : ev.targets) var += (t - mu) * (t - mu);
    ev.target_sd = std::sqrt(var / static_cast<double>(n));
  }
  ev.mean.assign(n, 0.0);
  for (Checkpoint& ck : members) {
    std::vector<double> preds;  // already in evaluation space
    if (ck.ridge_weights) {
      preds = ridge_predict_split(ck, data, idx);
    } else {
      if (ck.head != HeadKind::direct) throw std::invalid_argument("evaluate_direct_models: non-direct member");
      EcgNet net = ck.instantiate();
      TrainingSet view;
      view.signals = data.signals.data();
      view.n = data.n;
      view.labels_raw = data.labels;
      preds = predict_direct(net, view, idx, ck.codec);
    }
    ev.per_seed.push_back(regression_metrics(preds, ev.targets, ev.target_sd));
    for (std::size_t i = 0; i < n; ++i) ev.mean[i] += preds[i] / static_cast<double>(members.size());
  }
  ev.combined = regression_metrics(ev.mean, ev.targets, ev.target_sd);
  return ev;
}

/// Class-head evaluation: cumulative AUROCs, macro average and the MAE of
/// class predictions mapped back to concentrations.
struct ClassEvaluation {
  CumulativeAuroc roc;
  double decoded_mae = 0.0;
  std::vector<int> predicted_class;
};

inline ClassEvaluation evaluate_class_model(Checkpoint& ckpt, const PreparedCorpus& data,
                                            std::span<const std::size_t> idx) {
  if (!ckpt.codec.discretizer) throw std::invalid_argument("evaluate_class_model: checkpoint has no discretizer");
  const Discretizer& disc = *ckpt.codec.discretizer;
  EcgNet net = ckpt.instantiate();
  TrainingSet view;
  view.signals = data.signals.data();
  view.n = data.n;
  view.labels_raw = data.labels;
  const std::vector<std::vector<double>> probs = predict_class_probs(net, view, idx);

  const int k_int = disc.n_intervals();
  std::vector<int> true_cls(idx.size());
  std::vector<std::vector<double>> cumulative(idx.size());
  ClassEvaluation ev;
  double mae = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double y_eval = data.log_space ? std::log(data.labels[idx[i]]) : data.labels[idx[i]];
    true_cls[i] = disc.discretize(y_eval);
    cumulative[i].resize(static_cast<std::size_t>(k_int) - 1);
    int pred_cls;
    if (ckpt.head == HeadKind::classification) {
      double acc = 0.0;
      int argmax = 0;
      for (int c = 0; c < k_int; ++c)
        if (probs[i][static_cast<std::size_t>(c)] > probs[i][static_cast<std::size_t>(argmax)]) argmax = c;
      pred_cls = argmax + 1;
      for (int t = 0; t + 1 < k_int; ++t) {
        acc += probs[i][static_cast<std::size_t>(t)];
        cumulative[i][static_cast<std::size_t>(t)] = acc;  // p(class <= t+1)
      }
    } else {
      // ordinal rank probabilities p_j = P(class > j) -> p(class <= j) = 1 - p_j
      pred_cls = ordinal_decode(probs[i]);
      for (int t = 0; t + 1 < k_int; ++t) cumulative[i][static_cast<std::size_t>(t)] = 1.0 - probs[i][static_cast<std::size_t>(t)];
    }
    ev.predicted_class.push_back(pred_cls);
    mae += std::abs(disc.class_to_concentration(pred_cls) - y_eval);
  }
  ev.decoded_mae = mae / static_cast<double>(idx.size());
  ev.roc = cumulative_macro_auroc(cumulative, true_cls, k_int);
  return ev;
}

}  // namespace elx
