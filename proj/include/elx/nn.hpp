#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "elx/autodiff.hpp"
#include "elx/rng.hpp"

namespace elx {

enum class HeadKind { direct, gaussian, classification, ordinal };

inline std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::direct: return "direct";
    case HeadKind::gaussian: return "gaussian";
    case HeadKind::classification: return "classification";
    case HeadKind::ordinal: return "ordinal";
  }
  return "?";
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "direct") return HeadKind::direct;
  if (s == "gaussian") return HeadKind::gaussian;
  if (s == "classification") return HeadKind::classification;
  if (s == "ordinal") return HeadKind::ordinal;
  throw std::invalid_argument("unknown head: " + s);
}

/// Residual 1-D conv backbone geometry. Every block halves nothing by
/// default but downsamples by its stride; odd kernels keep the main and
/// shortcut paths length-aligned.
struct BackboneConfig {
  int in_channels = 8;
  int in_len = 4096;
  std::vector<int> channels{16, 32, 32, 64};
  std::vector<int> downsample{4, 4, 4, 4};
  int kernel = 17;
  double dropout = 0.2;

  int n_blocks() const { return static_cast<int>(channels.size()); }
  int feature_dim() const { return channels.back(); }

  int out_len() const {
    int len = in_len;
    for (int ds : downsample) len = (len - 1) / ds + 1;
    return len;
  }

  void validate() const {
    if (channels.empty() || channels.size() != downsample.size())
      throw std::invalid_argument("BackboneConfig: channels/downsample size mismatch");
    if (kernel < 3 || kernel % 2 == 0) throw std::invalid_argument("BackboneConfig: kernel must be odd and >= 3");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("BackboneConfig: bad dropout rate");
    for (int c : channels)
      if (c < 1) throw std::invalid_argument("BackboneConfig: bad channel count");
    for (int d : downsample)
      if (d < 1) throw std::invalid_argument("BackboneConfig: bad downsample factor");
    if (out_len() < 1) throw std::invalid_argument("BackboneConfig: output length collapses to zero");
  }

  /// Default desk-scale analogue of the reference ECG ResNet.
  static BackboneConfig desk_default() { return {}; }

  /// Small configuration for fast experiments and the CI-scale pipelines.
  static BackboneConfig small() {
    BackboneConfig c;
    c.channels = {12, 24};
    c.downsample = {8, 8};
    c.kernel = 9;
    c.dropout = 0.1;
    return c;
  }
};

namespace detail {

struct ConvLayer {
  ad::Param w, b;
  int stride = 1, pad = 0;

  ConvLayer(int out_ch, int in_ch, int k, int stride_, Rng& rng)
      : w(ad::Param(ad::Tensor::zeros({out_ch, in_ch, k}, true))),
        b(ad::Param(ad::Tensor::zeros({out_ch}, true))),
        stride(stride_),
        pad(k / 2) {
    const double sd = std::sqrt(2.0 / (static_cast<double>(in_ch) * k));
    for (double& v : w.value.val()) v = rng.gaussian(0.0, sd);
  }

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::conv1d(x, w.value, b.value, stride, pad); }
};

struct BnLayer {
  ad::Param gamma, beta;
  ad::BnStats stats;

  explicit BnLayer(int channels)
      : gamma(ad::Param(ad::Tensor::from(std::vector<double>(static_cast<std::size_t>(channels), 1.0), {channels}, true))),
        beta(ad::Param(ad::Tensor::zeros({channels}, true))),
        stats(channels, 0.1) {}

  ad::Tensor operator()(const ad::Tensor& x, bool train) {
    return ad::batchnorm1d(x, gamma.value, beta.value, stats, train);
  }
};

struct DenseLayer {
  ad::Param w, b;

  DenseLayer(int in_dim, int out_dim, Rng& rng, double weight_sd)
      : w(ad::Param(ad::Tensor::zeros({in_dim, out_dim}, true))), b(ad::Param(ad::Tensor::zeros({out_dim}, true))) {
    for (double& v : w.value.val()) v = rng.gaussian(0.0, weight_sd);
  }

  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, w.value, b.value); }
};

struct ResBlock {
  ConvLayer conv1, conv2;
  BnLayer bn1, bn2;
  std::optional<ConvLayer> proj;
  std::optional<BnLayer> proj_bn;
  double dropout;

  ResBlock(int in_ch, int out_ch, int kernel, int ds, double dropout_rate, Rng& rng)
      : conv1(out_ch, in_ch, kernel, ds, rng),
        conv2(out_ch, out_ch, kernel, 1, rng),
        bn1(out_ch),
        bn2(out_ch),
        dropout(dropout_rate) {
    if (in_ch != out_ch || ds != 1) {
      proj.emplace(out_ch, in_ch, 1, ds, rng);
      proj_bn.emplace(out_ch);
    }
  }

  ad::Tensor operator()(const ad::Tensor& x, bool train, Rng& drop_rng) {
    ad::Tensor h = ad::relu(bn1(conv1(x), train));
    h = ad::dropout(h, dropout, drop_rng, train);
    h = bn2(conv2(h), train);
    ad::Tensor skip = proj ? (*proj_bn)((*proj)(x), train) : x;
    return ad::relu(ad::add(h, skip));
  }
};

}  // namespace detail

/// Residual conv backbone with one of four task heads. All randomness
/// (initialization, dropout) flows from the seed handed to the constructor,
/// so a fixed seed reproduces the training trajectory exactly.
class EcgNet {
 public:
  struct Outputs {
    ad::Tensor features;   // [N, F] pooled backbone features
    ad::Tensor primary;    // head output (mean / logits)
    ad::Tensor secondary;  // gaussian head: log variance
  };

  EcgNet(BackboneConfig cfg, HeadKind head, int n_classes, std::uint64_t seed)
      : cfg_(std::move(cfg)), head_(head), n_classes_(n_classes), seed_(seed), dropout_rng_(Rng(seed).derive(0xd207)) {
    cfg_.validate();
    Rng init = Rng(seed).derive(0x1217);
    int ch = cfg_.in_channels;
    for (int i = 0; i < cfg_.n_blocks(); ++i) {
      blocks_.emplace_back(ch, cfg_.channels[static_cast<std::size_t>(i)], cfg_.kernel,
                           cfg_.downsample[static_cast<std::size_t>(i)], cfg_.dropout, init);
      ch = cfg_.channels[static_cast<std::size_t>(i)];
    }
    const int f = cfg_.feature_dim();
    const double head_sd = std::sqrt(1.0 / f);
    switch (head_) {
      case HeadKind::direct:
        head_a_.emplace(f, 1, init, head_sd);
        break;
      case HeadKind::gaussian:
        head_a_.emplace(f, 1, init, head_sd);
        head_b_.emplace(f, 1, init, head_sd);
        break;
      case HeadKind::classification: {
        if (n_classes_ < 2) throw std::invalid_argument("EcgNet: classification needs >= 2 intervals");
        head_a_.emplace(f, n_classes_, init, head_sd);
        break;
      }
      case HeadKind::ordinal: {
        if (n_classes_ < 2) throw std::invalid_argument("EcgNet: ordinal needs >= 2 intervals");
        head_a_.emplace(f, 1, init, head_sd);
        // raw bias parameters: b_1 = theta_1, then descending steps exp(theta_j)
        std::vector<double> theta(static_cast<std::size_t>(n_classes_) - 1, 0.0);
        theta[0] = 1.0;
        for (std::size_t j = 1; j < theta.size(); ++j)
          theta[j] = std::log(2.0 / static_cast<double>(theta.size()));
        ordinal_theta_.emplace(ad::Tensor::from(std::move(theta), {n_classes_ - 1}, true));
        break;
      }
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  HeadKind head() const { return head_; }
  int n_classes() const { return n_classes_; }
  std::uint64_t seed() const { return seed_; }

  /// Head outputs for a [N, 8, 4096] input batch.
  Outputs forward(const ad::Tensor& x, bool train) {
    ad::Tensor h = x;
    for (auto& blk : blocks_) h = blk(h, train, dropout_rng_);
    ad::Tensor feat = ad::gap1d(h);
    Outputs out;
    out.features = feat;
    switch (head_) {
      case HeadKind::direct:
        out.primary = (*head_a_)(feat);
        break;
      case HeadKind::gaussian:
        out.primary = (*head_a_)(feat);
        out.secondary = (*head_b_)(feat);
        break;
      case HeadKind::classification:
        out.primary = (*head_a_)(feat);
        break;
      case HeadKind::ordinal: {
        // shared weight vector, ordered per-rank biases
        ad::Tensor shared = ad::matmul(feat, head_a_->w.value);
        out.primary = ad::outer_add(shared, ad::ordered_bias(ordinal_theta_->value));
        break;
      }
    }
    return out;
  }

  /// Deterministic dropout stream control: reseeding makes two forward
  /// passes identical, which the finite-difference checks rely on.
  void reseed_dropout(std::uint64_t s) { dropout_rng_ = Rng(s); }

  std::vector<ad::Param*> params() {
    std::vector<ad::Param*> ps;
    for (auto& blk : blocks_) {
      ps.push_back(&blk.conv1.w);
      ps.push_back(&blk.conv1.b);
      ps.push_back(&blk.bn1.gamma);
      ps.push_back(&blk.bn1.beta);
      ps.push_back(&blk.conv2.w);
      ps.push_back(&blk.conv2.b);
      ps.push_back(&blk.bn2.gamma);
      ps.push_back(&blk.bn2.beta);
      if (blk.proj) {
        ps.push_back(&blk.proj->w);
        ps.push_back(&blk.proj->b);
        ps.push_back(&blk.proj_bn->gamma);
        ps.push_back(&blk.proj_bn->beta);
      }
    }
    if (head_a_) {
      ps.push_back(&head_a_->w);
      ps.push_back(&head_a_->b);
    }
    if (head_b_) {
      ps.push_back(&head_b_->w);
      ps.push_back(&head_b_->b);
    }
    if (ordinal_theta_) ps.push_back(&*ordinal_theta_);
    return ps;
  }

  std::vector<std::vector<double>*> stat_buffers() {
    std::vector<std::vector<double>*> bufs;
    for (auto& blk : blocks_) {
      bufs.push_back(&blk.bn1.stats.mean);
      bufs.push_back(&blk.bn1.stats.var);
      bufs.push_back(&blk.bn2.stats.mean);
      bufs.push_back(&blk.bn2.stats.var);
      if (blk.proj_bn) {
        bufs.push_back(&blk.proj_bn->stats.mean);
        bufs.push_back(&blk.proj_bn->stats.var);
      }
    }
    return bufs;
  }

  /// Deep copy of all learnable state (used for best-epoch selection).
  struct Snapshot {
    std::vector<std::vector<double>> params;
    std::vector<std::vector<double>> stats;
  };

  Snapshot snapshot() {
    Snapshot s;
    for (ad::Param* p : params()) s.params.push_back(p->value.val());
    for (auto* b : stat_buffers()) s.stats.push_back(*b);
    return s;
  }

  void restore(const Snapshot& s) {
    auto ps = params();
    auto bs = stat_buffers();
    if (s.params.size() != ps.size() || s.stats.size() != bs.size())
      throw std::invalid_argument("EcgNet::restore: incompatible snapshot");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.val() = s.params[i];
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i] = s.stats[i];
  }

  /// Seeds the output layer with marginal class statistics: softmax biases
  /// get log priors, ordinal rank biases the logit of P(class > j). Speeds up
  /// convergence on imbalanced interval tasks.
  void set_class_prior_bias(const std::vector<double>& class_priors) {
    if (head_ == HeadKind::classification) {
      if (static_cast<int>(class_priors.size()) != n_classes_)
        throw std::invalid_argument("set_class_prior_bias: prior size mismatch");
      auto& b = head_a_->b.value.val();
      for (int c = 0; c < n_classes_; ++c)
        b[static_cast<std::size_t>(c)] = std::log(std::max(class_priors[static_cast<std::size_t>(c)], 1e-6));
    } else if (head_ == HeadKind::ordinal) {
      if (static_cast<int>(class_priors.size()) != n_classes_)
        throw std::invalid_argument("set_class_prior_bias: prior size mismatch");
      // rank marginal p_j = P(class > j); biases must decrease strictly
      std::vector<double> logits(static_cast<std::size_t>(n_classes_) - 1);
      double tail = 1.0;
      for (int j = 0; j + 1 < n_classes_; ++j) {
        tail -= std::max(class_priors[static_cast<std::size_t>(j)], 1e-6);
        const double p = std::clamp(tail, 1e-6, 1.0 - 1e-6);
        logits[static_cast<std::size_t>(j)] = std::log(p / (1.0 - p));
      }
      auto& theta = ordinal_theta_->value.val();
      theta[0] = logits[0];
      double prev = logits[0];
      for (std::size_t j = 1; j < logits.size(); ++j) {
        const double step = std::max(prev - logits[j], 1e-3);
        theta[j] = std::log(step);
        prev = prev - step;
      }
    } else {
      throw std::logic_error("set_class_prior_bias: class heads only");
    }
  }

  /// Gaussian-head mean weights and bias (the Laplace target layer).
  std::pair<std::vector<double>, double> mean_head_weights() {
    if (head_ != HeadKind::gaussian && head_ != HeadKind::direct)
      throw std::logic_error("mean_head_weights: regression heads only");
    std::vector<double> w = head_a_->w.value.val();
    return {w, head_a_->b.value.val()[0]};
  }

 private:
  BackboneConfig cfg_;
  HeadKind head_;
  int n_classes_;
  std::uint64_t seed_;
  Rng dropout_rng_;
  std::vector<detail::ResBlock> blocks_;
  std::optional<detail::DenseLayer> head_a_;
  std::optional<detail::DenseLayer> head_b_;   // gaussian log-variance
  std::optional<ad::Param> ordinal_theta_;     // ordinal rank biases
};

}  // namespace elx
