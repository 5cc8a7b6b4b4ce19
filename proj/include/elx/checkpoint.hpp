#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "elx/nn.hpp"
#include "elx/pca.hpp"
#include "elx/record_io.hpp"
#include "elx/targets.hpp"
#include "elx/train.hpp"
#include "elx/uncertainty.hpp"

namespace elx {

/// Versioned binary experiment container: everything needed to reproduce
/// predictions from a trained run (configs, codec, parameter snapshot,
/// optional PCA model / Laplace posterior / ridge weights, training log).
struct Checkpoint {
  std::string code_version;
  std::string config_hash;

  HeadKind head = HeadKind::direct;
  int model_classes = 0;  // interval count the net was built with (0 for regression heads)
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  TrainConfig train_cfg;
  TargetCodec codec;
  EcgNet::Snapshot snapshot;
  TrainLog log;

  std::optional<PcaModel> pca;
  std::optional<LaplacePosterior> laplace;
  std::optional<std::vector<double>> ridge_weights;

  /// Rebuilds the network exactly as trained.
  EcgNet instantiate() const {
    EcgNet net(backbone, head, model_classes == 0 ? 1 : model_classes, seed);
    net.restore(snapshot);
    return net;
  }
};

namespace detail {

inline constexpr std::array<char, 8> kCkptMagic = {'E', 'L', 'X', 'C', 'K', 'P', 'T', '\0'};

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

inline void put_vec(std::ostream& os, const std::vector<double>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> get_vec(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  std::vector<double> v(static_cast<std::size_t>(n));
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated vector");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    os.write(detail::kCkptMagic.data(), detail::kCkptMagic.size());
    detail::put<std::uint32_t>(os, 1u);
    detail::put<std::uint32_t>(os, 0u);
    detail::put_string(os, c.code_version);
    detail::put_string(os, c.config_hash);

    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(c.head));
    detail::put<std::int32_t>(os, c.model_classes);
    detail::put<std::uint64_t>(os, c.seed);

    detail::put<std::int32_t>(os, c.backbone.in_channels);
    detail::put<std::int32_t>(os, c.backbone.in_len);
    detail::put<std::int32_t>(os, c.backbone.kernel);
    detail::put<double>(os, c.backbone.dropout);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.backbone.channels.size()));
    for (std::size_t i = 0; i < c.backbone.channels.size(); ++i) {
      detail::put<std::int32_t>(os, c.backbone.channels[i]);
      detail::put<std::int32_t>(os, c.backbone.downsample[i]);
    }

    detail::put<std::int32_t>(os, c.train_cfg.epochs);
    detail::put<std::int32_t>(os, c.train_cfg.batch_size);
    detail::put<double>(os, c.train_cfg.lr);
    detail::put<double>(os, c.train_cfg.plateau_factor);
    detail::put<std::int32_t>(os, c.train_cfg.patience);
    detail::put<double>(os, c.train_cfg.min_lr);
    detail::put<std::uint64_t>(os, c.train_cfg.seed);
    detail::put<std::uint8_t>(os, c.train_cfg.select_best_validation ? 1 : 0);

    detail::put<double>(os, c.codec.znorm.mean);
    detail::put<double>(os, c.codec.znorm.sd);
    detail::put<std::uint8_t>(os, c.codec.log_space ? 1 : 0);
    detail::put<std::uint8_t>(os, c.codec.discretizer ? 1 : 0);
    if (c.codec.discretizer) {
      detail::put<std::int32_t>(os, c.codec.discretizer->requested_k);
      detail::put_vec(os, c.codec.discretizer->bounds);
      detail::put_vec(os, c.codec.discretizer->class_means);
      detail::put<double>(os, c.codec.discretizer->sigma);
    }

    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.snapshot.params.size()));
    for (const auto& p : c.snapshot.params) detail::put_vec(os, p);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.snapshot.stats.size()));
    for (const auto& s : c.snapshot.stats) detail::put_vec(os, s);

    detail::put<std::uint8_t>(os, c.pca ? 1 : 0);
    if (c.pca) {
      detail::put<std::uint64_t>(os, c.pca->dim);
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.pca->n_components()));
      detail::put_vec(os, c.pca->mean);
      detail::put_vec(os, c.pca->components.a);
      detail::put_vec(os, c.pca->eigenvalues);
    }

    detail::put<std::uint8_t>(os, c.laplace ? 1 : 0);
    if (c.laplace) {
      detail::put_vec(os, c.laplace->theta_map);
      detail::put_vec(os, c.laplace->covariance.a);
      detail::put<double>(os, c.laplace->tau);
    }

    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.log.epochs.size()));
    for (const auto& e : c.log.epochs) {
      detail::put<double>(os, e.train_loss);
      detail::put<double>(os, e.val_loss);
      detail::put<double>(os, e.lr);
    }
    detail::put<std::int32_t>(os, c.log.best_epoch);
    detail::put<double>(os, c.log.best_val_loss);

    detail::put<std::uint8_t>(os, c.ridge_weights ? 1 : 0);
    if (c.ridge_weights) detail::put_vec(os, *c.ridge_weights);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != detail::kCkptMagic) throw std::runtime_error("checkpoint: bad magic");
  if (detail::get<std::uint32_t>(is) != 1u) throw std::runtime_error("checkpoint: unsupported version");
  detail::get<std::uint32_t>(is);  // reserved

  Checkpoint c;
  c.code_version = detail::get_string(is);
  c.config_hash = detail::get_string(is);

  c.head = static_cast<HeadKind>(detail::get<std::uint8_t>(is));
  c.model_classes = detail::get<std::int32_t>(is);
  c.seed = detail::get<std::uint64_t>(is);

  c.backbone.in_channels = detail::get<std::int32_t>(is);
  c.backbone.in_len = detail::get<std::int32_t>(is);
  c.backbone.kernel = detail::get<std::int32_t>(is);
  c.backbone.dropout = detail::get<double>(is);
  const auto n_blocks = detail::get<std::uint32_t>(is);
  c.backbone.channels.resize(n_blocks);
  c.backbone.downsample.resize(n_blocks);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    c.backbone.channels[i] = detail::get<std::int32_t>(is);
    c.backbone.downsample[i] = detail::get<std::int32_t>(is);
  }

  c.train_cfg.epochs = detail::get<std::int32_t>(is);
  c.train_cfg.batch_size = detail::get<std::int32_t>(is);
  c.train_cfg.lr = detail::get<double>(is);
  c.train_cfg.plateau_factor = detail::get<double>(is);
  c.train_cfg.patience = detail::get<std::int32_t>(is);
  c.train_cfg.min_lr = detail::get<double>(is);
  c.train_cfg.seed = detail::get<std::uint64_t>(is);
  c.train_cfg.select_best_validation = detail::get<std::uint8_t>(is) != 0;

  c.codec.znorm.mean = detail::get<double>(is);
  c.codec.znorm.sd = detail::get<double>(is);
  c.codec.log_space = detail::get<std::uint8_t>(is) != 0;
  if (detail::get<std::uint8_t>(is)) {
    Discretizer d;
    d.requested_k = detail::get<std::int32_t>(is);
    d.bounds = detail::get_vec(is);
    d.class_means = detail::get_vec(is);
    d.sigma = detail::get<double>(is);
    c.codec.discretizer = std::move(d);
  }

  const auto n_params = detail::get<std::uint32_t>(is);
  c.snapshot.params.resize(n_params);
  for (auto& p : c.snapshot.params) p = detail::get_vec(is);
  const auto n_stats = detail::get<std::uint32_t>(is);
  c.snapshot.stats.resize(n_stats);
  for (auto& s : c.snapshot.stats) s = detail::get_vec(is);

  if (detail::get<std::uint8_t>(is)) {
    PcaModel m;
    m.dim = static_cast<std::size_t>(detail::get<std::uint64_t>(is));
    const auto k = detail::get<std::uint32_t>(is);
    m.mean = detail::get_vec(is);
    m.components = la::Mat(k, m.dim);
    m.components.a = detail::get_vec(is);
    m.eigenvalues = detail::get_vec(is);
    c.pca = std::move(m);
  }

  if (detail::get<std::uint8_t>(is)) {
    LaplacePosterior p;
    p.theta_map = detail::get_vec(is);
    p.covariance = la::Mat(p.theta_map.size(), p.theta_map.size());
    p.covariance.a = detail::get_vec(is);
    p.tau = detail::get<double>(is);
    c.laplace = std::move(p);
  }

  const auto n_epochs = detail::get<std::uint32_t>(is);
  c.log.epochs.resize(n_epochs);
  for (auto& e : c.log.epochs) {
    e.train_loss = detail::get<double>(is);
    e.val_loss = detail::get<double>(is);
    e.lr = detail::get<double>(is);
  }
  c.log.best_epoch = detail::get<std::int32_t>(is);
  c.log.best_val_loss = detail::get<double>(is);

  if (detail::get<std::uint8_t>(is)) c.ridge_weights = detail::get_vec(is);
  return c;
}

}  // namespace elx
