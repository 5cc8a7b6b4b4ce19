#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "elx/linalg.hpp"

namespace elx {

/// Principal component model: data mean, orthonormal component rows and the
/// covariance eigenvalues (descending).
struct PcaModel {
  std::size_t dim = 0;
  std::vector<double> mean;      // length dim
  la::Mat components;            // n_components x dim, rows orthonormal
  std::vector<double> eigenvalues;

  std::size_t n_components() const { return components.rows; }

  /// z = C (x - mean)
  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != dim) throw std::invalid_argument("pca_transform: shape mismatch");
    std::vector<double> centered(dim);
    for (std::size_t i = 0; i < dim; ++i) centered[i] = x[i] - mean[i];
    std::vector<double> z(n_components(), 0.0);
    for (std::size_t r = 0; r < n_components(); ++r) {
      const double* row = components.row(r);
      double acc = 0.0;
      for (std::size_t i = 0; i < dim; ++i) acc += row[i] * centered[i];
      z[r] = acc;
    }
    return z;
  }

  /// x = mean + C^T z
  std::vector<double> inverse_transform(std::span<const double> z) const {
    if (z.size() != n_components()) throw std::invalid_argument("pca inverse_transform: shape mismatch");
    std::vector<double> x(mean);
    for (std::size_t r = 0; r < n_components(); ++r) {
      const double* row = components.row(r);
      for (std::size_t i = 0; i < dim; ++i) x[i] += z[r] * row[i];
    }
    return x;
  }
};

namespace detail {

/// Flips each component so its largest-magnitude entry is positive; keeps
/// serialized models and test expectations stable.
inline void fix_component_signs(la::Mat& c) {
  for (std::size_t r = 0; r < c.rows; ++r) {
    double best = 0.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < c.cols; ++i)
      if (std::abs(c(r, i)) > best) {
        best = std::abs(c(r, i));
        best_i = i;
      }
    if (c(r, best_i) < 0.0)
      for (std::size_t i = 0; i < c.cols; ++i) c(r, i) = -c(r, i);
  }
}

}  // namespace detail

/// Fits PCA on a row-major data matrix [n x dim]. The eigenproblem is posed
/// on the smaller Gram side; the (n-1)-normalized covariance eigenvalues are
/// reported. Dense Jacobi handles moderate problems, Lanczos (iteration cap
/// 300, tolerance 1e-10, fixed seed 1234) the rest.
inline PcaModel pca_fit(const double* data, std::size_t n, std::size_t dim, std::size_t n_components = 256) {
  if (n_components == 0) throw std::invalid_argument("pca_fit: need at least one component");
  if (n < n_components)
    throw std::invalid_argument("pca_fit: fewer samples than requested components");
  if (n < 2) throw std::invalid_argument("pca_fit: need at least two samples");

  PcaModel model;
  model.dim = dim;
  model.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = data + i * dim;
    for (std::size_t j = 0; j < dim; ++j) model.mean[j] += row[j];
  }
  for (double& v : model.mean) v /= static_cast<double>(n);

  constexpr std::size_t kDenseLimit = 600;
  constexpr std::size_t kLanczosCap = 300;
  constexpr double kLanczosTol = 1e-10;
  constexpr std::uint64_t kSeed = 1234;

  const bool gram_side = n <= dim;  // eigensolve on the smaller of X X^T / X^T X
  const std::size_t g = gram_side ? n : dim;

  la::Mat gram(g, g);
  std::vector<double> centered(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) centered[i * dim + j] = data[i * dim + j] - model.mean[j];
  if (gram_side)
    la::gemm_nt(n, n, dim, 1.0, centered.data(), dim, centered.data(), dim, 0.0, gram.a.data(), n);
  else
    la::gemm_tn(dim, dim, n, 1.0, centered.data(), dim, centered.data(), dim, 0.0, gram.a.data(), dim);

  std::vector<double> evals;
  la::Mat evecs;
  const std::size_t want = std::min(n_components, g);
  if (g <= kDenseLimit) {
    la::jacobi_eigh(gram, evals, evecs);
  } else {
    auto apply = [&gram, g](const double* x, double* y) {
      for (std::size_t i = 0; i < g; ++i) {
        const double* row = gram.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < g; ++j) acc += row[j] * x[j];
        y[i] = acc;
      }
    };
    la::lanczos_topk(apply, g, want, std::max(kLanczosCap, want + 16), kLanczosTol, kSeed, evals, evecs);
  }

  model.eigenvalues.assign(want, 0.0);
  model.components = la::Mat(want, dim);
  for (std::size_t r = 0; r < want; ++r) {
    const double lam_gram = std::max(0.0, evals[r]);
    model.eigenvalues[r] = lam_gram / static_cast<double>(n - 1);
    if (gram_side) {
      // covariance eigenvector: X^T u / ||X^T u||
      double* out = model.components.row(r);
      for (std::size_t j = 0; j < dim; ++j) out[j] = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = evecs(r, i);
        const double* row = centered.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) out[j] += u * row[j];
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += out[j] * out[j];
      norm = std::sqrt(norm);
      if (norm > 0)
        for (std::size_t j = 0; j < dim; ++j) out[j] /= norm;
    } else {
      for (std::size_t j = 0; j < dim; ++j) model.components(r, j) = evecs(r, j);
    }
  }
  detail::fix_component_signs(model.components);
  return model;
}

inline PcaModel pca_fit(const std::vector<std::vector<double>>& rows, std::size_t n_components = 256) {
  if (rows.empty()) throw std::invalid_argument("pca_fit: empty data");
  const std::size_t dim = rows.front().size();
  std::vector<double> flat(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw std::invalid_argument("pca_fit: ragged data");
    std::copy(rows[i].begin(), rows[i].end(), flat.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return pca_fit(flat.data(), rows.size(), dim, n_components);
}

}  // namespace elx
