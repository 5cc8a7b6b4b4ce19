#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "elx/linalg.hpp"

namespace elx::testing {

/// O(n^2) pair-counting AUROC, ties worth one half.
inline double auroc_bruteforce(std::span<const double> scores, std::span<const int> labels) {
  double pairs = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j])
        pairs += 1.0;
      else if (scores[i] == scores[j])
        pairs += 0.5;
    }
  }
  const std::size_t n_neg = scores.size() - n_pos;
  return pairs / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Conjugate Bayesian linear-regression posterior covariance
/// (tau I + sum phi phi^T / sigma2)^-1, built with its own loops and inverted
/// by Gauss-Jordan elimination; independent of the library's Cholesky path.
inline la::Mat conjugate_posterior_covariance(const std::vector<std::vector<double>>& phi, double sigma2,
                                              double tau) {
  const std::size_t d = phi.front().size();
  std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) a[i][i] = tau;
  for (const auto& row : phi)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) a[i][j] += row[i] * row[j] / sigma2;
  std::vector<std::vector<double>> inv(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const double s = a[col][col];
    for (std::size_t j = 0; j < d; ++j) {
      a[col][j] /= s;
      inv[col][j] /= s;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < d; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  la::Mat out(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = inv[i][j];
  return out;
}

/// Single-bin DFT amplitude at frequency f over the window [lo, hi).
inline double tone_amplitude(const std::vector<double>& x, double fs, double f, std::size_t lo, std::size_t hi) {
  double re = 0.0, im = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double w = 2.0 * std::numbers::pi * f * static_cast<double>(i) / fs;
    re += x[i] * std::cos(w);
    im += x[i] * std::sin(w);
  }
  return 2.0 * std::hypot(re, im) / static_cast<double>(hi - lo);
}

inline std::vector<double> sinusoid(double f, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs);
  return x;
}

}  // namespace elx::testing
