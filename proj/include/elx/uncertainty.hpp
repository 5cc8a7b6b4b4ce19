#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "elx/linalg.hpp"

namespace elx {

/// Per-prediction summary: ensemble mean plus the three uncertainty figures.
struct PredictiveDistribution {
  double mean = 0.0;
  double aleatoric = 0.0;          // average predicted variance
  double epistemic_ensemble = 0.0; // population variance of member means
  double epistemic_laplace = 0.0;  // average last-layer Laplace variance
};

/// Combines per-member (mu_i, sigma2_i) predictions for one input.
/// mean = avg mu_i, aleatoric = avg sigma2_i, epistemic = population variance
/// of the mu_i.
inline PredictiveDistribution combine_members(std::span<const double> member_means,
                                              std::span<const double> member_variances) {
  if (member_means.empty() || member_means.size() != member_variances.size())
    throw std::invalid_argument("combine_members: empty or mismatched ensemble");
  PredictiveDistribution out;
  const double m = static_cast<double>(member_means.size());
  for (double v : member_means) out.mean += v;
  out.mean /= m;
  for (double v : member_variances) out.aleatoric += v;
  out.aleatoric /= m;
  for (double v : member_means) out.epistemic_ensemble += (v - out.mean) * (v - out.mean);
  out.epistemic_ensemble /= m;
  return out;
}

/// Gaussian posterior over the mean-head weights (bias folded in as a
/// trailing constant-1 feature): Sigma = (H + tau I)^-1 with
/// H = sum_i phi_i phi_i^T / sigma2_i, the exact NLL Hessian when the
/// per-point variances are held fixed.
struct LaplacePosterior {
  std::vector<double> theta_map;  // last-layer weights, bias last
  la::Mat covariance;
  double tau = 1.0;

  /// Pure quadratic form phi^T Sigma phi over the full parameter-space
  /// vector (bias slot included), so v(0) = 0 and v(a phi) = a^2 v(phi).
  double variance(std::span<const double> phi) const {
    const std::size_t d = theta_map.size();
    if (phi.size() != d) throw std::invalid_argument("LaplacePosterior::variance: feature size mismatch");
    double v = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < d; ++j) row += covariance(i, j) * phi[j];
      v += phi[i] * row;
    }
    return v;
  }

  /// Predictive epistemic variance for backbone features: augments with the
  /// constant-1 bias slot before the quadratic form.
  double variance_with_bias(std::span<const double> features) const {
    std::vector<double> phi(features.begin(), features.end());
    phi.push_back(1.0);
    return variance(phi);
  }
};

namespace detail {

struct LaplaceAccumulator {
  la::Mat hessian;
  std::vector<double> theta;
  double nll_at_map = 0.0;
  std::size_t n_points = 0;
};

inline LaplaceAccumulator accumulate_hessian(std::span<const std::vector<double>> features,
                                             std::span<const double> variances, std::span<const double> residuals,
                                             std::span<const double> theta_map) {
  const std::size_t d = theta_map.size();
  LaplaceAccumulator acc;
  acc.hessian = la::Mat(d, d);
  acc.theta.assign(theta_map.begin(), theta_map.end());
  std::vector<double> phi(d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() + 1 != d) throw std::invalid_argument("laplace_fit: feature size mismatch");
    if (!(variances[i] > 0.0)) throw std::invalid_argument("laplace_fit: non-positive predicted variance");
    std::copy(features[i].begin(), features[i].end(), phi.begin());
    phi[d - 1] = 1.0;
    const double inv_s2 = 1.0 / variances[i];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) acc.hessian(a, b) += phi[a] * phi[b] * inv_s2;
    acc.nll_at_map += 0.5 * std::log(variances[i]) + 0.5 * residuals[i] * residuals[i] * inv_s2 +
                      0.5 * std::log(2.0 * std::numbers::pi);
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) acc.hessian(b, a) = acc.hessian(a, b);
  acc.n_points = features.size();
  return acc;
}

/// Laplace evidence for a Gaussian prior N(0, tau^-1 I):
/// log p(D | tau) = -nll(theta) - tau/2 ||theta||^2 + d/2 log tau - 1/2 log det(H + tau I)
/// (constants independent of tau dropped).
inline double laplace_evidence(const LaplaceAccumulator& acc, double tau) {
  const std::size_t d = acc.theta.size();
  la::Mat a = acc.hessian;
  for (std::size_t i = 0; i < d; ++i) a(i, i) += tau;
  la::Mat l = a;
  la::cholesky(l);
  double theta_norm2 = 0.0;
  for (double t : acc.theta) theta_norm2 += t * t;
  return -acc.nll_at_map - 0.5 * tau * theta_norm2 + 0.5 * static_cast<double>(d) * std::log(tau) -
         0.5 * la::logdet_from_cholesky(l);
}

}  // namespace detail

/// Fits the last-layer Laplace posterior of a Gaussian-head model.
///
/// `features` are the pooled backbone features phi(x_i) of the training set,
/// `variances` the per-point predicted sigma^2(x_i) (held fixed), `residuals`
/// y_i - mu(x_i), and `weights`/`bias` the trained mean-head layer. When
/// `tau` is non-positive the prior precision is chosen by maximizing the
/// Laplace marginal likelihood over a 10-point log grid in [1e-2, 1e3].
inline LaplacePosterior laplace_fit(std::span<const std::vector<double>> features, std::span<const double> variances,
                                    std::span<const double> residuals, std::span<const double> weights, double bias,
                                    double tau = 0.0) {
  if (features.empty() || features.size() != variances.size() || features.size() != residuals.size())
    throw std::invalid_argument("laplace_fit: inconsistent training arrays");
  std::vector<double> theta(weights.begin(), weights.end());
  theta.push_back(bias);
  const detail::LaplaceAccumulator acc = detail::accumulate_hessian(features, variances, residuals, theta);

  double chosen = tau;
  if (!(tau > 0.0)) {
    double best_ev = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < 10; ++g) {
      const double cand = std::pow(10.0, -2.0 + 5.0 * g / 9.0);
      double ev;
      try {
        ev = detail::laplace_evidence(acc, cand);
      } catch (const std::runtime_error&) {
        continue;
      }
      if (ev > best_ev) {
        best_ev = ev;
        chosen = cand;
      }
    }
    if (!(chosen > 0.0)) throw std::runtime_error("laplace_fit: no usable prior precision on the grid");
  }

  la::Mat a = acc.hessian;
  for (std::size_t i = 0; i < theta.size(); ++i) a(i, i) += chosen;
  LaplacePosterior post;
  try {
    post.covariance = la::spd_inverse(a);
  } catch (const std::runtime_error&) {
    throw std::runtime_error("laplace_fit: H + tau I is not positive definite (tau too small?)");
  }
  post.theta_map = std::move(theta);
  post.tau = chosen;
  return post;
}

}  // namespace elx
