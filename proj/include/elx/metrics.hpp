#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace elx {

struct RegressionMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double normalized_mse = 0.0;  // mse / sigma_y^2
};

inline RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> targets,
                                            double target_sd) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("regression_metrics: empty or mismatched inputs");
  RegressionMetrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    m.mse += d * d;
    m.mae += std::abs(d);
  }
  m.mse /= static_cast<double>(preds.size());
  m.mae /= static_cast<double>(preds.size());
  m.normalized_mse = m.mse / (target_sd * target_sd);
  return m;
}

/// Mann-Whitney AUROC with midrank tie handling, O(n log n).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("auroc: bad inputs");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]]) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct CumulativeAuroc {
  std::vector<double> per_threshold;          // AUROC for event y <= i, NaN when skipped
  std::vector<bool> skipped;                  // single-class thresholds
  double macro = std::numeric_limits<double>::quiet_NaN();  // AUmROC over valid thresholds
};

/// Cumulative ROC analysis: given per-example scores s_i(x) ~ p(class <= i)
/// for i = 1..k-1 and true classes (1-based), computes the k-1 AUROCs against
/// labels 1[class <= i] and their unweighted mean.
inline CumulativeAuroc cumulative_macro_auroc(const std::vector<std::vector<double>>& cumulative_scores,
                                              std::span<const int> true_classes, int k) {
  if (k < 2) throw std::invalid_argument("cumulative_macro_auroc: k must be >= 2");
  if (cumulative_scores.size() != true_classes.size() || cumulative_scores.empty())
    throw std::invalid_argument("cumulative_macro_auroc: bad inputs");
  const std::size_t n_thresh = cumulative_scores.front().size();
  if (n_thresh + 1 != static_cast<std::size_t>(k))
    throw std::invalid_argument("cumulative_macro_auroc: expected k-1 score columns");

  CumulativeAuroc out;
  out.per_threshold.assign(n_thresh, std::numeric_limits<double>::quiet_NaN());
  out.skipped.assign(n_thresh, false);
  double sum = 0.0;
  int valid = 0;
  std::vector<double> col(true_classes.size());
  std::vector<int> lab(true_classes.size());
  for (std::size_t t = 0; t < n_thresh; ++t) {
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < true_classes.size(); ++i) {
      col[i] = cumulative_scores[i][t];
      lab[i] = true_classes[i] <= static_cast<int>(t) + 1 ? 1 : 0;
      (lab[i] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) {
      out.skipped[t] = true;
      continue;
    }
    out.per_threshold[t] = auroc(col, lab);
    sum += out.per_threshold[t];
    ++valid;
  }
  if (valid > 0) out.macro = sum / valid;
  return out;
}

/// MAE over the retained fraction of the least uncertain predictions, per
/// fraction; ties and equal fractions resolve by stable input order.
inline std::vector<double> sparsification(std::span<const double> abs_errors, std::span<const double> uncertainties,
                                          std::span<const double> fractions = {}) {
  static const std::vector<double> kDefault{0.25, 0.5, 0.75, 1.0};
  const std::span<const double> fr = fractions.empty() ? std::span<const double>(kDefault) : fractions;
  if (abs_errors.empty() || abs_errors.size() != uncertainties.size())
    throw std::invalid_argument("sparsification: empty or mismatched inputs");
  std::vector<std::size_t> order(abs_errors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainties[a] < uncertainties[b]; });
  std::vector<double> prefix(order.size() + 1, 0.0);
  for (std::size_t i = 0; i < order.size(); ++i) prefix[i + 1] = prefix[i] + abs_errors[order[i]];
  std::vector<double> out;
  out.reserve(fr.size());
  for (double f : fr) {
    if (!(f > 0.0) || f > 1.0) throw std::invalid_argument("sparsification: fractions must be in (0, 1]");
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(f * static_cast<double>(order.size()) + 1e-9));
    out.push_back(prefix[m] / static_cast<double>(m));
  }
  return out;
}

struct CalibrationBin {
  double mean_sigma = 0.0;
  double mean_abs_error = 0.0;
  std::size_t count = 0;
};

struct CalibrationTable {
  std::vector<CalibrationBin> bins;  // equal-count, ordered by predicted sigma
  double coverage_2sigma = 0.0;      // fraction of targets inside mu +- 2 sigma
};

inline CalibrationTable calibration_bins(std::span<const double> mu, std::span<const double> sigma,
                                         std::span<const double> targets, std::size_t n_bins) {
  if (mu.empty() || mu.size() != sigma.size() || mu.size() != targets.size())
    throw std::invalid_argument("calibration_bins: bad inputs");
  if (n_bins == 0 || n_bins > mu.size())
    throw std::invalid_argument("calibration_bins: need 1 <= n_bins <= n points");
  for (double s : sigma)
    if (!(s > 0.0)) throw std::invalid_argument("calibration_bins: sigma must be positive");

  std::vector<std::size_t> order(mu.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] < sigma[b]; });

  CalibrationTable table;
  table.bins.resize(n_bins);
  const std::size_t n = mu.size();
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * n / n_bins;
    const std::size_t hi = (b + 1) * n / n_bins;
    CalibrationBin& bin = table.bins[b];
    for (std::size_t t = lo; t < hi; ++t) {
      const std::size_t i = order[t];
      bin.mean_sigma += sigma[i];
      bin.mean_abs_error += std::abs(targets[i] - mu[i]);
      ++bin.count;
    }
    if (bin.count) {
      bin.mean_sigma /= static_cast<double>(bin.count);
      bin.mean_abs_error /= static_cast<double>(bin.count);
    }
  }
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(targets[i] - mu[i]) <= 2.0 * sigma[i]) ++inside;
  table.coverage_2sigma = static_cast<double>(inside) / static_cast<double>(n);
  return table;
}

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need n >= 2 equal-length series");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cab = 0.0, caa = 0.0, cbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cab += (a[i] - ma) * (b[i] - mb);
    caa += (a[i] - ma) * (a[i] - ma);
    cbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(caa > 0.0) || !(cbb > 0.0)) throw std::invalid_argument("pearson: zero variance in a series");
  return cab / std::sqrt(caa * cbb);
}

namespace detail {

inline std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = midrank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

inline double spearman_correlation(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> ra = detail::midranks(a);
  const std::vector<double> rb = detail::midranks(b);
  return pearson_correlation(ra, rb);
}

/// Pearson correlation of per-point squared error with predicted variance.
inline double error_variance_correlation(std::span<const double> squared_errors, std::span<const double> variances) {
  return pearson_correlation(squared_errors, variances);
}

struct Stratum {
  std::string name;
  double lo = 0.0, hi = 0.0;  // age range (unused for sex strata)
  std::size_t count = 0;
  double mae = std::numeric_limits<double>::quiet_NaN();
  double target_sd = std::numeric_limits<double>::quiet_NaN();
  bool empty_flag = false;
};

struct StratifiedReport {
  std::vector<Stratum> age_deciles;
  std::vector<Stratum> by_sex;
};

/// MAE plus target spread per age decile (deciles computed on the evaluation
/// split itself) and per sex. Empty strata are flagged, not dropped.
inline StratifiedReport stratified_mae(std::span<const double> preds, std::span<const double> targets,
                                       std::span<const double> ages, std::span<const int> sexes) {
  if (preds.empty() || preds.size() != targets.size() || preds.size() != ages.size() || preds.size() != sexes.size())
    throw std::invalid_argument("stratified_mae: bad inputs");
  const std::size_t n = preds.size();

  auto fill = [&](Stratum& s, const std::vector<std::size_t>& idx) {
    s.count = idx.size();
    if (idx.empty()) {
      s.empty_flag = true;
      return;
    }
    double mae = 0.0, mean = 0.0;
    for (std::size_t i : idx) {
      mae += std::abs(preds[i] - targets[i]);
      mean += targets[i];
    }
    mae /= static_cast<double>(idx.size());
    mean /= static_cast<double>(idx.size());
    double var = 0.0;
    for (std::size_t i : idx) var += (targets[i] - mean) * (targets[i] - mean);
    var /= static_cast<double>(idx.size());
    s.mae = mae;
    s.target_sd = std::sqrt(var);
  };

  StratifiedReport rep;
  std::vector<double> sorted_ages(ages.begin(), ages.end());
  std::sort(sorted_ages.begin(), sorted_ages.end());
  for (int d = 0; d < 10; ++d) {
    Stratum s;
    const std::size_t lo_i = static_cast<std::size_t>(d) * n / 10;
    const std::size_t hi_i = static_cast<std::size_t>(d + 1) * n / 10;
    s.lo = sorted_ages[lo_i];
    s.hi = d == 9 ? sorted_ages[n - 1] : sorted_ages[hi_i];
    s.name = "age_decile_" + std::to_string(d + 1);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      const bool in = d == 9 ? (ages[i] >= s.lo && ages[i] <= s.hi) : (ages[i] >= s.lo && ages[i] < s.hi);
      if (in) idx.push_back(i);
    }
    fill(s, idx);
    rep.age_deciles.push_back(std::move(s));
  }
  for (int sex = 0; sex < 2; ++sex) {
    Stratum s;
    s.name = sex ? "male" : "female";
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (sexes[i] == sex) idx.push_back(i);
    fill(s, idx);
    rep.by_sex.push_back(std::move(s));
  }
  return rep;
}

}  // namespace elx
