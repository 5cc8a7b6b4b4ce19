#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace elx {

enum class Electrolyte { potassium, calcium, sodium, creatinine };

inline std::string to_string(Electrolyte e) {
  switch (e) {
    case Electrolyte::potassium: return "potassium";
    case Electrolyte::calcium: return "calcium";
    case Electrolyte::sodium: return "sodium";
    case Electrolyte::creatinine: return "creatinine";
  }
  return "?";
}

inline Electrolyte electrolyte_from_string(const std::string& s) {
  if (s == "potassium") return Electrolyte::potassium;
  if (s == "calcium") return Electrolyte::calcium;
  if (s == "sodium") return Electrolyte::sodium;
  if (s == "creatinine") return Electrolyte::creatinine;
  throw std::invalid_argument("unknown electrolyte: " + s);
}

/// Clinical hypo/hyper concentration bounds used for binary (k = 2) tasks.
/// Creatinine has no established pair and falls back to mu +- 2 sigma.
inline std::optional<std::pair<double, double>> clinical_bounds(Electrolyte e) {
  switch (e) {
    case Electrolyte::potassium: return {{3.5, 5.5}};
    case Electrolyte::calcium: return {{2.0, 2.75}};
    case Electrolyte::sodium: return {{130.0, 150.0}};
    case Electrolyte::creatinine: return std::nullopt;
  }
  return std::nullopt;
}

/// Target z-transformation fitted on training labels.
struct ZNormalizer {
  double mean = 0.0;
  double sd = 1.0;

  static ZNormalizer fit(std::span<const double> y) {
    if (y.empty()) throw std::invalid_argument("ZNormalizer: empty targets");
    const double mu = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mu) * (v - mu);
    var /= static_cast<double>(y.size());
    if (!(var > 0.0)) throw std::invalid_argument("ZNormalizer: zero target variance");
    return {mu, std::sqrt(var)};
  }

  double apply(double y) const { return (y - mean) / sd; }
  double invert(double z) const { return z * sd + mean; }
};

/// Discretization of the concentration range into ordered intervals.
///
/// For k >= 3 the k-1 bounds run evenly from mu - 2 sigma to mu + 2 sigma.
/// k = 2 uses the clinical hypo/hyper pair, giving two binary threshold
/// tasks over three intervals; requested_k records the caller's k while
/// n_intervals() is the actual partition size.
struct Discretizer {
  int requested_k = 0;
  std::vector<double> bounds;       // strictly ascending
  std::vector<double> class_means;  // per interval, for decoding
  double sigma = 1.0;               // training-target sd, for empty-class fallback

  int n_intervals() const { return static_cast<int>(bounds.size()) + 1; }
  int n_thresholds() const { return static_cast<int>(bounds.size()); }

  /// 1-based interval index; intervals are left-closed, boundary values go up.
  int discretize(double y) const {
    if (!std::isfinite(y)) throw std::invalid_argument("discretize: non-finite target");
    int c = 1;
    for (double b : bounds)
      if (y >= b) ++c;
    return c;
  }

  /// Midpoint for interior intervals, training mean for the open extremes,
  /// nearest bound offset by sigma/2 when an extreme interval is empty.
  double class_to_concentration(int cls) const {
    const int n = n_intervals();
    if (cls < 1 || cls > n) throw std::invalid_argument("class_to_concentration: bad class index");
    if (cls > 1 && cls < n) return 0.5 * (bounds[cls - 2] + bounds[cls - 1]);
    if (std::isfinite(class_means[cls - 1])) return class_means[cls - 1];
    return cls == 1 ? bounds.front() - 0.5 * sigma : bounds.back() + 0.5 * sigma;
  }
};

/// Interval bounds for a k-class discretization of targets with moments
/// (mu, sigma). k = 2 resolves to the electrolyte's clinical pair.
inline std::vector<double> make_bounds(int k, double mu, double sigma, Electrolyte e) {
  if (k < 2) throw std::invalid_argument("make_bounds: k must be >= 2");
  if (k == 2) {
    if (const auto cb = clinical_bounds(e)) return {cb->first, cb->second};
    return {mu - 2.0 * sigma, mu + 2.0 * sigma};
  }
  std::vector<double> b(static_cast<std::size_t>(k) - 1);
  const double lo = mu - 2.0 * sigma, hi = mu + 2.0 * sigma;
  for (int i = 0; i < k - 1; ++i)
    b[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / (k - 2);
  return b;
}

/// Fits a discretizer: bounds from the training moments plus per-interval
/// training means for decoding.
inline Discretizer fit_discretizer(int k, std::span<const double> train_y, Electrolyte e) {
  if (train_y.empty()) throw std::invalid_argument("fit_discretizer: empty targets");
  const ZNormalizer z = ZNormalizer::fit(train_y);
  Discretizer d;
  d.requested_k = k;
  d.bounds = make_bounds(k, z.mean, z.sd, e);
  d.sigma = z.sd;
  const int n = d.n_intervals();
  std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(n), 0);
  for (double y : train_y) {
    const int c = d.discretize(y);
    sums[static_cast<std::size_t>(c - 1)] += y;
    ++counts[static_cast<std::size_t>(c - 1)];
  }
  d.class_means.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c)
    d.class_means[static_cast<std::size_t>(c)] =
        counts[static_cast<std::size_t>(c)] ? sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)]
                                            : std::numeric_limits<double>::quiet_NaN();
  return d;
}

/// Rank targets t_j = 1[class > j], j = 1..n_thresholds. Non-increasing by
/// construction.
inline std::vector<double> ordinal_encode(int cls, int n_intervals) {
  if (cls < 1 || cls > n_intervals) throw std::invalid_argument("ordinal_encode: bad class");
  std::vector<double> t(static_cast<std::size_t>(n_intervals) - 1, 0.0);
  for (int j = 1; j < cls; ++j) t[static_cast<std::size_t>(j) - 1] = 1.0;
  return t;
}

/// Decodes rank probabilities into a class: 1 + sum_j 1[p_j > 0.5].
inline int ordinal_decode(std::span<const double> probabilities) {
  int cls = 1;
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ordinal_decode: probability out of [0,1]");
    if (p > 0.5) ++cls;
  }
  return cls;
}

/// Target codec for one experiment: the z-normalizer (optionally in log
/// space, used for creatinine) plus the discretizer for class-based heads.
struct TargetCodec {
  ZNormalizer znorm;
  bool log_space = false;
  std::optional<Discretizer> discretizer;  // present for classification/ordinal heads

  double to_model(double y) const { return znorm.apply(log_space ? std::log(y) : y); }
  double from_model(double z) const {
    const double y = znorm.invert(z);
    return log_space ? std::exp(y) : y;
  }
  /// Raw target in the evaluation space (log space for creatinine).
  double eval_space(double y) const { return log_space ? std::log(y) : y; }
};

}  // namespace elx
