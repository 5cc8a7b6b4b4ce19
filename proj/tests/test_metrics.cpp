#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elx/metrics.hpp"
#include "elx/rng.hpp"
#include "support/oracles.hpp"

using namespace elx;

TEST_CASE("regression metrics") {
  const std::vector<double> t = {1.0, 2.0, 3.0};
  SUBCASE("perfect predictions give zeros") {
    const RegressionMetrics m = regression_metrics(t, t, 1.0);
    CHECK(m.mse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.normalized_mse == 0.0);
  }
  SUBCASE("unit residuals") {
    const std::vector<double> p = {2.0, 1.0, 4.0};  // residuals +1, -1, +1
    const RegressionMetrics m = regression_metrics(p, t, 2.0);
    CHECK(m.mse == doctest::Approx(1.0));
    CHECK(m.mae == doctest::Approx(1.0));
    CHECK(m.normalized_mse == doctest::Approx(0.25));
  }
  SUBCASE("predict-the-mean gives normalized MSE of exactly one") {
    Rng rng(3);
    std::vector<double> targets(5000);
    for (double& v : targets) v = rng.gaussian(4.0, 0.7);
    const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / targets.size();
    double var = 0.0;
    for (double v : targets) var += (v - mean) * (v - mean);
    var /= targets.size();
    const std::vector<double> preds(targets.size(), mean);
    const RegressionMetrics m = regression_metrics(preds, targets, std::sqrt(var));
    CHECK(m.normalized_mse == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(regression_metrics(std::vector<double>{}, std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST_CASE("auroc basics") {
  SUBCASE("perfect separation") {
    const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
    const std::vector<int> l = {0, 0, 1, 1};
    CHECK(auroc(s, l) == 1.0);
  }
  SUBCASE("all scores equal gives one half") {
    const std::vector<double> s = {0.5, 0.5, 0.5, 0.5};
    const std::vector<int> l = {0, 1, 0, 1};
    CHECK(auroc(s, l) == 0.5);
  }
  SUBCASE("single-class labels are an error") {
    const std::vector<double> s = {0.1, 0.9};
    CHECK_THROWS_AS(auroc(s, std::vector<int>{1, 1}), std::invalid_argument);
  }
}

TEST_CASE("fast auroc equals the quadratic oracle exactly, ties included") {
  Rng rng(7);
  for (int instance = 0; instance < 200; ++instance) {
    const std::size_t n = 5 + static_cast<std::size_t>(rng.uniform_int(0, 45));
    std::vector<double> s(n);
    std::vector<int> l(n);
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(0, 9));  // heavy ties
      l[i] = rng.uniform() < 0.4 ? 1 : 0;
      (l[i] ? pos : neg) = true;
    }
    if (!pos || !neg) {
      l[0] = 1;
      l[n - 1] = 0;
    }
    CHECK(auroc(s, l) == elx::testing::auroc_bruteforce(s, l));
  }
}

TEST_CASE("auroc antisymmetry for tie-free scores") {
  Rng rng(11);
  std::vector<double> s(60);
  std::vector<int> l(60);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.gaussian();
    l[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  l[0] = 1;
  l[1] = 0;
  std::vector<double> neg(s);
  for (double& v : neg) v = -v;
  CHECK(auroc(s, l) + auroc(neg, l) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cumulative macro auroc") {
  SUBCASE("k = 2 reduces to a single standard auroc") {
    Rng rng(13);
    const std::size_t n = 50;
    std::vector<std::vector<double>> scores(n, std::vector<double>(1));
    std::vector<int> cls(n);
    std::vector<double> flat(n);
    std::vector<int> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i][0] = rng.uniform();
      cls[i] = rng.uniform() < 0.5 ? 1 : 2;
      flat[i] = scores[i][0];
      lab[i] = cls[i] == 1 ? 1 : 0;
    }
    const CumulativeAuroc out = cumulative_macro_auroc(scores, cls, 2);
    CHECK(out.per_threshold[0] == doctest::Approx(auroc(flat, lab)));
    CHECK(out.macro == doctest::Approx(auroc(flat, lab)));
  }
  SUBCASE("oracle one-hot scores give every threshold auroc of one") {
    const int k = 4;
    Rng rng(17);
    std::vector<std::vector<double>> scores;
    std::vector<int> cls;
    for (int i = 0; i < 40; ++i) {
      const int c = 1 + static_cast<int>(rng.uniform_int(0, k - 1));
      cls.push_back(c);
      std::vector<double> cum(k - 1);
      for (int t = 0; t < k - 1; ++t) cum[static_cast<std::size_t>(t)] = c <= t + 1 ? 1.0 : 0.0;
      scores.push_back(cum);
    }
    const CumulativeAuroc out = cumulative_macro_auroc(scores, cls, k);
    for (double a : out.per_threshold) CHECK(a == 1.0);
    CHECK(out.macro == 1.0);
  }
  SUBCASE("random instance equals per-threshold brute force") {
    Rng rng(19);
    const int k = 4;
    const std::size_t n = 30;
    std::vector<std::vector<double>> scores(n, std::vector<double>(k - 1));
    std::vector<int> cls(n);
    for (std::size_t i = 0; i < n; ++i) {
      cls[i] = 1 + static_cast<int>(rng.uniform_int(0, k - 1));
      double acc = 0.0;
      for (int t = 0; t < k - 1; ++t) {
        acc += rng.uniform() / k;
        scores[i][static_cast<std::size_t>(t)] = acc;
      }
    }
    // force all classes present
    for (int c = 1; c <= k; ++c) cls[static_cast<std::size_t>(c - 1)] = c;
    const CumulativeAuroc out = cumulative_macro_auroc(scores, cls, k);
    for (int t = 0; t < k - 1; ++t) {
      std::vector<double> col(n);
      std::vector<int> lab(n);
      for (std::size_t i = 0; i < n; ++i) {
        col[i] = scores[i][static_cast<std::size_t>(t)];
        lab[i] = cls[i] <= t + 1 ? 1 : 0;
      }
      CHECK(out.per_threshold[static_cast<std::size_t>(t)] == elx::testing::auroc_bruteforce(col, lab));
    }
  }
  SUBCASE("single-class thresholds are skipped and flagged") {
    std::vector<std::vector<double>> scores = {{0.9, 0.5}, {0.8, 0.4}, {0.2, 0.3}};
    std::vector<int> cls = {2, 2, 3};  // nobody in class 1 -> threshold 1 single-class
    const CumulativeAuroc out = cumulative_macro_auroc(scores, cls, 3);
    CHECK(out.skipped[0]);
    CHECK(!out.skipped[1]);
    CHECK(std::isnan(out.per_threshold[0]));
    CHECK(out.macro == doctest::Approx(out.per_threshold[1]));
  }
  SUBCASE("macro average is invariant under strictly monotone score transforms") {
    Rng rng(23);
    const int k = 5;
    const std::size_t n = 60;
    std::vector<std::vector<double>> scores(n, std::vector<double>(k - 1));
    std::vector<int> cls(n);
    for (std::size_t i = 0; i < n; ++i) {
      cls[i] = 1 + static_cast<int>(rng.uniform_int(0, k - 1));
      for (auto& v : scores[i]) v = rng.uniform();
    }
    for (int c = 1; c <= k; ++c) cls[static_cast<std::size_t>(c - 1)] = c;
    std::vector<std::vector<double>> warped = scores;
    for (auto& row : warped)
      for (double& v : row) v = std::exp(3.0 * v) - 0.5;  // strictly increasing
    const CumulativeAuroc a = cumulative_macro_auroc(scores, cls, k);
    const CumulativeAuroc b = cumulative_macro_auroc(warped, cls, k);
    CHECK(a.macro == doctest::Approx(b.macro).epsilon(1e-12));
  }
}

TEST_CASE("sparsification") {
  SUBCASE("oracle uncertainty: arithmetic example") {
    const std::vector<double> err = {1, 2, 3, 4};
    const auto mae = sparsification(err, err);
    CHECK(mae[0] == doctest::Approx(1.0));   // 25% -> best single point
    CHECK(mae[1] == doctest::Approx(1.5));   // 50%
    CHECK(mae[2] == doctest::Approx(2.0));   // 75%
    CHECK(mae[3] == doctest::Approx(2.5));   // 100%
    for (std::size_t i = 1; i < mae.size(); ++i) CHECK(mae[i] > mae[i - 1]);
  }
  SUBCASE("constant uncertainty keeps each tested fraction at the full MAE") {
    // cyclic errors make every quarter prefix average identical
    std::vector<double> err;
    for (int rep = 0; rep < 4; ++rep)
      for (double v : {1.0, 2.0, 3.0, 4.0}) err.push_back(v);
    const std::vector<double> unc(err.size(), 0.7);
    const auto mae = sparsification(err, unc);
    for (double v : mae) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("oracle ordering is the lower envelope over all orderings (exhaustive n = 7)") {
    Rng rng(29);
    std::vector<double> err(7);
    for (double& v : err) v = rng.uniform(0.0, 2.0);
    const auto oracle = sparsification(err, err);
    std::vector<std::size_t> perm(err.size());
    std::iota(perm.begin(), perm.end(), 0);
    do {
      std::vector<double> unc(err.size());
      for (std::size_t i = 0; i < perm.size(); ++i) unc[perm[i]] = static_cast<double>(i);
      const auto candidate = sparsification(err, unc);
      for (std::size_t f = 0; f < candidate.size(); ++f) CHECK(oracle[f] <= candidate[f] + 1e-12);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  CHECK_THROWS_AS(sparsification(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(sparsification(std::vector<double>{1.0}, std::vector<double>{1.0}, std::vector<double>{0.0}),
                  std::invalid_argument);
}

TEST_CASE("calibration bins") {
  SUBCASE("well-specified gaussian predictions: two-sigma coverage") {
    Rng rng(31);
    const std::size_t n = 10000;
    std::vector<double> mu(n), sigma(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      mu[i] = rng.gaussian(0.0, 2.0);
      sigma[i] = 0.2 + rng.uniform();
      y[i] = mu[i] + rng.gaussian(0.0, sigma[i]);
    }
    const CalibrationTable t = calibration_bins(mu, sigma, y, 10);
    CHECK(t.coverage_2sigma == doctest::Approx(0.9545).epsilon(0.01 / 0.9545));
    // half-normal identity: E|err| = sigma sqrt(2/pi) per bin
    for (const auto& bin : t.bins)
      CHECK(bin.mean_abs_error ==
            doctest::Approx(bin.mean_sigma * std::sqrt(2.0 / std::numbers::pi)).epsilon(0.08));
  }
  SUBCASE("constant sigma with one bin reproduces the dataset MAE") {
    const std::vector<double> mu = {0.0, 0.0, 0.0, 0.0};
    const std::vector<double> sigma(4, 1.0);
    const std::vector<double> y = {1.0, -1.0, 2.0, -2.0};
    const CalibrationTable t = calibration_bins(mu, sigma, y, 1);
    CHECK(t.bins[0].mean_abs_error == doctest::Approx(1.5));
  }
  SUBCASE("more bins than points is an error") {
    const std::vector<double> v = {1.0, 2.0};
    const std::vector<double> s = {0.5, 0.5};
    CHECK_THROWS_AS(calibration_bins(v, s, v, 3), std::invalid_argument);
  }
}

TEST_CASE("error-variance correlation") {
  SUBCASE("variance equal to squared error is perfectly correlated") {
    const std::vector<double> sq = {0.1, 0.5, 1.2, 2.0};
    CHECK(error_variance_correlation(sq, sq) == doctest::Approx(1.0));
  }
  SUBCASE("independent series decorrelate") {
    Rng rng(37);
    const std::size_t n = 10000;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    CHECK(std::abs(error_variance_correlation(a, b)) < 0.05);
  }
  SUBCASE("anti-monotone three-point example") {
    const std::vector<double> sq = {1.0, 2.0, 3.0};
    const std::vector<double> var = {3.0, 2.0, 1.0};
    CHECK(error_variance_correlation(sq, var) == doctest::Approx(-1.0));
  }
  SUBCASE("zero spread is an error") {
    const std::vector<double> flat = {1.0, 1.0, 1.0};
    const std::vector<double> v = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(error_variance_correlation(flat, v), std::invalid_argument);
  }
  SUBCASE("spearman sees through monotone warps") {
    Rng rng(41);
    std::vector<double> a(500), warped(500);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform();
      warped[i] = std::exp(5.0 * a[i]);
    }
    CHECK(spearman_correlation(a, warped) == doctest::Approx(1.0));
  }
}

TEST_CASE("stratified MAE") {
  SUBCASE("degenerate strata reproduce the global MAE and flag the empties") {
    const std::vector<double> preds = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> targets = {1.5, 2.5, 2.0, 5.0};
    const std::vector<double> ages(4, 50.0);
    const std::vector<int> sexes(4, 0);
    const StratifiedReport rep = stratified_mae(preds, targets, ages, sexes);
    double global = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) global += std::abs(preds[i] - targets[i]);
    global /= 4.0;
    CHECK(rep.age_deciles.back().mae == doctest::Approx(global));
    CHECK(rep.by_sex[0].mae == doctest::Approx(global));
    CHECK(rep.by_sex[1].empty_flag);
    // identical ages collapse every other decile to an empty, flagged stratum
    for (int d = 0; d < 9; ++d) CHECK(rep.age_deciles[static_cast<std::size_t>(d)].empty_flag);
  }
  SUBCASE("deciles partition the records") {
    Rng rng(43);
    const std::size_t n = 500;
    std::vector<double> preds(n), targets(n), ages(n);
    std::vector<int> sexes(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.gaussian();
      targets[i] = rng.gaussian();
      ages[i] = rng.uniform(18.0, 100.0);
      sexes[i] = rng.uniform() < 0.5;
    }
    const StratifiedReport rep = stratified_mae(preds, targets, ages, sexes);
    std::size_t total = 0;
    for (const auto& s : rep.age_deciles) total += s.count;
    CHECK(total == n);
    CHECK(rep.by_sex[0].count + rep.by_sex[1].count == n);
  }
}
