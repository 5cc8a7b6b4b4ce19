#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elx/rng.hpp"
#include "elx/targets.hpp"

using namespace elx;

TEST_CASE("make_bounds: extremes at mu +- 2 sigma, evenly spaced between") {
  const auto b3 = make_bounds(3, 0.0, 1.0, Electrolyte::potassium);
  REQUIRE(b3.size() == 2);
  CHECK(b3[0] == doctest::Approx(-2.0));
  CHECK(b3[1] == doctest::Approx(2.0));

  const auto b5 = make_bounds(5, 0.0, 1.0, Electrolyte::potassium);
  REQUIRE(b5.size() == 4);
  CHECK(b5[0] == doctest::Approx(-2.0));
  CHECK(b5[1] == doctest::Approx(-2.0 / 3.0));
  CHECK(b5[2] == doctest::Approx(2.0 / 3.0));
  CHECK(b5[3] == doctest::Approx(2.0));

  CHECK_THROWS_AS(make_bounds(1, 0.0, 1.0, Electrolyte::potassium), std::invalid_argument);
}

TEST_CASE("k = 2 resolves to the clinical hypo/hyper pair") {
  const auto potassium = make_bounds(2, 3.99, 0.5, Electrolyte::potassium);
  CHECK(potassium == std::vector<double>{3.5, 5.5});
  const auto calcium = make_bounds(2, 2.29, 0.13, Electrolyte::calcium);
  CHECK(calcium == std::vector<double>{2.0, 2.75});
  const auto sodium = make_bounds(2, 138.93, 3.82, Electrolyte::sodium);
  CHECK(sodium == std::vector<double>{130.0, 150.0});
  // creatinine has no published pair and falls back to mu +- 2 sigma
  const auto creat = make_bounds(2, 4.3, 0.7, Electrolyte::creatinine);
  CHECK(creat[0] == doctest::Approx(4.3 - 1.4));
  CHECK(creat[1] == doctest::Approx(4.3 + 1.4));
}

TEST_CASE("discretize: left-closed intervals, boundary goes up") {
  Discretizer d;
  d.requested_k = 3;
  d.bounds = {-2.0, 2.0};
  d.class_means = {-2.5, 0.0, 2.5};
  CHECK(d.discretize(-3.0) == 1);
  CHECK(d.discretize(-2.0) == 2);  // boundary tie rule
  CHECK(d.discretize(0.0) == 2);
  CHECK(d.discretize(2.0) == 3);
  CHECK_THROWS_AS(d.discretize(std::nan("")), std::invalid_argument);

  Discretizer d5;
  d5.requested_k = 5;
  d5.bounds = {-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0};
  d5.class_means.assign(5, 0.0);
  CHECK(d5.discretize(0.0) == 3);
}

TEST_CASE("class_to_concentration: midpoints, training means, fallback") {
  Discretizer d;
  d.requested_k = 5;
  d.bounds = {-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0};
  d.sigma = 1.0;
  d.class_means = {-2.75, std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  CHECK(d.class_to_concentration(3) == doctest::Approx(0.0));
  CHECK(d.class_to_concentration(1) == doctest::Approx(-2.75));      // empirical mean
  CHECK(d.class_to_concentration(5) == doctest::Approx(2.0 + 0.5));  // empty extreme: bound + sigma/2
  CHECK_THROWS_AS(d.class_to_concentration(0), std::invalid_argument);
  CHECK_THROWS_AS(d.class_to_concentration(6), std::invalid_argument);
}

TEST_CASE("fit_discretizer records empirical means of extreme classes") {
  // one far outlier guarantees a populated upper extreme and an empty lower one
  const std::vector<double> y = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0};
  const Discretizer d = fit_discretizer(3, y, Electrolyte::potassium);
  CHECK(d.discretize(10.0) == 3);
  CHECK(d.class_means[2] == doctest::Approx(10.0));  // empirical mean of the extreme class
  CHECK(!std::isfinite(d.class_means[0]));           // nothing below mu - 2 sigma
  CHECK(d.class_to_concentration(1) == doctest::Approx(d.bounds.front() - 0.5 * d.sigma));
}

TEST_CASE("ordinal encode/decode") {
  CHECK(ordinal_encode(1, 4) == std::vector<double>{0, 0, 0});
  CHECK(ordinal_encode(3, 4) == std::vector<double>{1, 1, 0});
  CHECK(ordinal_encode(4, 4) == std::vector<double>{1, 1, 1});

  CHECK(ordinal_decode(std::vector<double>{0.1, 0.1, 0.1}) == 1);
  CHECK(ordinal_decode(std::vector<double>{0.9, 0.8, 0.2, 0.1}) == 3);
  CHECK(ordinal_decode(std::vector<double>{0.9, 0.9, 0.9}) == 4);
  CHECK_THROWS_AS(ordinal_decode(std::vector<double>{1.3}), std::invalid_argument);

  // decode(encode(c)) = c on hard labels, exhaustively for k <= 6
  for (int k = 2; k <= 6; ++k)
    for (int c = 1; c <= k; ++c) CHECK(ordinal_decode(ordinal_encode(c, k)) == c);
}

TEST_CASE("ordinal targets are non-increasing binary vectors") {
  for (int k = 2; k <= 7; ++k)
    for (int c = 1; c <= k; ++c) {
      const auto t = ordinal_encode(c, k);
      for (std::size_t j = 1; j < t.size(); ++j) CHECK(t[j] <= t[j - 1]);
    }
}

TEST_CASE("z-normalization") {
  const std::vector<double> y = {1.0, 2.0, 3.0, 4.0};
  const ZNormalizer z = ZNormalizer::fit(y);
  CHECK(z.apply(z.mean) == doctest::Approx(0.0));
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.gaussian(2.0, 3.0);
    CHECK(z.invert(z.apply(v)) == doctest::Approx(v).epsilon(1e-12));
  }
  // direct moments: potassium table values
  ZNormalizer zp{3.99, 0.50};
  CHECK(zp.apply(4.99) == doctest::Approx(2.0));
  CHECK_THROWS_AS(ZNormalizer::fit(std::vector<double>{5.0, 5.0, 5.0}), std::invalid_argument);
}

TEST_CASE("decoded concentrations re-discretize to the same class") {
  Rng rng(23);
  std::vector<double> y(500);
  for (double& v : y) v = rng.gaussian(4.0, 0.6);
  for (int k : {2, 3, 5, 7}) {
    const Discretizer d = fit_discretizer(k, y, Electrolyte::potassium);
    for (int c = 1; c <= d.n_intervals(); ++c) {
      const double conc = d.class_to_concentration(c);
      CHECK(d.discretize(conc) == c);
    }
  }
}

TEST_CASE("normalized MSE identity: z-scale MSE equals raw MSE / sigma^2") {
  Rng rng(29);
  std::vector<double> y(200), pred(200);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = rng.gaussian(4.0, 0.5);
    pred[i] = y[i] + rng.gaussian(0.0, 0.2);
  }
  const ZNormalizer z = ZNormalizer::fit(y);
  double raw = 0.0, zs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    raw += (pred[i] - y[i]) * (pred[i] - y[i]);
    const double dz = z.apply(pred[i]) - z.apply(y[i]);
    zs += dz * dz;
  }
  raw /= static_cast<double>(y.size());
  zs /= static_cast<double>(y.size());
  CHECK(std::abs(zs - raw / (z.sd * z.sd)) < 1e-10);
}
