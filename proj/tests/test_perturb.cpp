#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "elx/perturb.hpp"
#include "elx/rng.hpp"

using namespace elx;

namespace {

ProcessedEcg unit_power_record() {
  ProcessedEcg e;
  std::fill(e.samples.begin(), e.samples.end(), 1.0);  // power exactly 1
  return e;
}

double power(const ProcessedEcg& e) {
  double p = 0.0;
  for (double v : e.samples) p += v * v;
  return p / static_cast<double>(e.samples.size());
}

}  // namespace

TEST_CASE("snr noise injection") {
  SUBCASE("snr of 1e12 leaves the record essentially untouched") {
    const ProcessedEcg e = unit_power_record();
    Rng rng(1);
    const SnrResult r = add_noise_snr(e, 1e12, rng);
    CHECK(!r.flagged);
    double worst = 0.0;
    for (std::size_t i = 0; i < e.samples.size(); ++i)
      worst = std::max(worst, std::abs(r.ecg.samples[i] - e.samples[i]));
    CHECK(worst < 1e-5);
  }
  SUBCASE("snr 1 on a unit-power signal adds unit-power noise") {
    const ProcessedEcg e = unit_power_record();
    Rng rng(2);
    const SnrResult r = add_noise_snr(e, 1.0, rng);
    double noise_power = 0.0;
    for (std::size_t i = 0; i < e.samples.size(); ++i) {
      const double d = r.ecg.samples[i] - e.samples[i];
      noise_power += d * d;
    }
    noise_power /= static_cast<double>(e.samples.size());
    CHECK(noise_power == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("identical rng state gives identical noise") {
    const ProcessedEcg e = unit_power_record();
    Rng a(7), b(7);
    CHECK(add_noise_snr(e, 5.0, a).ecg.samples == add_noise_snr(e, 5.0, b).ecg.samples);
  }
  SUBCASE("zero-power input is flagged and returned unchanged") {
    ProcessedEcg zero;
    Rng rng(3);
    const SnrResult r = add_noise_snr(zero, 2.0, rng);
    CHECK(r.flagged);
    CHECK(r.ecg.samples == zero.samples);
  }
  SUBCASE("non-positive snr is rejected") {
    Rng rng(4);
    CHECK_THROWS_AS(add_noise_snr(unit_power_record(), 0.0, rng), std::invalid_argument);
  }
}

TEST_CASE("masking") {
  SUBCASE("p = 0 is the identity") {
    const ProcessedEcg e = unit_power_record();
    Rng rng(5);
    CHECK(mask(e, 0.0, rng).samples == e.samples);
  }
  SUBCASE("p = 1 zeroes everything") {
    const ProcessedEcg e = unit_power_record();
    Rng rng(6);
    const ProcessedEcg m = mask(e, 1.0, rng);
    for (double v : m.samples) CHECK(v == 0.0);
  }
  SUBCASE("p = 0.5 zeroes exactly 2048 contiguous samples, shared across leads") {
    const ProcessedEcg e = unit_power_record();
    Rng rng(7);
    const ProcessedEcg m = mask(e, 0.5, rng);
    std::size_t start0 = 0, len0 = 0;
    for (int l = 0; l < 8; ++l) {
      auto lead = m.lead(l);
      std::size_t zeros = 0, first = ProcessedEcg::kSamples, last = 0;
      for (std::size_t i = 0; i < lead.size(); ++i)
        if (lead[i] == 0.0) {
          ++zeros;
          first = std::min(first, i);
          last = std::max(last, i);
        }
      CHECK(zeros == 2048);
      CHECK(last - first + 1 == zeros);  // contiguous
      if (l == 0) {
        start0 = first;
        len0 = zeros;
      } else {
        CHECK(first == start0);
        CHECK(zeros == len0);
      }
    }
  }
  SUBCASE("proportion out of range is rejected") {
    Rng rng(8);
    CHECK_THROWS_AS(mask(unit_power_record(), -0.1, rng), std::invalid_argument);
    CHECK_THROWS_AS(mask(unit_power_record(), 1.1, rng), std::invalid_argument);
  }
  SUBCASE("expected energy is non-increasing in the proportion") {
    ProcessedEcg e;
    Rng fill(11);
    for (double& v : e.samples) v = fill.gaussian();
    double prev = std::numeric_limits<double>::infinity();
    Rng rng(12);
    for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      double mean_energy = 0.0;
      for (int rep = 0; rep < 25; ++rep) mean_energy += power(mask(e, p, rng));
      mean_energy /= 25.0;
      CHECK(mean_energy <= prev + 1e-12);
      prev = mean_energy;
    }
  }
}
