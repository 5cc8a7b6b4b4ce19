#pragma once

#include <cmath>
#include <stdexcept>

#include "elx/rng.hpp"
#include "elx/signal.hpp"

namespace elx {

/// Additive zero-mean Gaussian noise with power = mean signal power / snr,
/// shared noise level across all leads. A zero-power input cannot define an
/// SNR; it is returned unchanged with `flagged` set.
struct SnrResult {
  ProcessedEcg ecg;
  bool flagged = false;  // zero-power input, no noise added
};

inline SnrResult add_noise_snr(const ProcessedEcg& ecg, double snr, Rng& rng) {
  if (!(snr > 0.0)) throw std::invalid_argument("add_noise_snr: snr must be positive");
  SnrResult out;
  out.ecg = ecg;
  double power = 0.0;
  for (double v : ecg.samples) power += v * v;
  power /= static_cast<double>(ecg.samples.size());
  if (!(power > 0.0)) {
    out.flagged = true;
    return out;
  }
  const double noise_sd = std::sqrt(power / snr);
  for (double& v : out.ecg.samples) v += rng.gaussian(0.0, noise_sd);
  return out;
}

/// Zeroes one contiguous segment of length round(p * 4096) at a uniformly
/// random start, the same segment across all 8 leads (electrode-dropout
/// style masking).
inline ProcessedEcg mask(const ProcessedEcg& ecg, double proportion, Rng& rng) {
  if (proportion < 0.0 || proportion > 1.0) throw std::invalid_argument("mask: proportion must be in [0, 1]");
  ProcessedEcg out = ecg;
  const std::size_t len = static_cast<std::size_t>(std::llround(proportion * ProcessedEcg::kSamples));
  if (len == 0) return out;
  const std::size_t max_start = ProcessedEcg::kSamples - len;
  const std::size_t start =
      max_start == 0 ? 0 : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_start)));
  for (int l = 0; l < ProcessedEcg::kLeads; ++l) {
    auto lead = out.lead(l);
    for (std::size_t i = start; i < start + len; ++i) lead[i] = 0.0;
  }
  return out;
}

}  // namespace elx
