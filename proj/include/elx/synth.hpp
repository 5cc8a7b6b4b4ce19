#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "elx/rng.hpp"
#include "elx/signal.hpp"
#include "elx/targets.hpp"

namespace elx {

/// Synthetic corpus configuration. Concentration moments follow the source
/// population statistics per electrolyte; the morphology coupling
/// coefficients are free generator parameters, not physiology estimates.
struct GeneratorConfig {
  Electrolyte kind = Electrolyte::potassium;
  double conc_mean = 3.99;
  double conc_sd = 0.50;
  bool log_space = false;  // creatinine generates and evaluates in log space

  // morphology coupling (per unit concentration deviation, in generation space)
  double t_amp_base = 0.35;   // mV
  double t_amp_gain = 0.22;   // mV per unit
  double qt_base = 0.30;      // s, R-to-T-center distance
  double qt_gain = -0.03;     // s per unit
  double morph_jitter = 0.04; // relative per-patient template spread

  // noise model
  double label_noise_sd = 0.18;     // irreducible observation noise (generation space)
  double ecg_noise_lo = 0.005;      // white noise sd draw range, mV
  double ecg_noise_hi = 0.05;
  double label_noise_coupling = 1.3;  // label noise scales with (ecg noise / mid)^coupling
  double baseline_amp = 0.08;     // baseline wander amplitude, mV
  double baseline_freq_lo = 0.25; // Hz
  double baseline_freq_hi = 0.45;
  double powerline_amp = 0.02;    // 50 Hz hum amplitude, mV
  double powerline_hz = 50.0;

  // corpus structure
  int n_patients = 2000;
  int draws_lo = 1, draws_hi = 2;          // lab draws per patient window
  int ecgs_per_draw_lo = 1, ecgs_per_draw_hi = 1;
  bool age_sd_ramp = true;  // concentration spread grows with age (+50% at 100)
  double fs = 500.0;
  double duration_s = 10.0;
  std::uint64_t seed = 21;

  void validate() const {
    if (!(conc_sd > 0.0) || !(label_noise_sd > 0.0)) throw std::invalid_argument("GeneratorConfig: sds must be > 0");
    if (label_noise_sd >= conc_sd)
      throw std::invalid_argument("GeneratorConfig: label noise must be below the concentration sd");
    if (n_patients < 1) throw std::invalid_argument("GeneratorConfig: need at least one patient");
    if (draws_lo < 1 || draws_hi < draws_lo || ecgs_per_draw_lo < 1 || ecgs_per_draw_hi < ecgs_per_draw_lo)
      throw std::invalid_argument("GeneratorConfig: bad draws/records distribution");
    if (!(fs > 0.0) || !(duration_s > 0.0)) throw std::invalid_argument("GeneratorConfig: bad signal geometry");
    if (ecg_noise_lo < 0.0 || ecg_noise_hi < ecg_noise_lo)
      throw std::invalid_argument("GeneratorConfig: bad noise range");
  }

  static GeneratorConfig potassium_default() { return {}; }

  static GeneratorConfig calcium_default() {
    GeneratorConfig c;
    c.kind = Electrolyte::calcium;
    c.conc_mean = 2.29;
    c.conc_sd = 0.13;
    // the narrow calcium range leaves no usable ECG manifestation
    c.t_amp_gain = 0.0;
    c.qt_gain = 0.0;
    c.label_noise_sd = 0.05;
    return c;
  }

  static GeneratorConfig sodium_default() {
    GeneratorConfig c;
    c.kind = Electrolyte::sodium;
    c.conc_mean = 138.93;
    c.conc_sd = 3.82;
    c.t_amp_gain = 0.0;
    c.qt_gain = 0.0;
    c.label_noise_sd = 1.2;
    return c;
  }

  static GeneratorConfig creatinine_default() {
    GeneratorConfig c;
    c.kind = Electrolyte::creatinine;
    c.log_space = true;
    // log-space moments matching mean 90.55, sd 71.00
    const double cv2 = (71.0 / 90.55) * (71.0 / 90.55);
    c.conc_sd = std::sqrt(std::log1p(cv2));
    c.conc_mean = std::log(90.55) - 0.5 * c.conc_sd * c.conc_sd;
    c.t_amp_gain = 0.15;
    c.qt_gain = -0.02;
    c.label_noise_sd = 0.25;
    return c;
  }

  static GeneratorConfig defaults_for(Electrolyte e) {
    switch (e) {
      case Electrolyte::potassium: return potassium_default();
      case Electrolyte::calcium: return calcium_default();
      case Electrolyte::sodium: return sodium_default();
      case Electrolyte::creatinine: return creatinine_default();
    }
    return potassium_default();
  }
};

struct LabeledExample {
  RawEcg ecg;
  double y = 0.0;  // concentration label (mmol/l; umol/l for creatinine)
  Electrolyte kind = Electrolyte::potassium;
};

/// Record indices per split. Patient-disjoint; temporal-test records postdate
/// every development record.
struct DatasetSplits {
  std::vector<std::size_t> train, validation, random_test, temporal_test;
};

struct GeneratedCorpus {
  GeneratorConfig cfg;
  std::vector<LabeledExample> records;
  std::vector<double> latent;  // generator-private per-record morphology truth (generation space)
  DatasetSplits splits;
  // Best achievable MAE on each split: mean |label - latent| in evaluation
  // space; no predictor reading only the ECG can beat it in expectation.
  double bayes_mae_train = 0.0;
  double bayes_mae_validation = 0.0;
  double bayes_mae_random_test = 0.0;
  double bayes_mae_temporal_test = 0.0;
};

/// Per-patient generation state: demographic metadata plus the beat template.
struct PatientTemplate {
  std::int64_t patient_id = 0;
  double age = 60.0;
  int sex = 0;
  double heart_rate_bpm = 70.0;
  std::int64_t base_timestamp = 0;
  double ecg_noise_sd = 0.0;
  double noise_factor = 1.0;  // scales the label noise alongside the ECG noise

  // sum-of-Gaussians beat template (amplitude mV, center s relative to R, width s)
  std::array<double, 5> amp{};     // P, Q, R, S, T(base)
  std::array<double, 5> center{};  // T center handled via qt coupling
  std::array<double, 5> width{};
  std::array<double, 8> lead_gain{};
};

namespace detail {

inline double age_ramp(double age) {
  // concentration spread grows with age: +50% at age 100
  return 1.0 + 0.5 * std::clamp((age - 18.0) / 82.0, 0.0, 1.0);
}

inline constexpr std::int64_t kEraStart = 1262304000;  // 2010-01-01
inline constexpr std::int64_t kEraEnd = 1483228800;    // 2017-01-01

}  // namespace detail

/// Label assigned to all ECGs of one patient window: the median of its lab
/// draws (even counts average the middle pair).
inline double median_label(std::vector<double> draws) {
  if (draws.empty()) throw std::invalid_argument("median_label: no draws");
  std::sort(draws.begin(), draws.end());
  const std::size_t n = draws.size();
  return n % 2 ? draws[n / 2] : 0.5 * (draws[n / 2 - 1] + draws[n / 2]);
}

/// Builds the deterministic per-patient template from the master seed.
inline PatientTemplate make_patient(const GeneratorConfig& cfg, std::int64_t patient_index) {
  Rng rng = Rng(cfg.seed).derive(0x9a11).derive(static_cast<std::uint64_t>(patient_index));
  PatientTemplate t;
  t.patient_id = patient_index;
  t.age = std::clamp(rng.gaussian(61.0, 20.0), 18.0, 100.0);
  t.sex = rng.uniform() < 0.494 ? 1 : 0;
  t.heart_rate_bpm = rng.uniform(50.0, 100.0);
  t.base_timestamp = detail::kEraStart + rng.uniform_int(0, detail::kEraEnd - detail::kEraStart - 1);
  t.ecg_noise_sd = rng.uniform(cfg.ecg_noise_lo, cfg.ecg_noise_hi);
  const double noise_mid = 0.5 * (cfg.ecg_noise_lo + cfg.ecg_noise_hi);
  t.noise_factor =
      noise_mid > 0.0 ? std::pow(t.ecg_noise_sd / noise_mid, cfg.label_noise_coupling) : 1.0;

  const double j = cfg.morph_jitter;
  const std::array<double, 5> base_amp{0.12, -0.10, 1.00, -0.22, cfg.t_amp_base};
  const std::array<double, 5> base_center{-0.16, -0.030, 0.0, 0.032, cfg.qt_base};
  const std::array<double, 5> base_width{0.025, 0.012, 0.012, 0.014, 0.050};
  for (int w = 0; w < 5; ++w) {
    t.amp[static_cast<std::size_t>(w)] = base_amp[static_cast<std::size_t>(w)] * (1.0 + j * rng.gaussian());
    t.center[static_cast<std::size_t>(w)] = base_center[static_cast<std::size_t>(w)] +
                                            (w == 2 ? 0.0 : 0.25 * j * 0.02 * rng.gaussian());
    t.width[static_cast<std::size_t>(w)] =
        base_width[static_cast<std::size_t>(w)] * std::max(0.5, 1.0 + j * rng.gaussian());
  }
  const std::array<double, 8> base_gain{1.0, 0.9, 0.75, 0.6, 1.1, 0.85, 0.7, 0.5};
  for (int l = 0; l < 8; ++l)
    // lead 0 stays exactly 1.0 so the affine T-amplitude coupling is invertible
    t.lead_gain[static_cast<std::size_t>(l)] =
        l == 0 ? 1.0 : base_gain[static_cast<std::size_t>(l)] * (1.0 + 2.0 * j * rng.gaussian());
  return t;
}

/// One draw from the concentration distribution, clipped to a physiologic
/// floor. Works in generation space (log space for creatinine).
inline double sample_concentration(const GeneratorConfig& cfg, Rng& rng) {
  const double y = rng.gaussian(cfg.conc_mean, cfg.conc_sd);
  if (cfg.log_space) return y;  // exp() keeps the concentration positive
  const double floor = std::max(cfg.conc_mean - 4.0 * cfg.conc_sd, 0.02 * cfg.conc_mean);
  return std::max(y, floor);
}

/// Synthesizes a 10 s 8-lead record whose T-wave amplitude and QT interval
/// are affine in (y - conc_mean). `y` is the morphology driver in generation
/// space. Deterministic given the rng state.
inline RawEcg synthesize_ecg(double y, const PatientTemplate& patient, const GeneratorConfig& cfg, Rng& rng,
                             RawEcg* clean_out = nullptr) {
  if (!cfg.log_space && !(y > 0.0)) throw std::invalid_argument("synthesize_ecg: concentration must be positive");
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.fs * cfg.duration_s));
  const double dy = y - cfg.conc_mean;

  std::array<double, 5> amp = patient.amp;
  std::array<double, 5> center = patient.center;
  amp[4] = patient.amp[4] + cfg.t_amp_gain * dy;
  center[4] = patient.center[4] + cfg.qt_gain * dy;
  for (double w : patient.width)
    if (!(w > 0.0)) throw std::invalid_argument("synthesize_ecg: non-positive wave width");

  const double rr = 60.0 / patient.heart_rate_bpm;
  const double phase0 = rng.uniform(0.0, rr);
  const double wander_f = rng.uniform(cfg.baseline_freq_lo, cfg.baseline_freq_hi);
  std::array<double, 8> wander_phase{}, hum_phase{};
  for (int l = 0; l < 8; ++l) {
    wander_phase[static_cast<std::size_t>(l)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    hum_phase[static_cast<std::size_t>(l)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  // one beat: sum of 5 Gaussians, evaluated over +-0.5 s around each R peak
  std::vector<double> beat_train(n, 0.0);
  const int first_beat = -1;
  const int last_beat = static_cast<int>(cfg.duration_s / rr) + 1;
  for (int b = first_beat; b <= last_beat; ++b) {
    const double r_time = phase0 + b * rr;
    for (int w = 0; w < 5; ++w) {
      const double c = r_time + center[static_cast<std::size_t>(w)];
      const double s = patient.width[static_cast<std::size_t>(w)];
      const double a = amp[static_cast<std::size_t>(w)];
      const int lo = std::max(0, static_cast<int>((c - 5.0 * s) * cfg.fs));
      const int hi = std::min(static_cast<int>(n) - 1, static_cast<int>((c + 5.0 * s) * cfg.fs) + 1);
      for (int i = lo; i <= hi; ++i) {
        const double t = i / cfg.fs - c;
        beat_train[static_cast<std::size_t>(i)] += a * std::exp(-0.5 * t * t / (s * s));
      }
    }
  }

  RawEcg ecg(n, cfg.fs);
  ecg.meta.patient_id = patient.patient_id;
  ecg.meta.age = patient.age;
  ecg.meta.sex = patient.sex;
  if (clean_out) *clean_out = RawEcg(n, cfg.fs);
  for (int l = 0; l < 8; ++l) {
    const double g = patient.lead_gain[static_cast<std::size_t>(l)];
    auto lead = ecg.lead(l);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / cfg.fs;
      const double clean = g * beat_train[i];
      const double wander =
          cfg.baseline_amp * std::sin(2.0 * std::numbers::pi * wander_f * t + wander_phase[static_cast<std::size_t>(l)]);
      const double hum =
          cfg.powerline_amp * std::sin(2.0 * std::numbers::pi * cfg.powerline_hz * t + hum_phase[static_cast<std::size_t>(l)]);
      const double noise = patient.ecg_noise_sd > 0.0 ? rng.gaussian(0.0, patient.ecg_noise_sd) : 0.0;
      lead[i] = clean + wander + hum + noise;
      if (clean_out) clean_out->lead(l)[i] = clean;
    }
  }
  if (clean_out) clean_out->meta = ecg.meta;
  return ecg;
}

/// Generates the full labeled corpus with patient-level 70/20/10 splits,
/// median labeling over each patient's lab draws, first-ECG-only evaluation
/// records and a strictly later temporal-test era.
inline GeneratedCorpus generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_patients;
  const int n_dev = static_cast<int>(std::lround(0.7 * n));
  const int n_rand = static_cast<int>(std::lround(0.2 * n));
  const int n_temp = n - n_dev - n_rand;
  if (n_dev < 2 || n_rand < 1 || n_temp < 1)
    throw std::invalid_argument("generate_dataset: too few patients to fill all splits");
  const int n_val = std::max(1, static_cast<int>(std::lround(0.15 * n_dev)));

  // order patients by window time; the latest 10% become the temporal era
  std::vector<PatientTemplate> patients;
  patients.reserve(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) patients.push_back(make_patient(cfg, p));
  std::vector<int> by_time(static_cast<std::size_t>(n));
  std::iota(by_time.begin(), by_time.end(), 0);
  std::stable_sort(by_time.begin(), by_time.end(), [&](int a, int b) {
    return patients[static_cast<std::size_t>(a)].base_timestamp < patients[static_cast<std::size_t>(b)].base_timestamp;
  });
  enum class SplitId { train, validation, random_test, temporal_test };
  std::vector<SplitId> assignment(static_cast<std::size_t>(n), SplitId::train);
  for (int r = n - n_temp; r < n; ++r) {
    assignment[static_cast<std::size_t>(by_time[static_cast<std::size_t>(r)])] = SplitId::temporal_test;
    // a margin keeps every temporal record strictly after the development era
    patients[static_cast<std::size_t>(by_time[static_cast<std::size_t>(r)])].base_timestamp += 3 * 86400;
  }
  {
    std::vector<int> rest(by_time.begin(), by_time.begin() + (n - n_temp));
    Rng split_rng = Rng(cfg.seed).derive(0x57a7);
    for (std::size_t i = rest.size(); i > 1; --i)
      std::swap(rest[i - 1], rest[static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    for (int i = 0; i < n_rand; ++i) assignment[static_cast<std::size_t>(rest[static_cast<std::size_t>(i)])] = SplitId::random_test;
    for (int i = n_rand; i < n_rand + n_val; ++i)
      assignment[static_cast<std::size_t>(rest[static_cast<std::size_t>(i)])] = SplitId::validation;
    // the remainder stays in train
  }

  GeneratedCorpus corpus;
  corpus.cfg = cfg;
  double bayes_sum[4] = {0, 0, 0, 0};
  std::size_t bayes_count[4] = {0, 0, 0, 0};

  for (int p = 0; p < n; ++p) {
    const PatientTemplate& patient = patients[static_cast<std::size_t>(p)];
    Rng rng = Rng(cfg.seed).derive(0xec6).derive(static_cast<std::uint64_t>(p));
    const double ramp = cfg.age_sd_ramp ? detail::age_ramp(patient.age) : 1.0;

    // latent morphology driver and lab draws around it
    const double core_sd = std::sqrt(std::max(cfg.conc_sd * cfg.conc_sd - cfg.label_noise_sd * cfg.label_noise_sd,
                                              0.04 * cfg.conc_sd * cfg.conc_sd));
    GeneratorConfig core_cfg = cfg;
    core_cfg.conc_sd = core_sd * ramp;
    const double y_core = sample_concentration(core_cfg, rng);
    const double label_sd = cfg.label_noise_sd * ramp * patient.noise_factor;

    const int n_draws = static_cast<int>(rng.uniform_int(cfg.draws_lo, cfg.draws_hi));
    std::vector<double> draws(static_cast<std::size_t>(n_draws));
    for (double& d : draws) d = y_core + rng.gaussian(0.0, label_sd);
    const double median = median_label(draws);
    const double label = cfg.log_space ? std::exp(median) : median;

    const SplitId sid = assignment[static_cast<std::size_t>(p)];
    const bool eval_split = sid != SplitId::train;

    std::vector<std::pair<std::int64_t, std::size_t>> patient_records;  // (timestamp, corpus index)
    for (int d = 0; d < n_draws; ++d) {
      const std::int64_t draw_ts = patient.base_timestamp + 7200 * d;
      const int n_ecgs = static_cast<int>(rng.uniform_int(cfg.ecgs_per_draw_lo, cfg.ecgs_per_draw_hi));
      for (int e = 0; e < n_ecgs; ++e) {
        const std::int64_t ecg_ts = draw_ts + rng.uniform_int(-3600, 3600);
        LabeledExample ex;
        ex.kind = cfg.kind;
        ex.y = label;
        ex.ecg = synthesize_ecg(y_core, patient, cfg, rng);
        ex.ecg.meta.timestamp = ecg_ts;
        ex.ecg.meta.lab_timestamp = draw_ts;
        corpus.records.push_back(std::move(ex));
        corpus.latent.push_back(y_core);
        patient_records.emplace_back(ecg_ts, corpus.records.size() - 1);
      }
    }
    // evaluation splits keep only the first ECG of the window
    std::sort(patient_records.begin(), patient_records.end());
    const std::size_t keep = eval_split ? 1 : patient_records.size();
    for (std::size_t r = 0; r < keep; ++r) {
      const std::size_t idx = patient_records[r].second;
      switch (sid) {
        case SplitId::train: corpus.splits.train.push_back(idx); break;
        case SplitId::validation: corpus.splits.validation.push_back(idx); break;
        case SplitId::random_test: corpus.splits.random_test.push_back(idx); break;
        case SplitId::temporal_test: corpus.splits.temporal_test.push_back(idx); break;
      }
      const double resid = std::abs(median - y_core);
      bayes_sum[static_cast<int>(sid)] += resid;
      ++bayes_count[static_cast<int>(sid)];
    }
  }

  corpus.bayes_mae_train = bayes_sum[0] / std::max<std::size_t>(1, bayes_count[0]);
  corpus.bayes_mae_validation = bayes_sum[1] / std::max<std::size_t>(1, bayes_count[1]);
  corpus.bayes_mae_random_test = bayes_sum[2] / std::max<std::size_t>(1, bayes_count[2]);
  corpus.bayes_mae_temporal_test = bayes_sum[3] / std::max<std::size_t>(1, bayes_count[3]);
  return corpus;
}

}  // namespace elx
