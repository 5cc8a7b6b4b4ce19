#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace elx {

// ---------------------------------------------------------------------------
// Record types
// ---------------------------------------------------------------------------

struct PatientMeta {
  std::int64_t patient_id = 0;
  double age = 0.0;
  int sex = 0;  // 0 = female, 1 = male
  std::int64_t timestamp = 0;      // ECG acquisition time, seconds
  std::int64_t lab_timestamp = 0;  // blood draw time, seconds
};

/// Multichannel ECG at its native sampling rate. Exactly 8 independent leads.
struct RawEcg {
  static constexpr int kLeads = 8;

  std::vector<double> samples;  // lead-major, kLeads * n_samples
  std::size_t n_samples = 0;
  double fs = 0.0;
  PatientMeta meta;

  RawEcg() = default;
  RawEcg(std::size_t n, double sample_rate) : samples(kLeads * n, 0.0), n_samples(n), fs(sample_rate) {}

  std::span<double> lead(int i) { return {samples.data() + static_cast<std::size_t>(i) * n_samples, n_samples}; }
  std::span<const double> lead(int i) const {
    return {samples.data() + static_cast<std::size_t>(i) * n_samples, n_samples};
  }

  void validate() const {
    if (n_samples < 1) throw std::invalid_argument("RawEcg: empty signal");
    if (samples.size() != static_cast<std::size_t>(kLeads) * n_samples)
      throw std::invalid_argument("RawEcg: expected exactly 8 leads of equal length");
    if (!(fs > 0.0)) throw std::invalid_argument("RawEcg: sampling rate must be positive");
    for (double v : samples)
      if (!std::isfinite(v)) throw std::invalid_argument("RawEcg: non-finite sample");
  }
};

/// Fixed-shape 8 x 4096 record at 400 Hz, the model input.
struct ProcessedEcg {
  static constexpr int kLeads = 8;
  static constexpr std::size_t kSamples = 4096;
  static constexpr double kFs = 400.0;

  std::vector<double> samples;  // lead-major, kLeads * kSamples
  PatientMeta meta;

  ProcessedEcg() : samples(kLeads * kSamples, 0.0) {}

  std::span<double> lead(int i) { return {samples.data() + static_cast<std::size_t>(i) * kSamples, kSamples}; }
  std::span<const double> lead(int i) const {
    return {samples.data() + static_cast<std::size_t>(i) * kSamples, kSamples};
  }

  void validate() const {
    if (samples.size() != kLeads * kSamples) throw std::invalid_argument("ProcessedEcg: wrong shape");
    for (double v : samples)
      if (!std::isfinite(v)) throw std::invalid_argument("ProcessedEcg: non-finite sample");
  }
};

// ---------------------------------------------------------------------------
// IIR design
// ---------------------------------------------------------------------------

struct IirFilterSpec {
  enum class Kind { elliptic_highpass, notch };

  Kind kind = Kind::elliptic_highpass;
  double freq_hz = 0.8;         // cutoff (high-pass) or center (notch)
  double stopband_db = 40.0;    // elliptic stopband attenuation
  double passband_ripple_db = 0.5;
  int order = 3;
  double quality = 30.0;        // notch Q

  static IirFilterSpec default_highpass() { return {Kind::elliptic_highpass, 0.8, 40.0, 0.5, 3, 0.0}; }
  static IirFilterSpec default_notch() { return {Kind::notch, 50.0, 0.0, 0.0, 2, 30.0}; }
};

struct Biquad {
  // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;
  bool first_order = false;  // b2 == a2 == 0 structurally

  bool stable() const {
    if (first_order) return std::abs(a1) < 1.0;
    return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
  }

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Cascade of second-order sections.
struct SosFilter {
  std::vector<Biquad> sections;
  int order = 0;

  bool stable() const {
    return std::all_of(sections.begin(), sections.end(), [](const Biquad& s) { return s.stable(); });
  }

  std::complex<double> response(double omega) const {
    const std::complex<double> z = std::polar(1.0, omega);
    const std::complex<double> zi = 1.0 / z;
    std::complex<double> h = 1.0;
    for (const auto& s : sections)
      h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    return h;
  }

  std::vector<double> impulse_response(std::size_t n) const;
};

namespace detail {

inline double ellipk(double k) {
  // complete elliptic integral of the first kind via AGM
  if (k < 0.0 || k >= 1.0) throw std::invalid_argument("ellipk: modulus must be in [0,1)");
  double a = 1.0, b = std::sqrt(1.0 - k * k);
  for (int it = 0; it < 64 && std::abs(a - b) > 4e-16 * a; ++it) {
    const double an = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = an;
  }
  return std::numbers::pi / (2.0 * a);
}

inline double ellipk_comp(double k) { return ellipk(std::sqrt(std::max(0.0, 1.0 - k * k))); }

inline std::vector<double> landen(double k) {
  std::vector<double> v;
  while (k > 1e-14) {
    k = std::pow(k / (1.0 + std::sqrt(1.0 - k * k)), 2.0);
    v.push_back(k);
    if (v.size() > 64) break;
  }
  return v;
}

/// w = cd(u K, k) with u in units of the quarter period K.
inline std::complex<double> cde(std::complex<double> u, const std::vector<double>& v) {
  std::complex<double> w = std::cos(u * (std::numbers::pi / 2.0));
  for (std::size_t i = v.size(); i-- > 0;) w = (1.0 + v[i]) * w / (1.0 + v[i] * w * w);
  return w;
}

/// w = sn(u K, k) with u in units of K.
inline std::complex<double> sne(std::complex<double> u, const std::vector<double>& v) {
  std::complex<double> w = std::sin(u * (std::numbers::pi / 2.0));
  for (std::size_t i = v.size(); i-- > 0;) w = (1.0 + v[i]) * w / (1.0 + v[i] * w * w);
  return w;
}

/// Inverse of sne: u (in units of K) with sn(u K, k) = w.
inline std::complex<double> asne(std::complex<double> w, double k) {
  const std::vector<double> v = landen(k);
  double vp = k;
  for (std::size_t i = 0; i < v.size(); ++i) {
    w = w / ((1.0 + std::sqrt(std::complex<double>(1.0) - w * w * (vp * vp))) / 2.0 * (1.0 + v[i]));
    vp = v[i];
  }
  return std::asin(w) * (2.0 / std::numbers::pi);
}

/// Solves the elliptic degree equation N K'(k)/K(k) = K'(k1)/K(k1) for k.
inline double solve_degree_equation(int n, double k1) {
  const double target = ellipk_comp(k1) / ellipk(k1);
  double lo = 1e-9, hi = 1.0 - 1e-12;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double val = static_cast<double>(n) * ellipk_comp(mid) / ellipk(mid);
    if (val > target)
      lo = mid;  // ratio decreases with k
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct AnalogSection {
  // (A s^2 + B s + C) / (D s^2 + E s + F); first order encoded with A = D = 0
  double A = 0, B = 0, C = 0, D = 0, E = 0, F = 0;
  bool first_order = false;
};

/// Bilinear transform s = (z-1)/(z+1) of one analog section.
inline Biquad bilinear(const AnalogSection& s) {
  Biquad q;
  if (s.first_order) {
    const double a0 = s.E + s.F;
    q.first_order = true;
    q.b0 = (s.B + s.C) / a0;
    q.b1 = (s.C - s.B) / a0;
    q.b2 = 0.0;
    q.a1 = (s.F - s.E) / a0;
    q.a2 = 0.0;
  } else {
    const double a0 = s.D + s.E + s.F;
    q.b0 = (s.A + s.B + s.C) / a0;
    q.b1 = 2.0 * (s.C - s.A) / a0;
    q.b2 = (s.A - s.B + s.C) / a0;
    q.a1 = 2.0 * (s.F - s.D) / a0;
    q.a2 = (s.D - s.E + s.F) / a0;
  }
  return q;
}

}  // namespace detail

/// Digital elliptic high-pass via the analog low-pass prototype
/// (Landen/Jacobi parameterization), an s -> 1/s transform and the bilinear
/// map with prewarped edge. Passband edge sits exactly at spec.freq_hz with
/// spec.passband_ripple_db ripple; the stopband floor is spec.stopband_db down.
inline SosFilter design_elliptic_highpass(const IirFilterSpec& spec, double fs) {
  if (!(fs > 0.0) || !(spec.freq_hz > 0.0) || spec.freq_hz >= fs / 2.0)
    throw std::invalid_argument("design_elliptic_highpass: bad frequencies");
  if (spec.order < 1) throw std::invalid_argument("design_elliptic_highpass: order must be >= 1");

  const int n = spec.order;
  const double ep = std::sqrt(std::pow(10.0, spec.passband_ripple_db / 10.0) - 1.0);
  const double es = std::sqrt(std::pow(10.0, spec.stopband_db / 10.0) - 1.0);
  const double k1 = ep / es;
  const double k = detail::solve_degree_equation(n, k1);
  const std::vector<double> vk = detail::landen(k);

  const int pairs = n / 2;
  const bool odd = (n % 2) != 0;

  // v0 locates the poles on the elliptic curve
  const std::complex<double> j(0.0, 1.0);
  const std::complex<double> v0 = -j * detail::asne(j / ep, k1) / static_cast<double>(n);

  std::vector<double> zero_w;                 // imaginary-axis zero magnitudes of the LP prototype
  std::vector<std::complex<double>> poles_lp;  // upper-half-plane poles
  for (int i = 1; i <= pairs; ++i) {
    const double u = (2.0 * i - 1.0) / n;
    const double zeta = detail::cde(std::complex<double>(u, 0.0), vk).real();
    zero_w.push_back(1.0 / (k * zeta));
    poles_lp.push_back(j * detail::cde(std::complex<double>(u, 0.0) - j * v0, vk));
  }
  double real_pole = 0.0;
  if (odd) real_pole = (j * detail::sne(j * v0, vk)).real();

  // prewarped edge for the bilinear map s = (z-1)/(z+1)
  const double wc = std::tan(std::numbers::pi * spec.freq_hz / fs);

  SosFilter filt;
  filt.order = n;
  for (int i = 0; i < pairs; ++i) {
    const std::complex<double> p = poles_lp[i];
    const double wz = zero_w[i];
    // LP section (s^2 + wz^2)/(s^2 - 2 Re(p) s + |p|^2), normalized to unit DC
    // gain, then s -> wc / s for the high-pass.
    const double pr = -2.0 * p.real();
    const double pm = std::norm(p);
    detail::AnalogSection hp;
    hp.A = 1.0;
    hp.B = 0.0;
    hp.C = (wc * wc) / (wz * wz);
    hp.D = 1.0;
    hp.E = wc * pr / pm;
    hp.F = wc * wc / pm;
    // unit gain at s -> infinity requires scaling by (pm / wz^2)^-1 times the
    // LP DC normalization wz^2/pm; the two cancel, so A/D = 1 already works.
    filt.sections.push_back(detail::bilinear(hp));
  }
  if (odd) {
    // LP real-pole section (-p0)/(s - p0) -> HP s/(s + wc/(-p0))
    detail::AnalogSection hp;
    hp.first_order = true;
    hp.B = 1.0;
    hp.C = 0.0;
    hp.E = 1.0;
    hp.F = wc / (-real_pole);
    filt.sections.push_back(detail::bilinear(hp));
  } else {
    // even order: response at infinity is the ripple floor, not unity
    const double g = std::pow(10.0, -spec.passband_ripple_db / 20.0);
    filt.sections.front().b0 *= g;
    filt.sections.front().b1 *= g;
    filt.sections.front().b2 *= g;
  }
  if (!filt.stable()) throw std::runtime_error("design_elliptic_highpass: designed filter unstable");
  return filt;
}

/// Second-order notch with bandwidth = center / Q (constrained bilinear form).
inline SosFilter design_notch(const IirFilterSpec& spec, double fs) {
  if (!(fs > 0.0) || !(spec.freq_hz > 0.0) || spec.freq_hz >= fs / 2.0)
    throw std::invalid_argument("design_notch: bad frequencies");
  if (!(spec.quality > 0.0)) throw std::invalid_argument("design_notch: quality must be positive");
  const double w0 = 2.0 * std::numbers::pi * spec.freq_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * spec.quality);
  const double a0 = 1.0 + alpha;
  Biquad q;
  q.b0 = 1.0 / a0;
  q.b1 = -2.0 * std::cos(w0) / a0;
  q.b2 = 1.0 / a0;
  q.a1 = -2.0 * std::cos(w0) / a0;
  q.a2 = (1.0 - alpha) / a0;
  SosFilter filt;
  filt.order = 2;
  filt.sections.push_back(q);
  if (!filt.stable()) throw std::runtime_error("design_notch: designed filter unstable");
  return filt;
}

inline SosFilter design_filter(const IirFilterSpec& spec, double fs) {
  return spec.kind == IirFilterSpec::Kind::notch ? design_notch(spec, fs)
                                                 : design_elliptic_highpass(spec, fs);
}

inline std::vector<double> SosFilter::impulse_response(std::size_t n) const {
  std::vector<double> x(n, 0.0);
  x[0] = 1.0;
  for (const auto& s : sections) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double in = x[i];
      const double out = s.b0 * in + s1;
      s1 = s.b1 * in - s.a1 * out + s2;
      s2 = s.b2 * in - s.a2 * out;
      x[i] = out;
    }
  }
  return x;
}

/// Forward-backward (zero-phase) filtering with odd-extension edge padding of
/// length 3*(order+1) and steady-state section initialization. The magnitude
/// response is applied twice; phase cancels.
inline std::vector<double> filtfilt(const SosFilter& f, std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("filtfilt: empty signal");
  const std::size_t padlen = static_cast<std::size_t>(3 * (f.order + 1));
  if (x.size() <= padlen)
    throw std::invalid_argument("filtfilt: signal shorter than edge padding");

  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext[i] = 2.0 * x[0] - x[padlen - i];
  std::copy(x.begin(), x.end(), ext.begin() + padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext[padlen + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  auto one_pass = [&f](std::vector<double>& sig) {
    double level = sig.front();
    for (const auto& s : f.sections) {
      // steady state of the direct-form-II-transposed registers for constant input
      const double g = s.dc_gain();
      const double y0 = g * level;
      double s1 = (s.b1 + s.b2) * level - (s.a1 + s.a2) * y0;
      double s2 = s.b2 * level - s.a2 * y0;
      for (double& v : sig) {
        const double in = v;
        const double out = s.b0 * in + s1;
        s1 = s.b1 * in - s.a1 * out + s2;
        s2 = s.b2 * in - s.a2 * out;
        v = out;
      }
      level = y0;
    }
  };

  one_pass(ext);
  std::reverse(ext.begin(), ext.end());
  one_pass(ext);
  std::reverse(ext.begin(), ext.end());

  std::vector<double> out(ext.begin() + padlen, ext.begin() + padlen + n);
  for (double v : out)
    if (!std::isfinite(v)) throw std::runtime_error("filtfilt: non-finite output");
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

inline double bessel_i0(double x) {
  // power series; converges quickly for the beta values used here
  double sum = 1.0, term = 1.0;
  const double half_x2 = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= half_x2 / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

/// Kaiser-windowed sinc prototype for polyphase resampling; odd length so the
/// group delay is an integer number of upsampled samples.
inline std::vector<double> kaiser_sinc_prototype(int up, int down, int taps_per_phase, double beta) {
  const int n = taps_per_phase * up + 1;
  const int c = (n - 1) / 2;
  const double cutoff = 1.0 / std::max(up, down);  // in units of the upsampled Nyquist
  const double i0b = bessel_i0(beta);
  std::vector<double> h(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i - c);
    const double sinc = t == 0.0 ? 1.0
                                 : std::sin(std::numbers::pi * cutoff * t) / (std::numbers::pi * cutoff * t);
    const double r = 2.0 * i / (n - 1.0) - 1.0;
    const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[i] = static_cast<double>(up) * cutoff * sinc * w;
  }
  return h;
}

inline std::int64_t reduce_ratio(double target_fs, double fs_in, std::int64_t& up, std::int64_t& down) {
  // sampling rates are treated as rational with millihertz resolution
  const std::int64_t a = std::llround(target_fs * 1000.0);
  const std::int64_t b = std::llround(fs_in * 1000.0);
  if (a <= 0 || b <= 0) throw std::invalid_argument("resample: bad sampling rates");
  const std::int64_t g = std::gcd(a, b);
  up = a / g;
  down = b / g;
  if (up > 4096 || down > 4096)
    throw std::invalid_argument("resample: rate ratio too irregular for polyphase design");
  return g;
}

}  // namespace detail

/// Polyphase resampling of one channel with a Kaiser-windowed sinc
/// (beta = 8.6, 64 taps per phase). Mirror extension at the edges.
/// Output length is round(n_in * target_fs / fs_in).
inline std::vector<double> resample_channel(std::span<const double> x, double fs_in, double target_fs) {
  if (x.empty()) throw std::invalid_argument("resample: empty signal");
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("resample: non-finite input");
  if (fs_in == target_fs) return {x.begin(), x.end()};

  std::int64_t up = 0, down = 0;
  detail::reduce_ratio(target_fs, fs_in, up, down);
  if (up == down) return {x.begin(), x.end()};

  constexpr int kTapsPerPhase = 64;
  constexpr double kBeta = 8.6;
  const std::vector<double> h = detail::kaiser_sinc_prototype(static_cast<int>(up), static_cast<int>(down),
                                                              kTapsPerPhase, kBeta);
  const std::int64_t c = (static_cast<std::int64_t>(h.size()) - 1) / 2;
  const std::int64_t n_in = static_cast<std::int64_t>(x.size());
  const std::int64_t n_out = std::llround(static_cast<double>(n_in) * target_fs / fs_in);

  auto sample_at = [&x, n_in](std::int64_t idx) -> double {
    // mirror extension keeps edge transients small
    if (idx < 0) idx = -idx;
    if (idx >= n_in) idx = 2 * (n_in - 1) - idx;
    idx = std::clamp<std::int64_t>(idx, 0, n_in - 1);
    return x[static_cast<std::size_t>(idx)];
  };

  std::vector<double> y(static_cast<std::size_t>(n_out), 0.0);
  for (std::int64_t m = 0; m < n_out; ++m) {
    const std::int64_t q = m * down + c;  // position in the upsampled grid
    const std::int64_t phase = q % up;
    const std::int64_t base = (q - phase) / up;
    double acc = 0.0;
    for (std::int64_t t = phase; t < static_cast<std::int64_t>(h.size()); t += up)
      acc += h[static_cast<std::size_t>(t)] * sample_at(base - (t - phase) / up);
    y[static_cast<std::size_t>(m)] = acc;
  }
  return y;
}

/// Resamples all leads to target_fs (default 400 Hz).
inline RawEcg resample(const RawEcg& raw, double target_fs = 400.0) {
  raw.validate();
  if (!(target_fs > 0.0)) throw std::invalid_argument("resample: target rate must be positive");
  const std::vector<double> first = resample_channel(raw.lead(0), raw.fs, target_fs);
  RawEcg out(first.size(), target_fs);
  out.meta = raw.meta;
  std::copy(first.begin(), first.end(), out.lead(0).begin());
  for (int l = 1; l < RawEcg::kLeads; ++l) {
    const std::vector<double> r = resample_channel(raw.lead(l), raw.fs, target_fs);
    std::copy(r.begin(), r.end(), out.lead(l).begin());
  }
  return out;
}

/// Appends zeros so every lead has exactly n samples. Longer inputs are an
/// error: records are padded, never truncated.
inline RawEcg pad_to_length(const RawEcg& sig, std::size_t n = ProcessedEcg::kSamples) {
  sig.validate();
  if (sig.n_samples > n)
    throw std::invalid_argument("pad_to_length: signal longer than target length");
  RawEcg out(n, sig.fs);
  out.meta = sig.meta;
  for (int l = 0; l < RawEcg::kLeads; ++l) {
    auto src = sig.lead(l);
    std::copy(src.begin(), src.end(), out.lead(l).begin());
  }
  return out;
}

/// Zero-phase elliptic high-pass on every lead.
inline RawEcg highpass_elliptic(const RawEcg& sig, const IirFilterSpec& spec = IirFilterSpec::default_highpass()) {
  sig.validate();
  const SosFilter f = design_elliptic_highpass(spec, sig.fs);
  RawEcg out = sig;
  for (int l = 0; l < RawEcg::kLeads; ++l) {
    const std::vector<double> y = filtfilt(f, sig.lead(l));
    std::copy(y.begin(), y.end(), out.lead(l).begin());
  }
  return out;
}

/// Zero-phase notch on every lead.
inline RawEcg notch(const RawEcg& sig, const IirFilterSpec& spec = IirFilterSpec::default_notch()) {
  sig.validate();
  const SosFilter f = design_notch(spec, sig.fs);
  RawEcg out = sig;
  for (int l = 0; l < RawEcg::kLeads; ++l) {
    const std::vector<double> y = filtfilt(f, sig.lead(l));
    std::copy(y.begin(), y.end(), out.lead(l).begin());
  }
  return out;
}

/// Full preprocessing chain: resample to 400 Hz, zero-pad to 4096, zero-phase
/// elliptic high-pass, zero-phase 50 Hz notch.
inline ProcessedEcg preprocess(const RawEcg& raw,
                               const IirFilterSpec& hp_spec = IirFilterSpec::default_highpass(),
                               const IirFilterSpec& notch_spec = IirFilterSpec::default_notch()) {
  RawEcg r = resample(raw, ProcessedEcg::kFs);
  if (r.n_samples > ProcessedEcg::kSamples)
    throw std::invalid_argument("preprocess: record longer than 4096 samples after resampling");
  r = pad_to_length(r, ProcessedEcg::kSamples);
  r = highpass_elliptic(r, hp_spec);
  r = notch(r, notch_spec);
  ProcessedEcg out;
  out.meta = raw.meta;
  out.samples = std::move(r.samples);
  out.validate();
  return out;
}

}  // namespace elx
