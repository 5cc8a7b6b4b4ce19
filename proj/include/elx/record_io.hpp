#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "elx/signal.hpp"

namespace elx {

// ---------------------------------------------------------------------------
// Columnar text format
//
//   elx-ecg text 1
//   leads 8
//   fs <Hz>
//   samples <n>
//   meta patient_id <int>
//   meta age <float>
//   meta sex <M|F>
//   meta timestamp <unix seconds>
//   meta lab_timestamp <unix seconds>
//   data
//   <one row per sample, 8 space-separated decimal columns>
//
// Values are printed with %.17g so a round trip is bit-exact.
// ---------------------------------------------------------------------------

inline void write_ecg_text(const RawEcg& ecg, std::ostream& os) {
  ecg.validate();
  char buf[64];
  os << "elx-ecg text 1\n";
  os << "leads " << RawEcg::kLeads << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ecg.fs);
  os << "fs " << buf << "\n";
  os << "samples " << ecg.n_samples << "\n";
  os << "meta patient_id " << ecg.meta.patient_id << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ecg.meta.age);
  os << "meta age " << buf << "\n";
  os << "meta sex " << (ecg.meta.sex ? 'M' : 'F') << "\n";
  os << "meta timestamp " << ecg.meta.timestamp << "\n";
  os << "meta lab_timestamp " << ecg.meta.lab_timestamp << "\n";
  os << "data\n";
  for (std::size_t i = 0; i < ecg.n_samples; ++i) {
    for (int l = 0; l < RawEcg::kLeads; ++l) {
      std::snprintf(buf, sizeof buf, "%.17g", ecg.lead(l)[i]);
      os << (l ? " " : "") << buf;
    }
    os << "\n";
  }
}

inline RawEcg read_ecg_text(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "elx-ecg text 1")
    throw std::runtime_error("ecg text: bad magic line");
  std::size_t n_samples = 0;
  double fs = 0.0;
  PatientMeta meta;
  int leads = 0;
  while (std::getline(is, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "leads") {
      ls >> leads;
    } else if (key == "fs") {
      ls >> fs;
    } else if (key == "samples") {
      ls >> n_samples;
    } else if (key == "meta") {
      std::string mk;
      ls >> mk;
      if (mk == "patient_id")
        ls >> meta.patient_id;
      else if (mk == "age")
        ls >> meta.age;
      else if (mk == "sex") {
        char c = 'F';
        ls >> c;
        meta.sex = (c == 'M') ? 1 : 0;
      } else if (mk == "timestamp")
        ls >> meta.timestamp;
      else if (mk == "lab_timestamp")
        ls >> meta.lab_timestamp;
      // unknown meta keys are skipped
    } else {
      throw std::runtime_error("ecg text: unexpected header line: " + line);
    }
  }
  if (leads != RawEcg::kLeads) throw std::runtime_error("ecg text: expected 8 leads");
  if (n_samples == 0) throw std::runtime_error("ecg text: missing samples count");
  RawEcg ecg(n_samples, fs);
  ecg.meta = meta;
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("ecg text: truncated data section");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int l = 0; l < RawEcg::kLeads; ++l) {
      while (p < end && *p == ' ') ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw std::runtime_error("ecg text: bad sample value");
      ecg.lead(l)[i] = v;
      p = next;
    }
  }
  ecg.validate();
  return ecg;
}

// ---------------------------------------------------------------------------
// Compact binary format
//
//   bytes 0..7   magic "ELXECGB\0"
//   bytes 8..11  format version (u32 little-endian, currently 1)
//   bytes 12..15 reserved (zero)
//   u32 leads, u64 samples, f64 fs
//   i64 patient_id, f64 age, u8 sex, i64 timestamp, i64 lab_timestamp
//   leads*samples f64 samples, lead-major
//
// All integers and floats are little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<char, 8> kEcgMagic = {'E', 'L', 'X', 'E', 'C', 'G', 'B', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("ecg binary: truncated stream");
  return v;
}

}  // namespace detail

inline void write_ecg_binary(const RawEcg& ecg, std::ostream& os) {
  ecg.validate();
  os.write(detail::kEcgMagic.data(), detail::kEcgMagic.size());
  detail::put<std::uint32_t>(os, 1u);
  detail::put<std::uint32_t>(os, 0u);
  detail::put<std::uint32_t>(os, RawEcg::kLeads);
  detail::put<std::uint64_t>(os, ecg.n_samples);
  detail::put<double>(os, ecg.fs);
  detail::put<std::int64_t>(os, ecg.meta.patient_id);
  detail::put<double>(os, ecg.meta.age);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(ecg.meta.sex));
  detail::put<std::int64_t>(os, ecg.meta.timestamp);
  detail::put<std::int64_t>(os, ecg.meta.lab_timestamp);
  os.write(reinterpret_cast<const char*>(ecg.samples.data()),
           static_cast<std::streamsize>(ecg.samples.size() * sizeof(double)));
}

inline RawEcg read_ecg_binary(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != detail::kEcgMagic) throw std::runtime_error("ecg binary: bad magic");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != 1u) throw std::runtime_error("ecg binary: unsupported version");
  detail::get<std::uint32_t>(is);  // reserved
  const auto leads = detail::get<std::uint32_t>(is);
  if (leads != RawEcg::kLeads) throw std::runtime_error("ecg binary: expected 8 leads");
  const auto n = detail::get<std::uint64_t>(is);
  const double fs = detail::get<double>(is);
  RawEcg ecg(static_cast<std::size_t>(n), fs);
  ecg.meta.patient_id = detail::get<std::int64_t>(is);
  ecg.meta.age = detail::get<double>(is);
  ecg.meta.sex = detail::get<std::uint8_t>(is);
  ecg.meta.timestamp = detail::get<std::int64_t>(is);
  ecg.meta.lab_timestamp = detail::get<std::int64_t>(is);
  is.read(reinterpret_cast<char*>(ecg.samples.data()),
          static_cast<std::streamsize>(ecg.samples.size() * sizeof(double)));
  if (!is) throw std::runtime_error("ecg binary: truncated samples");
  ecg.validate();
  return ecg;
}

inline void save_ecg(const RawEcg& ecg, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string());
    if (path.extension() == ".txt")
      write_ecg_text(ecg, os);
    else
      write_ecg_binary(ecg, os);
  }
  std::filesystem::rename(tmp, path);
}

inline RawEcg load_ecg(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (path.extension() == ".txt") return read_ecg_text(is);
  return read_ecg_binary(is);
}

}  // namespace elx
