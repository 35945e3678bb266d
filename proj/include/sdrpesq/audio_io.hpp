/*
 * Copyright 2026 The sdrpesq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdrpesq/error.hpp"

namespace sdrpesq {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const noexcept { return samples.size(); }
};

struct MixSpec {
  double target_snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct Mixture {
  Waveform noisy;
  Waveform scaled_noise;
};

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace detail {

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

/// Reads a 16-bit PCM mono RIFF/WAVE file. Samples are scaled by 1/32768.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kMissingInput, "cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  auto malformed = [&](const std::string& why) {
    fail(ErrorKind::kBadArgument, "malformed header: " + why + " (" + path + ")");
  };
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
    malformed("missing RIFF/WAVE tag");

  bool have_fmt = false;
  int channels = 0, bits = 0, sample_rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + pos, bytes.begin() + pos + 4);
    const std::size_t len = detail::get_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size() && id != "data") malformed("chunk overruns file");
    if (id == "fmt ") {
      if (len < 16) malformed("short fmt chunk");
      const int format = detail::get_u16(&bytes[body]);
      channels = detail::get_u16(&bytes[body + 2]);
      sample_rate = static_cast<int>(detail::get_u32(&bytes[body + 4]));
      bits = detail::get_u16(&bytes[body + 14]);
      if (channels != 1)
        fail(ErrorKind::kBadArgument, "channels unsupported: " + std::to_string(channels));
      if (bits != 16)
        fail(ErrorKind::kBadArgument, "bit depth unsupported: " + std::to_string(bits));
      if (format != 1) fail(ErrorKind::kBadArgument, "format unsupported: not PCM");
      if (sample_rate <= 0) malformed("non-positive sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) malformed("data chunk before fmt chunk");
      const std::size_t avail = std::min(len, bytes.size() - body);
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize(avail / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::get_u16(&bytes[body + 2 * i]));
        w.samples[i] = v / 32768.0;
      }
      if (w.samples.empty()) malformed("empty data chunk");
      return w;
    }
    pos = body + len + (len & 1);
  }
  fail(ErrorKind::kBadArgument,
       std::string("malformed header: ") + (have_fmt ? "missing data chunk" : "missing fmt chunk") + " (" + path + ")");
}

/// Writes 16-bit PCM mono. Out-of-range samples are clamped to [-1, 1) when
/// `clamp` is set, otherwise rejected.
inline void write_wav(const Waveform& w, const std::string& path, bool clamp = true) {
  std::vector<unsigned char> out;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.reserve(44 + data_bytes);
  for (char c : std::string("RIFF")) out.push_back(static_cast<unsigned char>(c));
  detail::put_u32(out, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) out.push_back(static_cast<unsigned char>(c));
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  for (char c : std::string("data")) out.push_back(static_cast<unsigned char>(c));
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    if (!std::isfinite(s)) fail(ErrorKind::kDivergence, "non-finite sample");
    if (s > 1.0 || s < -1.0) {
      if (!clamp) fail(ErrorKind::kBadArgument, "overrange sample");
      s = std::clamp(s, -1.0, 1.0);
    }
    const long q = std::clamp(std::lround(s * 32768.0), -32768L, 32767L);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kMissingInput, "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::kMissingInput, "write failed: " + path);
}

/// Mixes `noise` into `clean` so that 10 log10(|clean|^2 / |scaled_noise|^2)
/// equals the target. The clean signal is kept fixed; a seeded random crop of
/// the noise is scaled.
inline Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, const MixSpec& spec) {
  if (clean.sample_rate != noise.sample_rate)
    fail(ErrorKind::kBadArgument, "sample rate mismatch");
  if (!std::isfinite(spec.target_snr_db)) fail(ErrorKind::kBadArgument, "non-finite target SNR");
  if (noise.size() < clean.size())
    fail(ErrorKind::kShapeMismatch, "noise shorter than clean signal");
  const double clean_energy = energy(clean.samples);
  if (clean_energy <= 0.0) fail(ErrorKind::kDegenerateSignal, "zero-energy reference");

  std::size_t offset = 0;
  if (noise.size() > clean.size()) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> pick(0, noise.size() - clean.size());
    offset = pick(rng);
  }
  const std::span<const double> crop(noise.samples.data() + offset, clean.size());
  const double noise_energy = energy(crop);
  if (noise_energy <= 0.0) fail(ErrorKind::kDegenerateSignal, "zero-energy noise");

  const double scale =
      std::sqrt(clean_energy / (noise_energy * std::pow(10.0, spec.target_snr_db / 10.0)));
  Mixture mix;
  mix.noisy.sample_rate = mix.scaled_noise.sample_rate = clean.sample_rate;
  mix.scaled_noise.samples.resize(clean.size());
  mix.noisy.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    mix.scaled_noise.samples[i] = scale * crop[i];
    mix.noisy.samples[i] = clean.samples[i] + mix.scaled_noise.samples[i];
  }
  return mix;
}

inline double snr_db(std::span<const double> signal, std::span<const double> noise) {
  return 10.0 * std::log10(energy(signal) / energy(noise));
}

}  // namespace sdrpesq
