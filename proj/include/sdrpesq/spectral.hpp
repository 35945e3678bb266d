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

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sdrpesq/error.hpp"
#include "sdrpesq/fft.hpp"
#include "sdrpesq/grid.hpp"

namespace sdrpesq {

/// STFT framing. The signal is zero-padded by `fft_size - hop` samples at the
/// head and up to a whole frame at the tail, so every real sample sits under
/// the full set of overlapping frames. Frame m covers padded samples
/// [m*hop, m*hop + fft_size), i.e. original samples starting at m*hop - pad().
struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop = 256;
  std::vector<double> window;            // analysis window, also used by the Griffin-Lim solution
  std::vector<double> synthesis_window;  // plain overlap-add ISTFT only

  static std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    return w;
  }

  static std::vector<double> rectangular(std::size_t n) { return std::vector<double>(n, 1.0); }

  static StftConfig with_hann(std::size_t fft_size, std::size_t hop) {
    return {fft_size, hop, hann(fft_size), hann(fft_size)};
  }

  /// 512/256 at 16 kHz, 256/128 at 8 kHz: 32 ms frames with 50% overlap.
  static StftConfig for_rate(int sample_rate) {
    return sample_rate == 8000 ? with_hann(256, 128) : with_hann(512, 256);
  }

  std::size_t bins() const noexcept { return fft_size / 2 + 1; }
  std::size_t pad() const noexcept { return fft_size - hop; }
  std::size_t frames_for(std::size_t length) const noexcept {
    return (length + pad() + hop - 1) / hop;
  }
  // Offset of frame m's first tap in original sample coordinates.
  std::ptrdiff_t frame_start(std::size_t m) const noexcept {
    return static_cast<std::ptrdiff_t>(m * hop) - static_cast<std::ptrdiff_t>(pad());
  }

  void validate() const {
    if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
      fail(ErrorKind::kBadArgument, "fft_size must be a power of two");
    if (hop == 0 || hop > fft_size) fail(ErrorKind::kBadArgument, "hop must be in [1, fft_size]");
    if (window.size() != fft_size || synthesis_window.size() != fft_size)
      fail(ErrorKind::kBadArgument, "window length must equal fft_size");
    for (std::span<const double> w : {std::span<const double>(window),
                                      std::span<const double>(synthesis_window)})
      for (double v : w)
        if (!std::isfinite(v) || v < 0.0)
          fail(ErrorKind::kBadArgument, "window taps must be finite and non-negative");
    // With full overlap everywhere, the Griffin-Lim denominator at sample n
    // is the sum of w^2 over the residue class of n modulo hop.
    for (std::size_t r = 0; r < hop; ++r) {
      double s = 0.0;
      for (std::size_t t = r; t < fft_size; t += hop) s += window[t] * window[t];
      if (s <= kNormFloor)
        fail(ErrorKind::kBadArgument, "sum of squared window taps vanishes: window/hop misconfigured");
    }
  }

  static constexpr double kNormFloor = 1e-12;
};

struct MismatchReport {
  double objective = 0.0;
  std::vector<double> per_iteration;
};

struct GriffinLimResult {
  std::vector<double> signal;
  MismatchReport report;
};

/// Weight of one-sided bin k in a two-sided sum.
inline double bin_weight(std::size_t k, std::size_t bins) noexcept {
  return (k == 0 || k + 1 == bins) ? 1.0 : 2.0;
}

inline Complex unit_phasor(Complex z) noexcept {
  const double r = std::abs(z);
  return r > 0.0 ? z / r : Complex{1.0, 0.0};
}

inline ComplexGrid stft(std::span<const double> x, const StftConfig& cfg) {
  cfg.validate();
  if (x.size() < cfg.fft_size) fail(ErrorKind::kShapeMismatch, "waveform shorter than one frame");
  const std::size_t frames = cfg.frames_for(x.size());
  const auto len = static_cast<std::ptrdiff_t>(x.size());
  ComplexGrid out(frames, cfg.bins());
  RealFft fft(cfg.fft_size);
  std::vector<double> frame(cfg.fft_size);
  for (std::size_t m = 0; m < frames; ++m) {
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      frame[t] = (n >= 0 && n < len) ? cfg.window[t] * x[static_cast<std::size_t>(n)] : 0.0;
    }
    fft.forward(frame, out.row(m));
  }
  return out;
}

namespace detail {

inline void check_grid(const ComplexGrid& s, const StftConfig& cfg, std::size_t length) {
  cfg.validate();
  if (s.cols() != cfg.bins()) fail(ErrorKind::kShapeMismatch, "bin count does not match fft_size");
  if (s.rows() == 0) fail(ErrorKind::kShapeMismatch, "empty spectrogram");
  if (cfg.frames_for(length) != s.rows())
    fail(ErrorKind::kShapeMismatch, "length outside the coverage of the frames");
}

// Sum over frames of w^2 at each output sample.
inline std::vector<double> squared_window_sum(const StftConfig& cfg, std::size_t frames,
                                              std::size_t length) {
  std::vector<double> norm(length, 0.0);
  const auto len = static_cast<std::ptrdiff_t>(length);
  for (std::size_t m = 0; m < frames; ++m) {
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      if (n >= 0 && n < len) norm[static_cast<std::size_t>(n)] += cfg.window[t] * cfg.window[t];
    }
  }
  return norm;
}

}  // namespace detail

/// Least-squares signal whose STFT is closest to `s`:
/// z(n) = sum_m w(n - m hop) xhat_m(n - m hop) / sum_m w^2(n - m hop).
/// Samples whose denominator is below the floor are set to zero.
inline std::vector<double> istft_gl(const ComplexGrid& s, const StftConfig& cfg, std::size_t length) {
  detail::check_grid(s, cfg, length);
  const auto len = static_cast<std::ptrdiff_t>(length);
  std::vector<double> z(length, 0.0);
  RealFft fft(cfg.fft_size);
  std::vector<double> frame(cfg.fft_size);
  for (std::size_t m = 0; m < s.rows(); ++m) {
    fft.inverse(s.row(m), frame);
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      if (n >= 0 && n < len) z[static_cast<std::size_t>(n)] += cfg.window[t] * frame[t];
    }
  }
  const auto norm = detail::squared_window_sum(cfg, s.rows(), length);
  for (std::size_t n = 0; n < length; ++n)
    z[n] = norm[n] > StftConfig::kNormFloor ? z[n] / norm[n] : 0.0;
  return z;
}

/// Plain ISTFT: inverse FFT, synthesis window, overlap-add. No normalisation,
/// so it only inverts `stft` when the window pair satisfies the
/// constant-overlap-add condition.
inline std::vector<double> istft_overlap_add(const ComplexGrid& s, const StftConfig& cfg,
                                             std::size_t length) {
  detail::check_grid(s, cfg, length);
  const auto len = static_cast<std::ptrdiff_t>(length);
  std::vector<double> z(length, 0.0);
  RealFft fft(cfg.fft_size);
  std::vector<double> frame(cfg.fft_size);
  for (std::size_t m = 0; m < s.rows(); ++m) {
    fft.inverse(s.row(m), frame);
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      if (n >= 0 && n < len) z[static_cast<std::size_t>(n)] += cfg.synthesis_window[t] * frame[t];
    }
  }
  return z;
}

/// Gradient of a scalar loss w.r.t. the spectrogram fed to istft_gl, given
/// its gradient w.r.t. the output samples. Complex entries hold
/// dL/dRe + i dL/dIm.
inline ComplexGrid istft_gl_adjoint(std::span<const double> grad_z, const StftConfig& cfg,
                                    std::size_t frames) {
  const std::size_t length = grad_z.size();
  const auto len = static_cast<std::ptrdiff_t>(length);
  const auto norm = detail::squared_window_sum(cfg, frames, length);
  ComplexGrid out(frames, cfg.bins());
  RealFft fft(cfg.fft_size);
  std::vector<double> h(cfg.fft_size);
  const double inv_n = 1.0 / static_cast<double>(cfg.fft_size);
  for (std::size_t m = 0; m < frames; ++m) {
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      h[t] = 0.0;
      if (n >= 0 && n < len) {
        const auto i = static_cast<std::size_t>(n);
        if (norm[i] > StftConfig::kNormFloor) h[t] = cfg.window[t] * grad_z[i] / norm[i];
      }
    }
    auto row = out.row(m);
    fft.forward(h, row);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= bin_weight(k, row.size()) * inv_n;
    row.front() = row.front().real();
    row.back() = row.back().real();
  }
  return out;
}

/// Gradient w.r.t. the input samples of `stft`, given the complex gradient of
/// every one-sided bin.
inline std::vector<double> stft_adjoint(const ComplexGrid& grad, const StftConfig& cfg,
                                        std::size_t length) {
  const auto len = static_cast<std::ptrdiff_t>(length);
  std::vector<double> out(length, 0.0);
  RealFft fft(cfg.fft_size);
  std::vector<double> frame(cfg.fft_size);
  for (std::size_t m = 0; m < grad.rows(); ++m) {
    fft.forward_adjoint(grad.row(m), frame);
    const std::ptrdiff_t start = cfg.frame_start(m);
    for (std::size_t t = 0; t < cfg.fft_size; ++t) {
      const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(t);
      if (n >= 0 && n < len) out[static_cast<std::size_t>(n)] += cfg.window[t] * frame[t];
    }
  }
  return out;
}

/// Two-sided sum of |target - STFT(z)|^2; interior bins count twice.
inline MismatchReport spectrum_mismatch(const ComplexGrid& target, std::span<const double> z,
                                        const StftConfig& cfg) {
  const ComplexGrid actual = stft(z, cfg);
  require_same_shape(target, actual, "target spectrogram does not match the signal's frames");
  MismatchReport report;
  for (std::size_t m = 0; m < target.rows(); ++m)
    for (std::size_t k = 0; k < target.cols(); ++k)
      report.objective += bin_weight(k, target.cols()) * std::norm(target(m, k) - actual(m, k));
  return report;
}

/// Two-sided sum of (|target| - |STFT(z)|)^2.
inline double magnitude_mismatch(const RealGrid& magnitude, const ComplexGrid& actual) {
  require_same_shape(magnitude, actual, "magnitude grid does not match the signal's frames");
  double sum = 0.0;
  for (std::size_t m = 0; m < magnitude.rows(); ++m)
    for (std::size_t k = 0; k < magnitude.cols(); ++k) {
      const double d = magnitude(m, k) - std::abs(actual(m, k));
      sum += bin_weight(k, magnitude.cols()) * d * d;
    }
  return sum;
}

inline ComplexGrid polar_grid(const RealGrid& magnitude, const RealGrid& phase) {
  require_same_shape(magnitude, phase, "magnitude and phase grids differ in shape");
  ComplexGrid out(magnitude.rows(), magnitude.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(magnitude[i], phase[i]);
  return out;
}

/// Iterative Griffin-Lim. Iteration 1 is the closed-form reconstruction of
/// magnitude * e^{i init_phase}; each later iteration keeps the magnitude and
/// takes the phase of the previous reconstruction's STFT.
inline GriffinLimResult griffin_lim_iterate(const RealGrid& magnitude, const RealGrid& init_phase,
                                            const StftConfig& cfg, std::size_t iterations,
                                            std::size_t length) {
  if (iterations < 1) fail(ErrorKind::kBadArgument, "iterations must be at least 1");
  GriffinLimResult result;
  ComplexGrid target = polar_grid(magnitude, init_phase);
  for (std::size_t i = 0; i < iterations; ++i) {
    result.signal = istft_gl(target, cfg, length);
    const ComplexGrid actual = stft(result.signal, cfg);
    result.report.per_iteration.push_back(magnitude_mismatch(magnitude, actual));
    for (std::size_t j = 0; j < target.size(); ++j)
      target[j] = magnitude[j] * unit_phasor(actual[j]);
  }
  result.report.objective = result.report.per_iteration.back();
  return result;
}

}  // namespace sdrpesq
