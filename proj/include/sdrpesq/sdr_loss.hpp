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
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "sdrpesq/audio_io.hpp"
#include "sdrpesq/error.hpp"
#include "sdrpesq/masks.hpp"

namespace sdrpesq {

/// Batch aggregation clamps per-utterance SI-SDR to +-60 dB.
inline constexpr double kSdrClampDb = 60.0;

/// Projection of an estimate onto the clean and noise signals. The three
/// components sum to the estimate.
struct SdrDecomposition {
  std::vector<double> x_target;
  std::vector<double> e_noise;
  std::vector<double> e_artif;
  double alpha = 0.0;       // x . xhat / |x|^2
  double noise_coef = 0.0;  // n . xhat / |n|^2
};

inline SdrDecomposition sdr_decompose(std::span<const double> clean, std::span<const double> noise,
                                      std::span<const double> estimate) {
  if (clean.size() != estimate.size() || noise.size() != estimate.size())
    fail(ErrorKind::kShapeMismatch, "sdr_decompose: length mismatch");
  const double clean_energy = energy(clean);
  const double noise_energy = energy(noise);
  if (clean_energy <= 0.0) fail(ErrorKind::kDegenerateSignal, "zero-energy reference");
  if (noise_energy <= 0.0) fail(ErrorKind::kDegenerateSignal, "zero-energy noise");

  SdrDecomposition d;
  d.alpha = dot(clean, estimate) / clean_energy;
  d.noise_coef = dot(noise, estimate) / noise_energy;
  const std::size_t n = estimate.size();
  d.x_target.resize(n);
  d.e_noise.resize(n);
  d.e_artif.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.x_target[i] = d.alpha * clean[i];
    d.e_noise[i] = d.noise_coef * noise[i];
    d.e_artif[i] = estimate[i] - d.x_target[i] - d.e_noise[i];
  }
  return d;
}

/// Vincent SDR from a decomposition: |x_target|^2 / |e_noise + e_artif|^2 in dB.
inline double sdr_from_decomposition(const SdrDecomposition& d) {
  double target = 0.0, distortion = 0.0;
  for (std::size_t i = 0; i < d.x_target.size(); ++i) {
    target += d.x_target[i] * d.x_target[i];
    const double e = d.e_noise[i] + d.e_artif[i];
    distortion += e * e;
  }
  return 10.0 * std::log10(target / distortion);
}

struct SiSdrResult {
  double value_db = 0.0;
  double alpha = 0.0;
  std::vector<double> gradient;  // d value_db / d estimate; zero at the sentinels
};

/// Scale-invariant SDR, 10 log10(|a x|^2 / |a x - xhat|^2) with a = x.xhat/|x|^2.
/// Returns +inf when the estimate is exactly proportional to the clean signal
/// and -inf when it has no component along it.
inline SiSdrResult si_sdr_with_gradient(std::span<const double> clean,
                                        std::span<const double> estimate, bool want_gradient) {
  if (clean.size() != estimate.size()) fail(ErrorKind::kShapeMismatch, "si_sdr: length mismatch");
  const double clean_energy = energy(clean);
  if (clean_energy <= 0.0) fail(ErrorKind::kDegenerateSignal, "zero-energy reference");

  SiSdrResult r;
  const double p = dot(clean, estimate);
  r.alpha = p / clean_energy;
  double residual = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double e = estimate[i] - r.alpha * clean[i];
    residual += e * e;
  }
  if (want_gradient) r.gradient.assign(clean.size(), 0.0);
  if (p == 0.0) {
    r.value_db = -std::numeric_limits<double>::infinity();
    return r;
  }
  if (residual == 0.0) {
    r.value_db = std::numeric_limits<double>::infinity();
    return r;
  }
  r.value_db = 10.0 * std::log10(r.alpha * r.alpha * clean_energy / residual);
  if (want_gradient) {
    // d/dxhat = (20 / ln 10) (x / p - (xhat - a x) / |xhat - a x|^2)
    const double c = 20.0 / std::numbers::ln10;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double e = estimate[i] - r.alpha * clean[i];
      r.gradient[i] = c * (clean[i] / p - e / residual);
    }
  }
  return r;
}

inline double si_sdr(std::span<const double> clean, std::span<const double> estimate) {
  return si_sdr_with_gradient(clean, estimate, false).value_db;
}

inline double clamp_sdr(double db) { return std::clamp(db, -kSdrClampDb, kSdrClampDb); }

/// Plain SNR with unit scale, 10 log10(|x|^2 / |x - xhat|^2).
inline double plain_snr_db(std::span<const double> clean, std::span<const double> estimate) {
  double err = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double e = clean[i] - estimate[i];
    err += e * e;
  }
  return 10.0 * std::log10(energy(clean) / err);
}

struct SignalPair {
  std::span<const double> clean;
  std::span<const double> estimate;
};

/// Mini-batch mean of clamped SI-SDR. Larger is better.
inline double sdr_loss(std::span<const SignalPair> batch) {
  if (batch.empty()) fail(ErrorKind::kBadArgument, "sdr_loss: empty batch");
  double sum = 0.0;
  for (const auto& pair : batch) sum += clamp_sdr(si_sdr(pair.clean, pair.estimate));
  return sum / static_cast<double>(batch.size());
}

/// sum (x - xhat)^2
inline double snr_mse_loss(std::span<const double> clean, std::span<const double> estimate) {
  if (clean.size() != estimate.size()) fail(ErrorKind::kShapeMismatch, "snr_mse_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double e = clean[i] - estimate[i];
    s += e * e;
  }
  return s;
}

/// sum (M |Y| - |X|)^2, the magnitude-spectrum term of the joint SDR-MSE loss.
inline double spectrum_mse(const MaskGrid& mask, const RealGrid& noisy_mag, const RealGrid& clean_mag) {
  return d2(mask, clean_mag, noisy_mag);
}

}  // namespace sdrpesq
