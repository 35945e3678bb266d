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

#include <span>

#include "sdrpesq/bark_table.hpp"
#include "sdrpesq/pesq_loss.hpp"
#include "sdrpesq/sdr_loss.hpp"

namespace sdrpesq {

struct JointLossConfig {
  double pesq_weight = 1.0;  // weight of the PESQ or spectral-MSE term
  std::size_t batch_size = 1;

  void validate() const {
    if (!(pesq_weight >= 0.0)) fail(ErrorKind::kBadArgument, "pesq_weight must be non-negative");
  }
};

/// Everything the perceptual loss needs besides the signals.
struct PesqContext {
  StftConfig stft = StftConfig::for_rate(16000);
  PesqConfig pesq;
  BarkTable table = BarkTable::generate(16000, 512);
};

/// Batch PESQ loss: disturbances averaged over utterances, then combined.
inline double pesq_batch_score(std::span<const SignalPair> batch, const PesqContext& ctx) {
  if (batch.empty()) fail(ErrorKind::kBadArgument, "pesq: empty batch");
  std::vector<DisturbanceSeries> series;
  for (const auto& p : batch) {
    if (p.clean.size() != p.estimate.size()) fail(ErrorKind::kShapeMismatch, "pesq: length mismatch");
    series.push_back(pesq_trace(power_spectrogram(stft(p.clean, ctx.stft)),
                                power_spectrogram(stft(p.estimate, ctx.stft)), ctx.pesq, ctx.table)
                         .disturbance);
  }
  return aggregate(series, ctx.pesq).score;
}

/// L_SDR + w L_PESQ; both terms are maximised.
inline double joint_sdr_pesq(std::span<const SignalPair> batch, const JointLossConfig& cfg,
                             const PesqContext& ctx) {
  cfg.validate();
  const double sdr = sdr_loss(batch);
  if (cfg.pesq_weight == 0.0) return sdr;
  return sdr + cfg.pesq_weight * pesq_batch_score(batch, ctx);
}

struct MaskedPair {
  SignalPair signals;
  const MaskGrid* mask = nullptr;
  const RealGrid* noisy_mag = nullptr;
  const RealGrid* clean_mag = nullptr;
};

/// L_SDR - w * mean_u sum (M|Y| - |X|)^2. The spectral error is minimised,
/// so it enters with a negative sign to keep a single "larger is better"
/// orientation.
inline double joint_sdr_mse(std::span<const MaskedPair> batch, const JointLossConfig& cfg) {
  cfg.validate();
  if (batch.empty()) fail(ErrorKind::kBadArgument, "joint_sdr_mse: empty batch");
  std::vector<SignalPair> pairs;
  double mse = 0.0;
  for (const auto& item : batch) {
    pairs.push_back(item.signals);
    if (!item.mask || !item.noisy_mag || !item.clean_mag)
      fail(ErrorKind::kBadArgument, "joint_sdr_mse: mask and magnitudes required");
    mse += spectrum_mse(*item.mask, *item.noisy_mag, *item.clean_mag);
  }
  return sdr_loss(pairs) - cfg.pesq_weight * mse / double(batch.size());
}

}  // namespace sdrpesq
