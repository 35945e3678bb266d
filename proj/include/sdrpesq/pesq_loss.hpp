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

// Differentiable PESQ-style quality score.
//
// Pipeline per utterance, on power spectrograms of the clean and estimated
// signals: level alignment -> Bark spectrum -> frequency equalisation of the
// clean side and per-frame gain equalisation of the estimate -> Zwicker
// loudness -> dead-zoned loudness difference -> symmetric and asymmetric
// frame disturbances -> L6 over 20-frame windows, L2 over windows ->
// 4.5 - 0.1 d_sym - 0.0309 d_asym.
//
// Compared with the full standard there is no IIR input filter, no delay
// search and no bad-interval reprocessing; inputs must be time-aligned.
//
// Every stage has a hand-written reverse pass (pesq_backward). Clips,
// max/min and the loudness floor take one-sided subgradients; silence masks
// are treated as constants.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdrpesq/bark_table.hpp"
#include "sdrpesq/error.hpp"
#include "sdrpesq/grid.hpp"
#include "sdrpesq/loss_report.hpp"
#include "sdrpesq/spectral.hpp"

namespace sdrpesq {

struct PesqConfig {
  int sample_rate = 16000;
  double target_power = 1e7;
  double iir_gain = 2.47;  // folded into the alignment target as a power gain
  double band_low_hz = 300.0;
  double band_high_hz = 3000.0;
  double c1 = 1000.0;
  double c2 = 5000.0;
  double eq_ratio_min = 0.01;
  double eq_ratio_max = 100.0;
  double gain_min = 3e-4;
  double gain_max = 5.0;
  double smoothing_prev = 0.2;
  double smoothing_curr = 0.8;
  double dead_zone_factor = 0.25;
  double asym_exponent = 1.2;
  double asym_offset = 50.0;
  double asym_clip_high = 12.0;
  double asym_clip_low = 3.0;
  std::size_t window_len = 20;
  std::size_t window_step = 10;
  double score_base = 4.5;
  double sym_weight = 0.1;
  double asym_weight = 0.0309;

  double aligned_power() const noexcept { return target_power * iir_gain * iir_gain; }

  void validate() const {
    for (double v : {target_power, iir_gain, c1, c2, eq_ratio_min, gain_min, asym_exponent,
                     asym_offset, asym_clip_low})
      if (!(v > 0.0)) fail(ErrorKind::kBadArgument, "pesq constants must be positive");
    if (sample_rate <= 0) fail(ErrorKind::kBadArgument, "sample rate must be positive");
    if (!(band_low_hz < band_high_hz)) fail(ErrorKind::kBadArgument, "alignment band is empty");
    if (eq_ratio_min > eq_ratio_max || gain_min > gain_max || asym_clip_low > asym_clip_high)
      fail(ErrorKind::kBadArgument, "clip ranges must be ordered");
    if (window_len == 0 || window_step == 0 || window_step > window_len)
      fail(ErrorKind::kBadArgument, "window_step must be in [1, window_len]");
    if (dead_zone_factor < 0.0 || smoothing_prev < 0.0 || smoothing_curr < 0.0)
      fail(ErrorKind::kBadArgument, "pesq weights must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"sample_rate", sample_rate},     {"target_power", target_power},
            {"iir_gain", iir_gain},           {"band_low_hz", band_low_hz},
            {"band_high_hz", band_high_hz},   {"c1", c1},
            {"c2", c2},                       {"eq_ratio_min", eq_ratio_min},
            {"eq_ratio_max", eq_ratio_max},   {"gain_min", gain_min},
            {"gain_max", gain_max},           {"smoothing_prev", smoothing_prev},
            {"smoothing_curr", smoothing_curr}, {"dead_zone_factor", dead_zone_factor},
            {"asym_exponent", asym_exponent}, {"asym_offset", asym_offset},
            {"asym_clip_high", asym_clip_high}, {"asym_clip_low", asym_clip_low},
            {"window_len", window_len},       {"window_step", window_step},
            {"score_base", score_base},       {"sym_weight", sym_weight},
            {"asym_weight", asym_weight}};
  }

  /// Overrides the fields present in `j`; unknown keys are rejected.
  void update_from_json(const nlohmann::json& j) {
    const nlohmann::json current = to_json();
    for (const auto& [key, value] : j.items())
      if (!current.contains(key)) fail(ErrorKind::kBadArgument, "unknown pesq config key: " + key);
    auto set = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    set("sample_rate", sample_rate);
    set("target_power", target_power);
    set("iir_gain", iir_gain);
    set("band_low_hz", band_low_hz);
    set("band_high_hz", band_high_hz);
    set("c1", c1);
    set("c2", c2);
    set("eq_ratio_min", eq_ratio_min);
    set("eq_ratio_max", eq_ratio_max);
    set("gain_min", gain_min);
    set("gain_max", gain_max);
    set("smoothing_prev", smoothing_prev);
    set("smoothing_curr", smoothing_curr);
    set("dead_zone_factor", dead_zone_factor);
    set("asym_exponent", asym_exponent);
    set("asym_offset", asym_offset);
    set("asym_clip_high", asym_clip_high);
    set("asym_clip_low", asym_clip_low);
    set("window_len", window_len);
    set("window_step", window_step);
    set("score_base", score_base);
    set("sym_weight", sym_weight);
    set("asym_weight", asym_weight);
    validate();
  }
};

// ---------------------------------------------------------------------------
// Level alignment

struct AlignedPower {
  RealGrid power;
  double gain = 1.0;        // applied scale factor
  double band_mean = 0.0;   // mean input power over the alignment band
  std::size_t band_first = 0;
  std::size_t band_last = 0;  // inclusive
};

inline AlignedPower level_align_detail(const RealGrid& power, const PesqConfig& cfg) {
  if (power.cols() < 2 || power.rows() == 0) fail(ErrorKind::kShapeMismatch, "empty power spectrogram");
  const double fft_size = 2.0 * double(power.cols() - 1);
  const double bin_hz = double(cfg.sample_rate) / fft_size;
  AlignedPower out;
  out.band_first = static_cast<std::size_t>(std::ceil(cfg.band_low_hz / bin_hz));
  out.band_last = std::min(power.cols() - 1,
                           static_cast<std::size_t>(std::floor(cfg.band_high_hz / bin_hz)));
  if (out.band_first > out.band_last) fail(ErrorKind::kBadArgument, "alignment band holds no bins");
  double sum = 0.0;
  for (std::size_t m = 0; m < power.rows(); ++m)
    for (std::size_t k = out.band_first; k <= out.band_last; ++k) sum += power(m, k);
  out.band_mean = sum / double(power.rows() * (out.band_last - out.band_first + 1));
  if (!(out.band_mean > 0.0)) fail(ErrorKind::kDegenerateSignal, "silent input: no power in 300-3000 Hz");
  out.gain = cfg.aligned_power() / out.band_mean;
  out.power = power;
  for (double& v : out.power) v *= out.gain;
  return out;
}

/// Scales a power spectrogram so its mean 300-3000 Hz bin power equals
/// target_power * iir_gain^2.
inline RealGrid level_align(const RealGrid& power, const PesqConfig& cfg) {
  return level_align_detail(power, cfg).power;
}

// ---------------------------------------------------------------------------
// Bark spectrum

struct BarkSpectrogram {
  RealGrid power;                   // frames x bands
  Grid<unsigned char> silence_mask; // 1 where the band power exceeds its threshold
};

inline BarkSpectrogram bark_spectrum(const RealGrid& power, const BarkTable& table) {
  table.validate(power.cols());
  const std::size_t bands = table.bands();
  BarkSpectrogram out{RealGrid(power.rows(), bands), Grid<unsigned char>(power.rows(), bands)};
  for (std::size_t m = 0; m < power.rows(); ++m)
    for (std::size_t i = 0; i < bands; ++i) {
      double s = 0.0;
      for (std::size_t k = table.band_edges[i]; k < table.band_edges[i + 1]; ++k) s += power(m, k);
      const double b = s / double(table.band_width(i));
      out.power(m, i) = b;
      out.silence_mask(m, i) = b > table.silence_threshold[i] ? 1 : 0;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Time-frequency equalisation

struct Equalization {
  BarkSpectrogram eq_clean;
  BarkSpectrogram eq_noisy;
  std::vector<double> clean_avg;   // P_c,i, silence-masked band averages
  std::vector<double> noisy_avg;   // P_n,i
  std::vector<double> ratio_raw;   // (P_n + c1) / (P_c + c1)
  std::vector<double> ratio;       // clipped
  std::vector<double> clean_gain;  // G_c,m, summed equalised clean bands
  std::vector<double> noisy_gain;  // G_n,m, summed noisy bands
  std::vector<double> frame_gain_raw;
  std::vector<double> frame_gain;  // clipped
  std::vector<double> frame_gain_smoothed;
};

inline Equalization tf_equalize(const BarkSpectrogram& clean, const BarkSpectrogram& noisy,
                                const PesqConfig& cfg) {
  require_same_shape(clean.power, noisy.power, "tf_equalize: dimension mismatch");
  const std::size_t frames = clean.power.rows();
  const std::size_t bands = clean.power.cols();
  if (frames == 0) fail(ErrorKind::kShapeMismatch, "tf_equalize: no frames");

  Equalization eq;
  eq.clean_avg.assign(bands, 0.0);
  eq.noisy_avg.assign(bands, 0.0);
  for (std::size_t m = 0; m < frames; ++m)
    for (std::size_t i = 0; i < bands; ++i) {
      if (clean.silence_mask(m, i)) eq.clean_avg[i] += clean.power(m, i);
      if (noisy.silence_mask(m, i)) eq.noisy_avg[i] += noisy.power(m, i);
    }
  for (std::size_t i = 0; i < bands; ++i) {
    eq.clean_avg[i] /= double(frames);
    eq.noisy_avg[i] /= double(frames);
    eq.ratio_raw.push_back((eq.noisy_avg[i] + cfg.c1) / (eq.clean_avg[i] + cfg.c1));
    eq.ratio.push_back(std::clamp(eq.ratio_raw[i], cfg.eq_ratio_min, cfg.eq_ratio_max));
  }

  eq.eq_clean = clean;
  eq.eq_noisy = noisy;
  for (std::size_t m = 0; m < frames; ++m) {
    double gc = 0.0, gn = 0.0;
    for (std::size_t i = 0; i < bands; ++i) {
      eq.eq_clean.power(m, i) = eq.ratio[i] * clean.power(m, i);
      gc += eq.eq_clean.power(m, i);
      gn += noisy.power(m, i);
    }
    eq.clean_gain.push_back(gc);
    eq.noisy_gain.push_back(gn);
    const double raw = (gc + cfg.c2) / (gn + cfg.c2);
    eq.frame_gain_raw.push_back(raw);
    eq.frame_gain.push_back(std::clamp(raw, cfg.gain_min, cfg.gain_max));
    eq.frame_gain_smoothed.push_back(
        m == 0 ? eq.frame_gain[0]
               : cfg.smoothing_prev * eq.frame_gain_smoothed[m - 1] + cfg.smoothing_curr * eq.frame_gain[m]);
    for (std::size_t i = 0; i < bands; ++i)
      eq.eq_noisy.power(m, i) = eq.frame_gain_smoothed[m] * noisy.power(m, i);
  }
  return eq;
}

// ---------------------------------------------------------------------------
// Loudness and disturbances

using LoudnessGrid = RealGrid;

namespace detail {

inline double loudness_raw(double e, double threshold, double scale, double gamma) {
  return scale * std::pow(threshold / 0.5, gamma) *
         (std::pow(0.5 + 0.5 * e / threshold, gamma) - 1.0);
}

inline double loudness_slope(double e, double threshold, double scale, double gamma) {
  return scale * std::pow(threshold / 0.5, gamma) * gamma *
         std::pow(0.5 + 0.5 * e / threshold, gamma - 1.0) * 0.5 / threshold;
}

}  // namespace detail

/// Zwicker loudness S_i (P0/0.5)^g [(0.5 + 0.5 E/P0)^g - 1], floored at zero
/// below the hearing threshold.
inline LoudnessGrid loudness(const RealGrid& eq_power, const BarkTable& table) {
  if (eq_power.cols() != table.bands()) fail(ErrorKind::kShapeMismatch, "loudness: band count mismatch");
  LoudnessGrid out(eq_power.rows(), eq_power.cols());
  for (std::size_t m = 0; m < eq_power.rows(); ++m)
    for (std::size_t i = 0; i < eq_power.cols(); ++i)
      out(m, i) = std::max(0.0, detail::loudness_raw(eq_power(m, i), table.abs_threshold[i],
                                                     table.loudness_scale[i], table.zwicker_power));
  return out;
}

inline double dead_zoned_difference(double lc, double ln, double factor) {
  const double dz = factor * std::min(lc, ln);
  const double diff = lc - ln;
  return std::max(diff - dz, 0.0) + std::min(diff + dz, 0.0);
}

/// D = max(Lc - Ln - DZ, 0) + min(Lc - Ln + DZ, 0), DZ = 0.25 min(Lc, Ln).
inline RealGrid raw_disturbance(const LoudnessGrid& lc, const LoudnessGrid& ln, const PesqConfig& cfg) {
  require_same_shape(lc, ln, "raw_disturbance: dimension mismatch");
  RealGrid d(lc.rows(), lc.cols());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = dead_zoned_difference(lc[j], ln[j], cfg.dead_zone_factor);
  return d;
}

/// ((Bn + 50) / (Bc + 50))^1.2, set to 12 above 12 and to 0 below 3.
inline double asymmetry_factor(double bark_noisy, double bark_clean, const PesqConfig& cfg) {
  const double h = std::pow((bark_noisy + cfg.asym_offset) / (bark_clean + cfg.asym_offset), cfg.asym_exponent);
  if (h > cfg.asym_clip_high) return cfg.asym_clip_high;
  if (h < cfg.asym_clip_low) return 0.0;
  return h;
}

struct DisturbanceSeries {
  std::vector<double> sym;   // FD_m
  std::vector<double> asym;  // AFD_m
  RealGrid raw;              // D
  RealGrid asym_factor;      // h
};

namespace detail {

// sum(w) * sqrt(sum_i (W_i x_i)^2 / sum(w))
inline double weighted_frame_norm(std::span<const double> x, const BarkTable& table) {
  double total = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += table.band_weights[i];
    const double v = table.band_norm_weights[i] * x[i];
    acc += v * v;
  }
  return total * std::sqrt(acc / total);
}

}  // namespace detail

/// Symmetric and asymmetric frame disturbances. `bark_clean` and
/// `bark_noisy` are the level-aligned Bark powers before equalisation.
inline DisturbanceSeries frame_disturbances(const RealGrid& raw, const RealGrid& bark_clean,
                                            const RealGrid& bark_noisy, const BarkTable& table,
                                            const PesqConfig& cfg) {
  require_same_shape(raw, bark_clean, "frame_disturbances: dimension mismatch");
  require_same_shape(raw, bark_noisy, "frame_disturbances: dimension mismatch");
  if (raw.cols() != table.bands()) fail(ErrorKind::kShapeMismatch, "frame_disturbances: band count mismatch");
  DisturbanceSeries s{{}, {}, raw, RealGrid(raw.rows(), raw.cols())};
  std::vector<double> scaled(raw.cols());
  for (std::size_t m = 0; m < raw.rows(); ++m) {
    for (std::size_t i = 0; i < raw.cols(); ++i) {
      s.asym_factor(m, i) = asymmetry_factor(bark_noisy(m, i), bark_clean(m, i), cfg);
      scaled[i] = raw(m, i) * s.asym_factor(m, i);
    }
    s.sym.push_back(detail::weighted_frame_norm(raw.row(m), table));
    s.asym.push_back(detail::weighted_frame_norm(scaled, table));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Aggregation

struct FrameWindow {
  std::size_t first = 0;
  std::size_t count = 0;
};

/// floor(M / step) windows of up to `window_len` frames (at least one); the
/// last window is cut at the final frame.
inline std::vector<FrameWindow> aggregation_windows(std::size_t frames, const PesqConfig& cfg) {
  const std::size_t n = std::max<std::size_t>(1, frames / cfg.window_step);
  std::vector<FrameWindow> out;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t first = s * cfg.window_step;
    out.push_back({first, std::min(first + cfg.window_len, frames) - first});
  }
  return out;
}

/// L6 mean within windows, then L2 mean across windows.
inline double two_stage_average(std::span<const double> per_frame, const PesqConfig& cfg) {
  if (per_frame.empty()) fail(ErrorKind::kShapeMismatch, "aggregate: no frames");
  const auto windows = aggregation_windows(per_frame.size(), cfg);
  double acc = 0.0;
  for (const auto& w : windows) {
    double p6 = 0.0;
    for (std::size_t j = 0; j < w.count; ++j) p6 += std::pow(per_frame[w.first + j], 6.0);
    const double q = std::pow(p6 / double(w.count), 1.0 / 6.0);
    acc += q * q;
  }
  return std::sqrt(acc / double(windows.size()));
}

struct AggregateResult {
  double d_sym = 0.0;
  double d_asym = 0.0;
  double score = 0.0;
};

/// Batch score: d_sym and d_asym are averaged over utterances.
inline AggregateResult aggregate(std::span<const DisturbanceSeries> batch, const PesqConfig& cfg) {
  if (batch.empty()) fail(ErrorKind::kBadArgument, "aggregate: empty batch");
  AggregateResult r;
  for (const auto& s : batch) {
    r.d_sym += two_stage_average(s.sym, cfg);
    r.d_asym += two_stage_average(s.asym, cfg);
  }
  r.d_sym /= double(batch.size());
  r.d_asym /= double(batch.size());
  r.score = cfg.score_base - cfg.sym_weight * r.d_sym - cfg.asym_weight * r.d_asym;
  return r;
}

// ---------------------------------------------------------------------------
// Full pipeline with a reverse pass

/// Every intermediate of one utterance's forward pass.
struct PesqTrace {
  AlignedPower aligned_clean;
  AlignedPower aligned_noisy;
  BarkSpectrogram bark_clean;
  BarkSpectrogram bark_noisy;
  Equalization eq;
  LoudnessGrid loud_clean;
  LoudnessGrid loud_noisy;
  DisturbanceSeries disturbance;
  AggregateResult result;
  std::uint64_t branch_signature = 0;
};

/// Forward pass on power spectrograms (frames x bins) of the clean and
/// estimated signals.
inline PesqTrace pesq_trace(const RealGrid& clean_power, const RealGrid& noisy_power,
                            const PesqConfig& cfg, const BarkTable& table) {
  cfg.validate();
  require_same_shape(clean_power, noisy_power, "pesq: dimension mismatch");
  PesqTrace t;
  t.aligned_clean = level_align_detail(clean_power, cfg);
  t.aligned_noisy = level_align_detail(noisy_power, cfg);
  t.bark_clean = bark_spectrum(t.aligned_clean.power, table);
  t.bark_noisy = bark_spectrum(t.aligned_noisy.power, table);
  t.eq = tf_equalize(t.bark_clean, t.bark_noisy, cfg);
  t.loud_clean = loudness(t.eq.eq_clean.power, table);
  t.loud_noisy = loudness(t.eq.eq_noisy.power, table);
  const RealGrid raw = raw_disturbance(t.loud_clean, t.loud_noisy, cfg);
  t.disturbance = frame_disturbances(raw, t.bark_clean.power, t.bark_noisy.power, table, cfg);
  t.result = aggregate(std::span<const DisturbanceSeries>(&t.disturbance, 1), cfg);

  BranchSignature sig;
  auto three_way = [](double v, double lo, double hi) -> std::uint64_t { return v < lo ? 0 : (v > hi ? 2 : 1); };
  for (std::size_t j = 0; j < t.bark_clean.silence_mask.size(); ++j)
    sig.add(t.bark_clean.silence_mask[j] | (t.bark_noisy.silence_mask[j] << 1));
  for (double r : t.eq.ratio_raw) sig.add(three_way(r, cfg.eq_ratio_min, cfg.eq_ratio_max));
  for (double g : t.eq.frame_gain_raw) sig.add(three_way(g, cfg.gain_min, cfg.gain_max));
  const std::size_t bands = table.bands();
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const std::size_t i = j % bands;
    const double p0 = table.abs_threshold[i];
    const double ec = t.eq.eq_clean.power[j], en = t.eq.eq_noisy.power[j];
    const double lc = t.loud_clean[j], ln = t.loud_noisy[j];
    const double dz = cfg.dead_zone_factor * std::min(lc, ln);
    const double diff = lc - ln;
    const std::uint64_t dz_case = diff - dz > 0 ? 1 : (diff + dz < 0 ? 2 : 0);
    const double h = std::pow((t.bark_noisy.power[j] + cfg.asym_offset) / (t.bark_clean.power[j] + cfg.asym_offset),
                              cfg.asym_exponent);
    sig.add((ec >= p0 ? 1u : 0u) | (en >= p0 ? 2u : 0u) | (lc < ln ? 4u : 0u) | (dz_case << 3) |
            (three_way(h, cfg.asym_clip_low, cfg.asym_clip_high) << 5));
  }
  for (std::size_t m = 0; m < t.disturbance.sym.size(); ++m)
    sig.add((t.disturbance.sym[m] > 0 ? 1u : 0u) | (t.disturbance.asym[m] > 0 ? 2u : 0u));
  t.branch_signature = sig.value();
  return t;
}

namespace detail {

// d two_stage_average / d per_frame.
inline std::vector<double> two_stage_average_grad(std::span<const double> per_frame, const PesqConfig& cfg) {
  std::vector<double> grad(per_frame.size(), 0.0);
  const auto windows = aggregation_windows(per_frame.size(), cfg);
  std::vector<double> q(windows.size());
  double acc = 0.0;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    double p6 = 0.0;
    for (std::size_t j = 0; j < windows[s].count; ++j) p6 += std::pow(per_frame[windows[s].first + j], 6.0);
    q[s] = std::pow(p6 / double(windows[s].count), 1.0 / 6.0);
    acc += q[s] * q[s];
  }
  const double d = std::sqrt(acc / double(windows.size()));
  if (d == 0.0) return grad;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    if (q[s] == 0.0) continue;
    const double dq = q[s] / (double(windows.size()) * d);
    const double q5 = std::pow(q[s], 5.0);
    for (std::size_t j = 0; j < windows[s].count; ++j) {
      const double f = per_frame[windows[s].first + j];
      grad[windows[s].first + j] += dq * std::pow(f, 5.0) / (double(windows[s].count) * q5);
    }
  }
  return grad;
}

}  // namespace detail

/// d score / d (estimate power spectrogram), given a trace of the forward pass.
inline RealGrid pesq_backward(const PesqTrace& t, const PesqConfig& cfg, const BarkTable& table,
                              double upstream = 1.0) {
  const std::size_t frames = t.bark_clean.power.rows();
  const std::size_t bands = table.bands();
  const DisturbanceSeries& ds = t.disturbance;

  // Aggregation.
  const auto g_fd = detail::two_stage_average_grad(ds.sym, cfg);
  const auto g_afd = detail::two_stage_average_grad(ds.asym, cfg);

  // Frame disturbances -> raw disturbance and asymmetry factor.
  RealGrid g_d(frames, bands), g_h(frames, bands);
  double total_w = 0.0;
  for (double w : table.band_weights) total_w += w;
  for (std::size_t m = 0; m < frames; ++m) {
    const double us = -cfg.sym_weight * upstream * g_fd[m];
    const double ua = -cfg.asym_weight * upstream * g_afd[m];
    double acc_s = 0.0, acc_a = 0.0;
    for (std::size_t i = 0; i < bands; ++i) {
      const double v = table.band_norm_weights[i] * ds.raw(m, i);
      const double va = v * ds.asym_factor(m, i);
      acc_s += v * v;
      acc_a += va * va;
    }
    // d FD / d D_i = W_i^2 D_i / sqrt(acc / total_w) * (1 / total_w) * total_w
    const double rs = acc_s > 0.0 ? std::sqrt(acc_s / total_w) : 0.0;
    const double ra = acc_a > 0.0 ? std::sqrt(acc_a / total_w) : 0.0;
    for (std::size_t i = 0; i < bands; ++i) {
      const double w2 = table.band_norm_weights[i] * table.band_norm_weights[i];
      const double d = ds.raw(m, i), h = ds.asym_factor(m, i);
      if (rs > 0.0) g_d(m, i) += us * w2 * d / rs;
      if (ra > 0.0) {
        g_d(m, i) += ua * w2 * d * h * h / ra;
        g_h(m, i) += ua * w2 * d * d * h / ra;
      }
    }
  }

  // Raw disturbance -> loudness; asymmetry factor -> noisy Bark power.
  RealGrid g_lc(frames, bands), g_ln(frames, bands), g_bn(frames, bands);
  for (std::size_t j = 0; j < g_d.size(); ++j) {
    const double lc = t.loud_clean[j], ln = t.loud_noisy[j];
    const double dz = cfg.dead_zone_factor * std::min(lc, ln);
    const double dz_lc = lc < ln ? cfg.dead_zone_factor : 0.0;
    const double dz_ln = lc < ln ? 0.0 : cfg.dead_zone_factor;
    const double diff = lc - ln;
    if (diff - dz > 0.0) {
      g_lc[j] = g_d[j] * (1.0 - dz_lc);
      g_ln[j] = g_d[j] * (-1.0 - dz_ln);
    } else if (diff + dz < 0.0) {
      g_lc[j] = g_d[j] * (1.0 + dz_lc);
      g_ln[j] = g_d[j] * (-1.0 + dz_ln);
    }
    const double bn = t.bark_noisy.power[j] + cfg.asym_offset;
    const double bc = t.bark_clean.power[j] + cfg.asym_offset;
    const double h = std::pow(bn / bc, cfg.asym_exponent);
    if (h >= cfg.asym_clip_low && h <= cfg.asym_clip_high) g_bn[j] += g_h[j] * cfg.asym_exponent * h / bn;
  }

  // Loudness -> equalised powers.
  RealGrid g_ec(frames, bands), g_en(frames, bands);
  for (std::size_t m = 0; m < frames; ++m)
    for (std::size_t i = 0; i < bands; ++i) {
      const double p0 = table.abs_threshold[i], s = table.loudness_scale[i], gamma = table.zwicker_power;
      const double ec = t.eq.eq_clean.power(m, i), en = t.eq.eq_noisy.power(m, i);
      if (ec >= p0) g_ec(m, i) = g_lc(m, i) * detail::loudness_slope(ec, p0, s, gamma);
      if (en >= p0) g_en(m, i) = g_ln(m, i) * detail::loudness_slope(en, p0, s, gamma);
    }

  // Per-frame gain: En = S~_m Bn, S~ smoothed from clipped (Gc + c2)/(Gn + c2).
  std::vector<double> g_smoothed(frames, 0.0), g_gain(frames, 0.0);
  for (std::size_t m = 0; m < frames; ++m)
    for (std::size_t i = 0; i < bands; ++i) {
      g_smoothed[m] += g_en(m, i) * t.bark_noisy.power(m, i);
      g_bn(m, i) += g_en(m, i) * t.eq.frame_gain_smoothed[m];
    }
  for (std::size_t m = frames; m-- > 1;) {
    g_gain[m] += cfg.smoothing_curr * g_smoothed[m];
    g_smoothed[m - 1] += cfg.smoothing_prev * g_smoothed[m];
  }
  g_gain[0] += g_smoothed[0];
  for (std::size_t m = 0; m < frames; ++m) {
    const double raw = t.eq.frame_gain_raw[m];
    if (raw < cfg.gain_min || raw > cfg.gain_max) continue;
    const double denom = t.eq.noisy_gain[m] + cfg.c2;
    const double g_gc = g_gain[m] / denom;
    const double g_gn = -g_gain[m] * raw / denom;
    for (std::size_t i = 0; i < bands; ++i) {
      g_ec(m, i) += g_gc;
      g_bn(m, i) += g_gn;
    }
  }

  // Frequency equalisation: Ec = clip((Pn + c1)/(Pc + c1)) Bc.
  for (std::size_t i = 0; i < bands; ++i) {
    const double raw = t.eq.ratio_raw[i];
    if (raw < cfg.eq_ratio_min || raw > cfg.eq_ratio_max) continue;
    double g_ratio = 0.0;
    for (std::size_t m = 0; m < frames; ++m) g_ratio += g_ec(m, i) * t.bark_clean.power(m, i);
    const double g_pn = g_ratio / (t.eq.clean_avg[i] + cfg.c1);
    for (std::size_t m = 0; m < frames; ++m)
      if (t.bark_noisy.silence_mask(m, i)) g_bn(m, i) += g_pn / double(frames);
  }

  // Bark averaging -> aligned power.
  const std::size_t bins = t.aligned_noisy.power.cols();
  RealGrid g_aligned(frames, bins);
  for (std::size_t m = 0; m < frames; ++m)
    for (std::size_t i = 0; i < bands; ++i) {
      const double g = g_bn(m, i) / double(table.band_width(i));
      for (std::size_t k = table.band_edges[i]; k < table.band_edges[i + 1]; ++k) g_aligned(m, k) = g;
    }

  // Level alignment: A = g P with g = target / mean_band(P).
  const AlignedPower& al = t.aligned_noisy;
  double cross = 0.0;
  for (std::size_t j = 0; j < g_aligned.size(); ++j) cross += g_aligned[j] * al.power[j];
  // al.power already carries the gain: sum gA_j g P_j = gain * sum gA_j P_j.
  const double band_bins = double(frames * (al.band_last - al.band_first + 1));
  const double band_term = cross / (al.band_mean * band_bins);
  RealGrid g_power(frames, bins);
  for (std::size_t m = 0; m < frames; ++m)
    for (std::size_t k = 0; k < bins; ++k) {
      g_power(m, k) = al.gain * g_aligned(m, k);
      if (k >= al.band_first && k <= al.band_last) g_power(m, k) -= band_term;
    }
  return g_power;
}

inline RealGrid power_spectrogram(const ComplexGrid& s) {
  RealGrid out(s.rows(), s.cols());
  for (std::size_t j = 0; j < s.size(); ++j) out[j] = std::norm(s[j]);
  return out;
}

struct PesqGradient {
  double score = 0.0;
  std::vector<double> gradient;  // d score / d estimate samples
  std::uint64_t branch_signature = 0;
};

/// Score and its gradient w.r.t. the estimated waveform.
inline PesqGradient pesq_score_and_gradient(std::span<const double> clean, std::span<const double> estimate,
                                            const StftConfig& stft_cfg, const PesqConfig& cfg,
                                            const BarkTable& table, bool want_gradient = true) {
  if (clean.size() != estimate.size()) fail(ErrorKind::kShapeMismatch, "pesq: length mismatch");
  const RealGrid pc = power_spectrogram(stft(clean, stft_cfg));
  const ComplexGrid z = stft(estimate, stft_cfg);
  const PesqTrace t = pesq_trace(pc, power_spectrogram(z), cfg, table);
  PesqGradient out{t.result.score, {}, t.branch_signature};
  if (want_gradient) {
    const RealGrid g_power = pesq_backward(t, cfg, table);
    ComplexGrid g_z(z.rows(), z.cols());
    for (std::size_t j = 0; j < z.size(); ++j) g_z[j] = 2.0 * g_power[j] * z[j];
    out.gradient = stft_adjoint(g_z, stft_cfg, estimate.size());
  }
  return out;
}

/// Full composition on time-aligned waveforms. Diagnostics carry d_sym,
/// d_asym and the frame count; use pesq_trace for the stage grids.
inline LossReport pesq_loss(std::span<const double> clean, std::span<const double> estimate,
                            const StftConfig& stft_cfg, const PesqConfig& cfg, const BarkTable& table) {
  if (clean.size() != estimate.size()) fail(ErrorKind::kShapeMismatch, "pesq: length mismatch");
  const PesqTrace t = pesq_trace(power_spectrogram(stft(clean, stft_cfg)),
                                 power_spectrogram(stft(estimate, stft_cfg)), cfg, table);
  LossReport r;
  r.value = t.result.score;
  r.branch_signature = t.branch_signature;
  r.diagnostics["d_sym"] = t.result.d_sym;
  r.diagnostics["d_asym"] = t.result.d_asym;
  r.diagnostics["frames"] = double(t.bark_clean.power.rows());
  r.diagnostics["align_gain_clean"] = t.aligned_clean.gain;
  r.diagnostics["align_gain_estimate"] = t.aligned_noisy.gain;
  return r;
}

}  // namespace sdrpesq
