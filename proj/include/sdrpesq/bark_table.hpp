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
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdrpesq/error.hpp"

namespace sdrpesq {

/// Critical-band rate in Bark (Zwicker and Terhardt).
inline double hz_to_bark(double hz) {
  return 13.0 * std::atan(0.00076 * hz) + 3.5 * std::atan((hz / 7500.0) * (hz / 7500.0));
}

inline double bark_to_hz(double bark) {
  double lo = 0.0, hi = 48000.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (hz_to_bark(mid) < bark ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Absolute threshold of hearing in dB SPL (Terhardt).
inline double hearing_threshold_db(double hz) {
  const double f = std::max(hz, 20.0) / 1000.0;
  return 3.64 * std::pow(f, -0.8) - 6.5 * std::exp(-0.6 * (f - 3.3) * (f - 3.3)) +
         1e-3 * std::pow(f, 4.0);
}

/// Parameters that produced a generated table, kept in the data file.
struct BarkTableRecipe {
  std::size_t bands = 49;
  double reference_power = 1e7 * 2.47 * 2.47;  // aligned mean 300-3000 Hz bin power
  double calibration_db = 60.0;                // dB SPL assigned to reference_power
  double reference_loudness = 1.0;             // sone at reference_power, well above threshold
  double silence_factor = 100.0;               // active when band power > factor * P_0
  double zwicker_power = 0.23;
};

/// Band layout and per-band psychoacoustic constants for one
/// (sample rate, fft size) pair.
struct BarkTable {
  int sample_rate = 16000;
  std::size_t fft_size = 512;
  std::vector<std::size_t> band_edges;   // bands + 1 linear-bin indices; band i = [I_i, I_{i+1})
  std::vector<double> band_weights;      // w_i, outer weights of the frame disturbance
  std::vector<double> band_norm_weights; // W_i, inner weights
  std::vector<double> abs_threshold;     // P_0,i
  std::vector<double> loudness_scale;    // S_i
  std::vector<double> silence_threshold; // band power above which the silence mask is 1
  std::vector<double> center_hz;
  double zwicker_power = 0.23;
  BarkTableRecipe recipe;

  std::size_t bands() const noexcept { return band_edges.empty() ? 0 : band_edges.size() - 1; }
  std::size_t band_width(std::size_t i) const { return band_edges[i + 1] - band_edges[i]; }

  void validate(std::size_t bins) const {
    const std::size_t b = bands();
    if (b == 0) fail(ErrorKind::kBadArgument, "bark table has no bands");
    for (std::size_t i = 0; i < b; ++i)
      if (band_edges[i + 1] <= band_edges[i])
        fail(ErrorKind::kBadArgument, "bark band edges must be strictly increasing");
    if (band_edges.back() > bins) fail(ErrorKind::kBadArgument, "bark band edge out of range");
    for (const auto* v : {&band_weights, &band_norm_weights, &abs_threshold, &loudness_scale,
                          &silence_threshold}) {
      if (v->size() != b) fail(ErrorKind::kBadArgument, "bark table column length mismatch");
      for (double x : *v)
        if (!(x > 0.0) || !std::isfinite(x))
          fail(ErrorKind::kBadArgument, "bark table weights and thresholds must be positive");
    }
    if (!(zwicker_power > 0.0)) fail(ErrorKind::kBadArgument, "zwicker power must be positive");
  }

  /// Splits the positive bins 1..fft_size/2 into `recipe.bands` bands of equal
  /// Bark width (at least one bin each). Thresholds follow Terhardt's curve at
  /// the band centre, expressed relative to the aligned reference power.
  static BarkTable generate(int sample_rate, std::size_t fft_size, BarkTableRecipe recipe = {}) {
    const std::size_t bins = fft_size / 2 + 1;
    const std::size_t positive = bins - 1;
    if (recipe.bands == 0 || recipe.bands > positive)
      fail(ErrorKind::kBadArgument, "bark band count exceeds the positive bin count");
    const double bin_hz = double(sample_rate) / double(fft_size);
    // Bin k spans [(k - 0.5), (k + 0.5)) * bin_hz.
    const double z_lo = hz_to_bark(0.5 * bin_hz);
    const double z_hi = hz_to_bark((double(positive) + 0.5) * bin_hz);

    BarkTable t;
    t.sample_rate = sample_rate;
    t.fft_size = fft_size;
    t.recipe = recipe;
    t.zwicker_power = recipe.zwicker_power;
    const std::size_t b = recipe.bands;
    t.band_edges.resize(b + 1);
    t.band_edges[0] = 1;
    t.band_edges[b] = bins;
    for (std::size_t i = 1; i < b; ++i) {
      const double z = z_lo + (z_hi - z_lo) * double(i) / double(b);
      t.band_edges[i] = static_cast<std::size_t>(std::lround(bark_to_hz(z) / bin_hz + 0.5));
    }
    for (std::size_t i = 1; i < b; ++i)
      t.band_edges[i] = std::max(t.band_edges[i], t.band_edges[i - 1] + 1);
    for (std::size_t i = b - 1; i >= 1; --i)
      t.band_edges[i] = std::min(t.band_edges[i], t.band_edges[i + 1] - 1);

    const double loudness_scale =
        recipe.reference_loudness / std::pow(recipe.reference_power, recipe.zwicker_power);
    for (std::size_t i = 0; i < b; ++i) {
      const double lo_hz = (double(t.band_edges[i]) - 0.5) * bin_hz;
      const double hi_hz = (double(t.band_edges[i + 1]) - 0.5) * bin_hz;
      const double centre = 0.5 * (double(t.band_edges[i]) + double(t.band_edges[i + 1]) - 1.0) * bin_hz;
      const double width_bark = hz_to_bark(hi_hz) - hz_to_bark(lo_hz);
      const double threshold = recipe.reference_power *
                               std::pow(10.0, (hearing_threshold_db(centre) - recipe.calibration_db) / 10.0);
      t.center_hz.push_back(centre);
      t.band_weights.push_back(width_bark);
      t.band_norm_weights.push_back(width_bark);
      t.abs_threshold.push_back(threshold);
      t.loudness_scale.push_back(loudness_scale);
      t.silence_threshold.push_back(recipe.silence_factor * threshold);
    }
    t.validate(bins);
    return t;
  }

  nlohmann::json to_json() const {
    return {
        {"schema", "sdrpesq.bark_table/1"},
        {"sample_rate", sample_rate},
        {"fft_size", fft_size},
        {"bands", bands()},
        {"zwicker_power", zwicker_power},
        {"recipe",
         {{"reference_power", recipe.reference_power},
          {"calibration_db", recipe.calibration_db},
          {"reference_loudness", recipe.reference_loudness},
          {"silence_factor", recipe.silence_factor}}},
        {"band_edges", band_edges},
        {"center_hz", center_hz},
        {"band_weights", band_weights},
        {"band_norm_weights", band_norm_weights},
        {"abs_threshold", abs_threshold},
        {"loudness_scale", loudness_scale},
        {"silence_threshold", silence_threshold},
    };
  }

  static BarkTable from_json(const nlohmann::json& j) {
    try {
      if (j.at("schema").get<std::string>() != "sdrpesq.bark_table/1")
        fail(ErrorKind::kBadArgument, "unsupported bark table schema");
      BarkTable t;
      t.sample_rate = j.at("sample_rate").get<int>();
      t.fft_size = j.at("fft_size").get<std::size_t>();
      t.zwicker_power = j.at("zwicker_power").get<double>();
      t.band_edges = j.at("band_edges").get<std::vector<std::size_t>>();
      t.band_weights = j.at("band_weights").get<std::vector<double>>();
      t.band_norm_weights = j.at("band_norm_weights").get<std::vector<double>>();
      t.abs_threshold = j.at("abs_threshold").get<std::vector<double>>();
      t.loudness_scale = j.at("loudness_scale").get<std::vector<double>>();
      t.silence_threshold = j.at("silence_threshold").get<std::vector<double>>();
      t.center_hz = j.value("center_hz", std::vector<double>{});
      if (j.contains("recipe")) {
        const auto& r = j.at("recipe");
        t.recipe.bands = t.bands();
        t.recipe.reference_power = r.value("reference_power", t.recipe.reference_power);
        t.recipe.calibration_db = r.value("calibration_db", t.recipe.calibration_db);
        t.recipe.reference_loudness = r.value("reference_loudness", t.recipe.reference_loudness);
        t.recipe.silence_factor = r.value("silence_factor", t.recipe.silence_factor);
        t.recipe.zwicker_power = t.zwicker_power;
      }
      if (j.at("bands").get<std::size_t>() != t.bands())
        fail(ErrorKind::kBadArgument, "bark table band count disagrees with its edges");
      t.validate(t.fft_size / 2 + 1);
      return t;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kBadArgument, std::string("malformed bark table: ") + e.what());
    }
  }

  static BarkTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::kMissingInput, "cannot open bark table: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kBadArgument, std::string("malformed bark table: ") + e.what());
    }
    return from_json(j);
  }
};

}  // namespace sdrpesq
