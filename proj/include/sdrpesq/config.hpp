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

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "sdrpesq/bark_table.hpp"
#include "sdrpesq/error.hpp"
#include "sdrpesq/joint_loss.hpp"
#include "sdrpesq/loss_report.hpp"
#include "sdrpesq/pesq_loss.hpp"
#include "sdrpesq/spectral.hpp"

namespace sdrpesq {

/// Overrides read from a `--config` JSON file:
///
///   {
///     "stft": {"fft_size": 512, "hop": 256, "window": "hann"},
///     "pesq": {"c1": 1000, ...},
///     "bark_table": {...} | "bark_table_path": "tables.json",
///     "bark_bands": 49
///   }
///
/// Every section is optional. Missing values fall back to the defaults for
/// the input's sample rate.
struct RunConfig {
  nlohmann::json overrides = nlohmann::json::object();

  static RunConfig parse(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::kBadArgument, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key != "stft" && key != "pesq" && key != "bark_table" && key != "bark_table_path" && key != "bark_bands")
        fail(ErrorKind::kBadArgument, "unknown config key: " + key);
    }
    if (j.contains("bark_table") && j.contains("bark_table_path"))
      fail(ErrorKind::kBadArgument, "config: give bark_table or bark_table_path, not both");
    RunConfig c;
    c.overrides = j;
    return c;
  }

  static RunConfig load(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) fail(ErrorKind::kMissingInput, "cannot open config: " + path);
    try {
      RunConfig c = parse(nlohmann::json::parse(in));
      // Resolve a relative table path against the config file's directory.
      if (c.overrides.contains("bark_table_path")) {
        std::string p = c.overrides.at("bark_table_path").get<std::string>();
        const auto slash = path.find_last_of('/');
        if (!p.empty() && p.front() != '/' && slash != std::string::npos) p = path.substr(0, slash + 1) + p;
        c.overrides["bark_table_path"] = p;
      }
      return c;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kBadArgument, std::string("malformed config: ") + e.what());
    }
  }

  /// Effective STFT, PESQ constants and Bark table for a sample rate.
  PesqContext context(int sample_rate) const {
    try {
      return build(sample_rate);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kBadArgument, std::string("malformed config: ") + e.what());
    }
  }

 private:
  PesqContext build(int sample_rate) const {
    PesqContext ctx;
    ctx.stft = StftConfig::for_rate(sample_rate);
    if (overrides.contains("stft")) {
      const auto& s = overrides.at("stft");
      for (const auto& [key, value] : s.items())
        if (key != "fft_size" && key != "hop" && key != "window")
          fail(ErrorKind::kBadArgument, "unknown stft config key: " + key);
      const std::size_t fft = s.value("fft_size", ctx.stft.fft_size);
      const std::size_t hop = s.value("hop", fft == ctx.stft.fft_size ? ctx.stft.hop : fft / 2);
      const std::string window = s.value("window", std::string("hann"));
      if (window == "hann") {
        ctx.stft = StftConfig::with_hann(fft, hop);
      } else if (window == "rectangular") {
        ctx.stft = {fft, hop, StftConfig::rectangular(fft), StftConfig::rectangular(fft)};
      } else {
        fail(ErrorKind::kBadArgument, "unknown window: " + window);
      }
    }
    ctx.stft.validate();

    ctx.pesq.sample_rate = sample_rate;
    if (overrides.contains("pesq")) ctx.pesq.update_from_json(overrides.at("pesq"));
    ctx.pesq.validate();

    if (overrides.contains("bark_table")) {
      ctx.table = BarkTable::from_json(overrides.at("bark_table"));
    } else if (overrides.contains("bark_table_path")) {
      ctx.table = BarkTable::load(overrides.at("bark_table_path").get<std::string>());
    } else {
      BarkTableRecipe recipe;
      recipe.bands = overrides.value("bark_bands", recipe.bands);
      ctx.table = BarkTable::generate(sample_rate, ctx.stft.fft_size, recipe);
    }
    if (ctx.table.fft_size != ctx.stft.fft_size || ctx.table.sample_rate != sample_rate)
      fail(ErrorKind::kBadArgument, "bark table does not match the sample rate / fft size");
    ctx.table.validate(ctx.stft.bins());
    return ctx;
  }
};

/// Canonical JSON of everything that influences a score.
inline nlohmann::json describe(const PesqContext& ctx) {
  return {{"stft", {{"fft_size", ctx.stft.fft_size}, {"hop", ctx.stft.hop}, {"window", ctx.stft.window}}},
          {"pesq", ctx.pesq.to_json()},
          {"bark_table", ctx.table.to_json()}};
}

/// 16 hex digits of FNV-1a over the canonical dump.
inline std::string config_digest(const PesqContext& ctx) {
  BranchSignature h;
  for (unsigned char c : describe(ctx).dump()) h.add(c);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h.value()));
  return buf;
}

}  // namespace sdrpesq
