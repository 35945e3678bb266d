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


#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdrpesq/pesq_loss.hpp"
#include "test_util.hpp"

namespace sdrpesq {
namespace {

RealGrid random_power(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  RealGrid g(rows, cols);
  for (auto& v : g) v = scale * e(rng);
  return g;
}

double band_mean_300_3000(const RealGrid& p, double bin_hz) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t m = 0; m < p.rows(); ++m)
    for (std::size_t k = 0; k < p.cols(); ++k) {
      const double f = double(k) * bin_hz;
      if (f >= 300.0 && f <= 3000.0) s += p(m, k), ++n;
    }
  return s / double(n);
}

// A one-band table with unit weights, for hand-checkable disturbance norms.
BarkTable unit_table() {
  BarkTable t;
  t.band_edges = {1, 2};
  t.band_weights = {1.0};
  t.band_norm_weights = {1.0};
  t.abs_threshold = {1.0};
  t.loudness_scale = {1.0};
  t.silence_threshold = {1.0};
  return t;
}

TEST(PesqConfig, JsonOverridesAndValidation) {
  PesqConfig cfg;
  cfg.update_from_json({{"c1", 10.0}, {"window_len", 10}});
  EXPECT_EQ(cfg.c1, 10.0);
  EXPECT_EQ(cfg.window_len, 10u);
  EXPECT_THROW(cfg.update_from_json({{"no_such_key", 1}}), Error);
  PesqConfig bad;
  EXPECT_THROW(bad.update_from_json({{"window_step", 30}}), Error);
  PesqConfig round;
  round.update_from_json(PesqConfig{}.to_json());
  EXPECT_EQ(round.to_json(), PesqConfig{}.to_json());
  EXPECT_DOUBLE_EQ(PesqConfig{}.aligned_power(), 1e7 * 2.47 * 2.47);
}

TEST(LevelAlign, HitsTargetPower) {
  const PesqConfig cfg;
  const RealGrid p = random_power(10, 257, 1);
  EXPECT_NEAR(band_mean_300_3000(level_align(p, cfg), 31.25) / cfg.aligned_power(), 1.0, 1e-6);
}

TEST(LevelAlign, FixedPointAndHalfTarget) {
  const PesqConfig cfg;
  RealGrid p = random_power(10, 257, 2);
  const double g = cfg.aligned_power() / band_mean_300_3000(p, 31.25);
  for (auto& v : p) v *= g;
  const RealGrid same = level_align(p, cfg);
  for (std::size_t j = 0; j < p.size(); ++j) ASSERT_NEAR(same[j] / p[j], 1.0, 1e-9);
  RealGrid half = p;
  for (auto& v : half) v *= 0.5;
  const AlignedPower a = level_align_detail(half, cfg);
  EXPECT_NEAR(a.gain, 2.0, 1e-9);
}

TEST(LevelAlign, InvariantToInputLevel) {
  const PesqConfig cfg;
  const RealGrid p = random_power(8, 257, 3);
  RealGrid scaled = p;
  for (auto& v : scaled) v *= 123.0;
  const RealGrid a = level_align(p, cfg), b = level_align(scaled, cfg);
  for (std::size_t j = 0; j < a.size(); ++j) ASSERT_NEAR(a[j] / b[j], 1.0, 1e-12);
}

TEST(LevelAlign, SilentInputFails) {
  try {
    level_align(RealGrid(4, 257), PesqConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateSignal);
  }
}

TEST(BarkSpectrum, FlatPowerGivesFlatBands) {
  const BarkTable t = BarkTable::generate(16000, 512);
  const BarkSpectrogram b = bark_spectrum(RealGrid(3, 257, 7.5), t);
  ASSERT_EQ(b.power.cols(), 49u);
  for (double v : b.power) ASSERT_DOUBLE_EQ(v, 7.5);
}

TEST(BarkSpectrum, PowerConfinedToBandZero) {
  const BarkTable t = BarkTable::generate(16000, 512);
  RealGrid p(2, 257);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t k = t.band_edges[0]; k < t.band_edges[1]; ++k) p(m, k) = 5.0;
  const BarkSpectrogram b = bark_spectrum(p, t);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(b.power(m, 0), 5.0);
    for (std::size_t i = 1; i < 49; ++i) ASSERT_EQ(b.power(m, i), 0.0);
  }
}

TEST(BarkSpectrum, MatchesDirectBandAverage) {
  const BarkTable t = BarkTable::generate(16000, 512);
  const RealGrid p = random_power(5, 257, 4, 1e8);
  const BarkSpectrogram b = bark_spectrum(p, t);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t i = 0; i < 49; ++i) {
      double s = 0.0;
      int n = 0;
      for (std::size_t k = t.band_edges[i]; k < t.band_edges[i + 1]; ++k) s += p(m, k), ++n;
      ASSERT_NEAR(b.power(m, i), s / n, 1e-6 * s / n);
      ASSERT_EQ(b.silence_mask(m, i), s / n > t.silence_threshold[i] ? 1 : 0);
    }
}

TEST(BarkSpectrum, EdgeOutOfRangeFails) {
  EXPECT_THROW(bark_spectrum(RealGrid(2, 100), BarkTable::generate(16000, 512)), Error);
}

BarkSpectrogram as_bark(const RealGrid& p, const BarkTable& t) {
  BarkSpectrogram b{p, Grid<unsigned char>(p.rows(), p.cols())};
  for (std::size_t m = 0; m < p.rows(); ++m)
    for (std::size_t i = 0; i < p.cols(); ++i) b.silence_mask(m, i) = p(m, i) > t.silence_threshold[i];
  return b;
}

TEST(TfEqualize, IdenticalInputsAreUnchanged) {
  const BarkTable t = BarkTable::generate(16000, 512);
  const BarkSpectrogram b = as_bark(random_power(12, 49, 5, 1e7), t);
  const Equalization eq = tf_equalize(b, b, PesqConfig{});
  for (double r : eq.ratio) EXPECT_DOUBLE_EQ(r, 1.0);
  for (std::size_t j = 0; j < b.power.size(); ++j) {
    ASSERT_NEAR(eq.eq_clean.power[j], b.power[j], 1e-9 * b.power[j]);
    ASSERT_NEAR(eq.eq_noisy.power[j], b.power[j], 1e-9 * b.power[j]);
  }
}

TEST(TfEqualize, FourTimesLouderNoisy) {
  const PesqConfig cfg;
  const BarkTable t = BarkTable::generate(16000, 512);
  RealGrid pc = random_power(6, 49, 6, 1e12);
  for (auto& v : pc) v += 1e11;  // keeps every band above its silence threshold
  RealGrid pn = pc;
  for (auto& v : pn) v *= 4.0;
  const BarkSpectrogram c = as_bark(pc, t), n = as_bark(pn, t);
  const Equalization eq = tf_equalize(c, n, cfg);
  for (std::size_t i = 0; i < 49; ++i) {
    double avg = 0.0;
    for (std::size_t m = 0; m < 6; ++m) avg += c.silence_mask(m, i) ? pc(m, i) / 6.0 : 0.0;
    double avg_n = 0.0;
    for (std::size_t m = 0; m < 6; ++m) avg_n += n.silence_mask(m, i) ? pn(m, i) / 6.0 : 0.0;
    const double expected = std::clamp((avg_n + cfg.c1) / (avg + cfg.c1), 0.01, 100.0);
    ASSERT_NEAR(eq.ratio[i], expected, 1e-12 * expected);
    ASSERT_NEAR(eq.ratio[i], 4.0, 1e-3);
  }
  for (std::size_t m = 0; m < 6; ++m) {
    double gc = 0.0, gn = 0.0;
    for (std::size_t i = 0; i < 49; ++i) gc += eq.ratio[i] * pc(m, i), gn += pn(m, i);
    ASSERT_NEAR(eq.frame_gain_raw[m], (gc + cfg.c2) / (gn + cfg.c2), 1e-12);
    double te = 0.0, tn = 0.0;
    for (std::size_t i = 0; i < 49; ++i) te += eq.eq_clean.power(m, i), tn += eq.eq_noisy.power(m, i);
    ASSERT_NEAR(te / tn, 1.0, 1e-3);
  }
}

TEST(TfEqualize, SmoothingRecursion) {
  const PesqConfig cfg;
  const BarkTable t = BarkTable::generate(16000, 512);
  const BarkSpectrogram c = as_bark(random_power(1, 49, 7, 1e8), t);
  const BarkSpectrogram n = as_bark(random_power(1, 49, 8, 1e8), t);
  const Equalization one = tf_equalize(c, n, cfg);
  EXPECT_EQ(one.frame_gain_smoothed[0], one.frame_gain[0]);

  const BarkSpectrogram c5 = as_bark(random_power(5, 49, 9, 1e8), t);
  const BarkSpectrogram n5 = as_bark(random_power(5, 49, 10, 1e6), t);
  const Equalization eq = tf_equalize(c5, n5, cfg);
  for (std::size_t m = 0; m < 5; ++m) {
    ASSERT_GE(eq.frame_gain[m], cfg.gain_min);
    ASSERT_LE(eq.frame_gain[m], cfg.gain_max);
    if (m > 0) {
      ASSERT_DOUBLE_EQ(eq.frame_gain_smoothed[m], 0.2 * eq.frame_gain_smoothed[m - 1] + 0.8 * eq.frame_gain[m]);
    }
    for (std::size_t i = 0; i < 49; ++i)
      ASSERT_DOUBLE_EQ(eq.eq_noisy.power(m, i), eq.frame_gain_smoothed[m] * n5.power(m, i));
  }
}

TEST(Loudness, ThresholdFloorAndMonotonicity) {
  const BarkTable t = BarkTable::generate(16000, 512);
  RealGrid e(3, 49);
  for (std::size_t i = 0; i < 49; ++i) {
    e(0, i) = t.abs_threshold[i];
    e(1, i) = 0.0;
    e(2, i) = 10.0 * t.abs_threshold[i];
  }
  const LoudnessGrid l = loudness(e, t);
  for (std::size_t i = 0; i < 49; ++i) {
    EXPECT_NEAR(l(0, i), 0.0, 1e-12);
    EXPECT_EQ(l(1, i), 0.0);
    EXPECT_GT(l(2, i), 0.0);
  }
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1e9);
  for (int trial = 0; trial < 200; ++trial) {
    RealGrid a(1, 49), b(1, 49);
    for (std::size_t i = 0; i < 49; ++i) {
      a[i] = u(rng);
      b[i] = a[i] + u(rng);
    }
    const LoudnessGrid la = loudness(a, t), lb = loudness(b, t);
    for (std::size_t i = 0; i < 49; ++i) ASSERT_LE(la[i], lb[i]);
  }
}

TEST(RawDisturbance, DeadZoneExamples) {
  EXPECT_EQ(dead_zoned_difference(10.0, 10.0, 0.25), 0.0);
  EXPECT_EQ(dead_zoned_difference(10.0, 8.0, 0.25), 0.0);
  EXPECT_EQ(dead_zoned_difference(10.0, 4.0, 0.25), 5.0);
  EXPECT_EQ(dead_zoned_difference(4.0, 10.0, 0.25), -5.0);
}

TEST(RawDisturbance, DeadZoneSoundness) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  const PesqConfig cfg;
  RealGrid lc(50, 49), ln(50, 49);
  for (std::size_t j = 0; j < lc.size(); ++j) lc[j] = u(rng), ln[j] = u(rng);
  const RealGrid d = raw_disturbance(lc, ln, cfg);
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double dz = 0.25 * std::min(lc[j], ln[j]);
    if (std::abs(lc[j] - ln[j]) <= dz) ASSERT_EQ(d[j], 0.0);
    else ASSERT_NEAR(std::abs(d[j]), std::abs(lc[j] - ln[j]) - dz, 1e-12);
  }
}

TEST(AsymmetryFactor, ClipExamples) {
  const PesqConfig cfg;
  auto noisy_for = [](double h) { return 50.0 * std::pow(h, 1.0 / 1.2) - 50.0; };
  EXPECT_EQ(asymmetry_factor(noisy_for(20.0), 0.0, cfg), 12.0);
  EXPECT_EQ(asymmetry_factor(noisy_for(2.0), 0.0, cfg), 0.0);
  EXPECT_NEAR(asymmetry_factor(noisy_for(5.0), 0.0, cfg), 5.0, 1e-12);
}

TEST(AsymmetryFactor, ClipSoundness) {
  const PesqConfig cfg;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 3000.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const double h = asymmetry_factor(u(rng), u(rng) * 0.1, cfg);
    ASSERT_TRUE(h == 0.0 || (h >= 3.0 && h <= 12.0)) << h;
  }
}

TEST(FrameDisturbances, ZeroAndSingleBand) {
  const PesqConfig cfg;
  const BarkTable t = BarkTable::generate(16000, 512);
  const RealGrid zero(4, 49);
  const DisturbanceSeries s = frame_disturbances(zero, random_power(4, 49, 14), random_power(4, 49, 15), t, cfg);
  for (std::size_t m = 0; m < 4; ++m) {
    EXPECT_EQ(s.sym[m], 0.0);
    EXPECT_EQ(s.asym[m], 0.0);
  }
  const DisturbanceSeries one =
      frame_disturbances(RealGrid(1, 1, 3.0), RealGrid(1, 1, 0.0), RealGrid(1, 1, 0.0), unit_table(), cfg);
  EXPECT_DOUBLE_EQ(one.sym[0], 3.0);
}

TEST(FrameDisturbances, MatchesWeightedNorm) {
  const PesqConfig cfg;
  const BarkTable t = BarkTable::generate(16000, 512);
  RealGrid d = random_power(3, 49, 16);
  const RealGrid bc = random_power(3, 49, 17, 100.0), bn = random_power(3, 49, 18, 1000.0);
  const DisturbanceSeries s = frame_disturbances(d, bc, bn, t, cfg);
  double sum_w = 0.0;
  for (double w : t.band_weights) sum_w += w;
  for (std::size_t m = 0; m < 3; ++m) {
    double acc = 0.0, acc_a = 0.0;
    for (std::size_t i = 0; i < 49; ++i) {
      acc += std::pow(t.band_norm_weights[i] * d(m, i), 2);
      acc_a += std::pow(t.band_norm_weights[i] * d(m, i) * asymmetry_factor(bn(m, i), bc(m, i), cfg), 2);
    }
    ASSERT_NEAR(s.sym[m], sum_w * std::sqrt(acc / sum_w), 1e-9);
    ASSERT_NEAR(s.asym[m], sum_w * std::sqrt(acc_a / sum_w), 1e-9);
  }
}

// Direct two-loop reference for the window scheme.
double reference_two_stage(const std::vector<double>& fd) {
  const std::size_t m = fd.size();
  const std::size_t windows = std::max<std::size_t>(1, m / 10);
  double outer = 0.0;
  for (std::size_t s = 0; s < windows; ++s) {
    double inner = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 10 * s; i < std::min(10 * s + 20, m); ++i) inner += std::pow(fd[i], 6), ++count;
    outer += std::pow(inner / double(count), 2.0 / 6.0);
  }
  return std::sqrt(outer / double(windows));
}

TEST(Aggregate, PerfectSignalScoresBase) {
  DisturbanceSeries s;
  s.sym.assign(30, 0.0);
  s.asym.assign(30, 0.0);
  EXPECT_EQ(aggregate(std::span<const DisturbanceSeries>(&s, 1), PesqConfig{}).score, 4.5);
}

TEST(Aggregate, ConstantDisturbancePassesThrough) {
  for (std::size_t frames : {10u, 20u, 40u, 7u, 33u}) {
    DisturbanceSeries s;
    s.sym.assign(frames, 2.5);
    s.asym.assign(frames, 0.0);
    const AggregateResult r = aggregate(std::span<const DisturbanceSeries>(&s, 1), PesqConfig{});
    EXPECT_NEAR(r.d_sym, 2.5, 1e-12);
    EXPECT_NEAR(r.score, 4.5 - 0.25, 1e-12);
  }
}

TEST(Aggregate, MatchesTwoLoopReference) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (std::size_t frames : {1u, 9u, 10u, 19u, 20u, 21u, 57u, 100u}) {
    DisturbanceSeries s;
    for (std::size_t m = 0; m < frames; ++m) s.sym.push_back(u(rng)), s.asym.push_back(u(rng));
    const AggregateResult r = aggregate(std::span<const DisturbanceSeries>(&s, 1), PesqConfig{});
    EXPECT_NEAR(r.d_sym, reference_two_stage(s.sym), 1e-12);
    EXPECT_NEAR(r.d_asym, reference_two_stage(s.asym), 1e-12);
    EXPECT_NEAR(r.score, 4.5 - 0.1 * r.d_sym - 0.0309 * r.d_asym, 1e-12);
  }
}

TEST(Aggregate, BatchIsMeanOverUtterances) {
  DisturbanceSeries a, b;
  a.sym.assign(20, 1.0), a.asym.assign(20, 2.0);
  b.sym.assign(20, 3.0), b.asym.assign(20, 4.0);
  const DisturbanceSeries both[] = {a, b};
  const AggregateResult r = aggregate(both, PesqConfig{});
  EXPECT_NEAR(r.d_sym, 2.0, 1e-12);
  EXPECT_NEAR(r.d_asym, 3.0, 1e-12);
}

TEST(PesqLoss, FixedPoint) {
  const StftConfig stft_cfg = StftConfig::for_rate(16000);
  const BarkTable t = BarkTable::generate(16000, 512);
  const auto x = testing::speech_like(16000, 1);
  EXPECT_NEAR(pesq_loss(x, x, stft_cfg, PesqConfig{}, t).value, 4.5, 1e-9);
  const PesqGradient g = pesq_score_and_gradient(x, x, stft_cfg, PesqConfig{}, t);
  for (double v : g.gradient) ASSERT_TRUE(std::isfinite(v));
}

TEST(PesqLoss, DecreasesWithNoiseLevel) {
  const StftConfig stft_cfg = StftConfig::for_rate(16000);
  const BarkTable t = BarkTable::generate(16000, 512);
  for (std::uint64_t u = 0; u < 2; ++u) {
    const auto x = testing::speech_like(16000, 100 + u);
    const auto n = testing::white_noise(16000, 200 + u);
    double prev = 4.5 + 1e-9;
    for (double snr : {20.0, 15.0, 10.0, 5.0, 0.0}) {
      const double s = pesq_loss(x, testing::add_at_snr(x, n, snr), stft_cfg, PesqConfig{}, t).value;
      EXPECT_LT(s, prev) << "snr " << snr;
      prev = s;
    }
  }
}

TEST(PesqLoss, InvariantToGlobalScaling) {
  const StftConfig stft_cfg = StftConfig::for_rate(16000);
  const BarkTable t = BarkTable::generate(16000, 512);
  const auto x = testing::speech_like(12000, 3);
  const auto y = testing::add_at_snr(x, testing::white_noise(12000, 4), 8.0);
  const double base = pesq_loss(x, y, stft_cfg, PesqConfig{}, t).value;
  for (double c : {0.1, 10.0}) {
    std::vector<double> xc(x), yc(y);
    for (auto& v : xc) v *= c;
    for (auto& v : yc) v *= c;
    EXPECT_NEAR(pesq_loss(xc, yc, stft_cfg, PesqConfig{}, t).value, base, 1e-6);
  }
}

TEST(PesqLoss, ReportsDiagnosticsAndErrors) {
  const StftConfig stft_cfg = StftConfig::for_rate(16000);
  const BarkTable t = BarkTable::generate(16000, 512);
  const auto x = testing::speech_like(8000, 5);
  const auto y = testing::add_at_snr(x, testing::white_noise(8000, 6), 5.0);
  const LossReport r = pesq_loss(x, y, stft_cfg, PesqConfig{}, t);
  EXPECT_LT(r.value, 4.5);
  EXPECT_NEAR(r.value, 4.5 - 0.1 * r.diagnostics.at("d_sym") - 0.0309 * r.diagnostics.at("d_asym"), 1e-12);
  EXPECT_EQ(r.diagnostics.at("frames"), double(stft_cfg.frames_for(8000)));
  EXPECT_THROW(pesq_loss(x, std::vector<double>(7000, 0.1), stft_cfg, PesqConfig{}, t), Error);
  EXPECT_THROW(pesq_loss(x, std::vector<double>(8000, 0.0), stft_cfg, PesqConfig{}, t), Error);
}

TEST(PesqLoss, NarrowbandPath) {
  const StftConfig stft_cfg = StftConfig::for_rate(8000);
  const BarkTable t = BarkTable::generate(8000, 256);
  PesqConfig cfg;
  cfg.sample_rate = 8000;
  const auto x = testing::speech_like(8000, 7, 8000);
  EXPECT_NEAR(pesq_loss(x, x, stft_cfg, cfg, t).value, 4.5, 1e-9);
  const auto y = testing::add_at_snr(x, testing::white_noise(8000, 8), 5.0);
  EXPECT_LT(pesq_loss(x, y, stft_cfg, cfg, t).value, 4.5);
}

// Central differences of the score w.r.t. estimate samples on the tiny
// layout; probes that change a discrete branch are skipped.
TEST(PesqGradient, MatchesFiniteDifferencesOnSamples) {
  const PesqContext ctx = testing::tiny_context();
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = testing::white_noise(testing::kTinyLength, rng(), 0.3);
    auto y = x;
    for (double& v : y) v += 0.1 * testing::white_noise(1, rng())[0];
    const PesqGradient g = pesq_score_and_gradient(x, y, ctx.stft, ctx.pesq, ctx.table);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto up = y, down = y;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const PesqGradient gu = pesq_score_and_gradient(x, up, ctx.stft, ctx.pesq, ctx.table, false);
      const PesqGradient gd = pesq_score_and_gradient(x, down, ctx.stft, ctx.pesq, ctx.table, false);
      if (gu.branch_signature != g.branch_signature || gd.branch_signature != g.branch_signature) continue;
      const double fd = (gu.score - gd.score) / 2e-6;
      ASSERT_NEAR(g.gradient[i], fd, 1e-4 * std::max({std::abs(fd), std::abs(g.gradient[i]), 1e-3}));
      ++checked;
    }
    EXPECT_GT(checked, y.size() / 2);
  }
}

}  // namespace
}  // namespace sdrpesq
