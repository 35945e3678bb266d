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


#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sdrpesq/joint_loss.hpp"
#include "sdrpesq/masks.hpp"
#include "sdrpesq/sdr_loss.hpp"
#include "test_util.hpp"

namespace sdrpesq {
namespace {

using testing::white_noise;

// Brute-force SI-SDR: |a x - xhat|^2 is an exact quadratic in a, so the
// vertex of the parabola through a = -1, 0, 1 is its minimiser; the ratio is
// then formed directly. Independent of the closed-form projection.
double si_sdr_by_search(const std::vector<double>& x, const std::vector<double>& xh) {
  auto err = [&](double a) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (a * x[i] - xh[i]) * (a * x[i] - xh[i]);
    return s;
  };
  const double e0 = err(-1.0), e1 = err(0.0), e2 = err(1.0);
  const double a = (e0 - e2) / (2.0 * (e0 - 2.0 * e1 + e2));
  double target = 0.0;
  for (double v : x) target += a * a * v * v;
  return 10.0 * std::log10(target / err(a));
}

TEST(SdrDecompose, EstimateEqualsClean) {
  const auto x = white_noise(32, 1), n = white_noise(32, 2);
  const SdrDecomposition d = sdr_decompose(x, n, x);
  EXPECT_DOUBLE_EQ(d.alpha, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(d.x_target[i], x[i], 1e-15);
    EXPECT_NEAR(d.e_noise[i] + d.e_artif[i], 0.0, 1e-12);
  }
}

TEST(SdrDecompose, EstimateEqualsOrthogonalNoise) {
  const std::vector<double> x{1.0, 0.0, 1.0, 0.0}, n{0.0, 2.0, 0.0, -1.0};
  const SdrDecomposition d = sdr_decompose(x, n, n);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(d.x_target[i], 0.0);
    EXPECT_DOUBLE_EQ(d.e_noise[i], n[i]);
    EXPECT_NEAR(d.e_artif[i], 0.0, 1e-15);
  }
}

TEST(SdrDecompose, MatchesJointProjectionWhenNoiseIsOrthogonal) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = white_noise(8, rng());
    auto n = white_noise(8, rng());
    const auto xh = white_noise(8, rng());
    double xn = 0.0, xx = 0.0;
    for (int i = 0; i < 8; ++i) xn += x[i] * n[i], xx += x[i] * x[i];
    for (int i = 0; i < 8; ++i) n[i] -= xn / xx * x[i];
    // Normal equations of [x n] c = xhat, solved by Cramer's rule.
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (int i = 0; i < 8; ++i) {
      a11 += x[i] * x[i], a12 += x[i] * n[i], a22 += n[i] * n[i];
      b1 += x[i] * xh[i], b2 += n[i] * xh[i];
    }
    const double det = a11 * a22 - a12 * a12;
    const double c1 = (b1 * a22 - a12 * b2) / det, c2 = (a11 * b2 - a12 * b1) / det;
    const SdrDecomposition d = sdr_decompose(x, n, xh);
    for (int i = 0; i < 8; ++i) {
      ASSERT_NEAR(d.x_target[i], c1 * x[i], 1e-12);
      ASSERT_NEAR(d.e_noise[i], c2 * n[i], 1e-12);
    }
    // With orthogonal sources the decomposition SDR is SI-SDR.
    ASSERT_NEAR(sdr_from_decomposition(d), si_sdr(x, xh), 1e-9);
  }
}

TEST(SdrDecompose, AdditivityAndParallelComponents) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + rng() % 60;
    const auto x = white_noise(len, rng()), n = white_noise(len, rng()), xh = white_noise(len, rng());
    const SdrDecomposition d = sdr_decompose(x, n, xh);
    double xx = 0, nn = 0, xxh = 0, nxh = 0;
    for (std::size_t i = 0; i < len; ++i) xx += x[i] * x[i], nn += n[i] * n[i], xxh += x[i] * xh[i], nxh += n[i] * xh[i];
    for (std::size_t i = 0; i < len; ++i) {
      ASSERT_NEAR(xh[i] - (d.x_target[i] + d.e_noise[i] + d.e_artif[i]), 0.0, 1e-10);
      ASSERT_NEAR(d.x_target[i], xxh / xx * x[i], 1e-12);
      ASSERT_NEAR(d.e_noise[i], nxh / nn * n[i], 1e-12);
    }
  }
}

TEST(SdrDecompose, DegenerateInputsFail) {
  const std::vector<double> z(4, 0.0), v{1.0, 2.0, 3.0, 4.0};
  EXPECT_THROW(sdr_decompose(z, v, v), Error);
  EXPECT_THROW(sdr_decompose(v, z, v), Error);
  EXPECT_THROW(sdr_decompose(v, v, std::vector<double>(3, 1.0)), Error);
}

TEST(SiSdr, HandProjectionExample) {
  const std::vector<double> x{1.0, 0.0}, xh{0.5, 0.5};
  const SiSdrResult r = si_sdr_with_gradient(x, xh, false);
  EXPECT_DOUBLE_EQ(r.alpha, 0.5);
  EXPECT_NEAR(r.value_db, 0.0, 1e-12);
  EXPECT_NEAR(si_sdr_by_search(x, xh), 0.0, 1e-9);
}

TEST(SiSdr, MatchesBruteForceSearch) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + rng() % 63;
    const auto x = white_noise(len, rng());
    auto xh = white_noise(len, rng(), 0.5);
    for (std::size_t i = 0; i < len; ++i) xh[i] += 0.8 * x[i];
    ASSERT_NEAR(si_sdr(x, xh), si_sdr_by_search(x, xh), 1e-9);
  }
}

TEST(SiSdr, ScaleInvariance) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = white_noise(64, rng());
    auto xh = white_noise(64, rng());
    for (std::size_t i = 0; i < 64; ++i) xh[i] += x[i];
    const double base = si_sdr(x, xh);
    for (double c : {0.1, 1.0, 10.0}) {
      std::vector<double> s(xh);
      for (auto& v : s) v *= c;
      ASSERT_NEAR(si_sdr(x, s), base, 1e-9);
    }
  }
}

TEST(SiSdr, Sentinels) {
  const std::vector<double> x{1.0, 0.0}, ortho{0.0, 1.0}, scaled{3.0, 0.0};
  EXPECT_EQ(si_sdr(x, ortho), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(si_sdr(x, scaled), std::numeric_limits<double>::infinity());
  EXPECT_EQ(clamp_sdr(si_sdr(x, scaled)), 60.0);
  EXPECT_EQ(clamp_sdr(si_sdr(x, ortho)), -60.0);
  EXPECT_THROW(si_sdr(std::vector<double>{0.0, 0.0}, x), Error);
  EXPECT_THROW(si_sdr(x, std::vector<double>{1.0}), Error);
}

// The fitted scale can only help: SNR after optimal rescaling of the
// estimate, 10 log10(1 + 10^(SI-SDR/10)), is at least the unit-scale SNR.
TEST(SiSdr, OptimalScaleDominatesUnitScaleSnr) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = white_noise(32, rng());
    auto xh = white_noise(32, rng(), 0.7);
    for (std::size_t i = 0; i < 32; ++i) xh[i] += (0.2 + 1.5 * double(trial % 7) / 7.0) * x[i];
    const double rescaled = 10.0 * std::log10(1.0 + std::pow(10.0, si_sdr(x, xh) / 10.0));
    ASSERT_GE(rescaled, plain_snr_db(x, xh) - 1e-9);
  }
}

TEST(SiSdr, UnitScaleSnrCanExceedSiSdr) {
  // xhat = 0.5 x + e with e orthogonal to x and |e|^2 = 0.25 |x|^2.
  const std::vector<double> x{1.0, 0.0}, xh{0.5, 0.5};
  EXPECT_NEAR(si_sdr(x, xh), 0.0, 1e-12);
  EXPECT_NEAR(plain_snr_db(x, xh), 10.0 * std::log10(2.0), 1e-12);
}

TEST(SiSdr, EqualSnrPairSeparates) {
  // Both estimates sit at distance 0.5 from x = (1, 0), so their unit-scale
  // SNR is equal, but the error points along x for one and across it for
  // the other.
  const std::vector<double> x{1.0, 0.0};
  const std::vector<double> y1{1.0 - 0.5 * std::cos(0.3), 0.5 * std::sin(0.3)};
  const std::vector<double> y2{1.0, 0.5};
  EXPECT_NEAR(plain_snr_db(x, y1), plain_snr_db(x, y2), 1e-9);
  EXPECT_GT(std::abs(si_sdr(x, y1) - si_sdr(x, y2)), 0.5);
}

TEST(SiSdr, GradientMatchesFiniteDifferences) {
  const auto x = white_noise(16, 8);
  auto xh = white_noise(16, 9, 0.5);
  for (std::size_t i = 0; i < 16; ++i) xh[i] += x[i];
  const SiSdrResult r = si_sdr_with_gradient(x, xh, true);
  for (std::size_t i = 0; i < 16; ++i) {
    auto up = xh, down = xh;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    ASSERT_NEAR(r.gradient[i], (si_sdr(x, up) - si_sdr(x, down)) / 2e-6, 1e-6 * (1.0 + std::abs(r.gradient[i])));
  }
}

TEST(SdrLoss, BatchMean) {
  const auto x = white_noise(64, 10);
  auto xh = white_noise(64, 11);
  for (std::size_t i = 0; i < 64; ++i) xh[i] += x[i];
  const SignalPair same[] = {{x, xh}, {x, xh}, {x, xh}};
  EXPECT_DOUBLE_EQ(sdr_loss(same), si_sdr(x, xh));

  // 0 dB and 10 dB pairs: x = (1, 0); estimates with orthogonal residuals.
  const std::vector<double> c{1.0, 0.0}, e0{1.0, 1.0}, e10{1.0, std::sqrt(0.1)};
  const SignalPair mixed[] = {{c, e0}, {c, e10}};
  EXPECT_NEAR(sdr_loss(mixed), 5.0, 1e-12);

  const SignalPair perfect[] = {{c, c}, {c, e0}};
  EXPECT_NEAR(sdr_loss(perfect), 30.0, 1e-12);
  EXPECT_THROW(sdr_loss(std::span<const SignalPair>{}), Error);
}

TEST(SnrMse, Values) {
  const auto x = white_noise(50, 12);
  EXPECT_EQ(snr_mse_loss(x, x), 0.0);
  auto shifted = x;
  for (auto& v : shifted) v += 0.1;
  EXPECT_NEAR(snr_mse_loss(x, shifted), 0.01 * 50, 1e-12);
  const auto y = white_noise(50, 13);
  double ref = 0.0;
  for (std::size_t i = 0; i < 50; ++i) ref += (x[i] - y[i]) * (x[i] - y[i]);
  EXPECT_NEAR(snr_mse_loss(x, y), ref, 1e-12);
  EXPECT_THROW(snr_mse_loss(x, std::vector<double>(3)), Error);
}

TEST(SpectrumMse, EqualsD2) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  RealGrid xm(3, 4), ym(3, 4);
  MaskGrid m{RealGrid(3, 4), LabelKind::kFree};
  for (std::size_t j = 0; j < 12; ++j) xm[j] = u(rng), ym[j] = u(rng) + 0.1, m.values[j] = u(rng);
  EXPECT_EQ(spectrum_mse(m, ym, xm), d2(m, xm, ym));
  MaskGrid iam{RealGrid(3, 4), LabelKind::kIam};
  for (std::size_t j = 0; j < 12; ++j) iam.values[j] = xm[j] / ym[j];
  EXPECT_NEAR(spectrum_mse(iam, ym, xm), 0.0, 1e-24);
}

class JointLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int u = 0; u < 3; ++u) {
      clean.push_back(testing::speech_like(4000, 20 + u));
      est.push_back(testing::add_at_snr(clean.back(), white_noise(4000, 30 + u), 5.0 + 3.0 * u));
    }
    for (int u = 0; u < 3; ++u) batch.push_back({clean[u], est[u]});
  }
  std::vector<std::vector<double>> clean, est;
  std::vector<SignalPair> batch;
  PesqContext ctx;
};

TEST_F(JointLossTest, ZeroWeightIsSdrLoss) {
  JointLossConfig cfg;
  cfg.pesq_weight = 0.0;
  EXPECT_EQ(joint_sdr_pesq(batch, cfg, ctx), sdr_loss(batch));
}

TEST_F(JointLossTest, PerfectPairsGiveClampPlusScoreBase) {
  const SignalPair perfect[] = {{clean[0], clean[0]}, {clean[1], clean[1]}};
  EXPECT_NEAR(joint_sdr_pesq(perfect, JointLossConfig{}, ctx), 60.0 + 4.5, 1e-9);
}

TEST_F(JointLossTest, CombinesIndependentlyComputedTerms) {
  JointLossConfig cfg;
  cfg.pesq_weight = 0.7;
  double sdr = 0.0;
  std::vector<DisturbanceSeries> series;
  for (int u = 0; u < 3; ++u) {
    sdr += clamp_sdr(si_sdr(clean[u], est[u])) / 3.0;
    series.push_back(pesq_trace(power_spectrogram(stft(clean[u], ctx.stft)),
                                power_spectrogram(stft(est[u], ctx.stft)), ctx.pesq, ctx.table)
                         .disturbance);
  }
  const double pesq = aggregate(series, ctx.pesq).score;
  EXPECT_NEAR(joint_sdr_pesq(batch, cfg, ctx), sdr + 0.7 * pesq, 1e-9);
}

TEST_F(JointLossTest, SdrMse) {
  std::vector<ComplexGrid> xs, ys;
  std::vector<RealGrid> xm, ym;
  std::vector<MaskGrid> iam, ones;
  for (int u = 0; u < 3; ++u) {
    xs.push_back(stft(clean[u], ctx.stft));
    ys.push_back(stft(est[u], ctx.stft));
  }
  for (int u = 0; u < 3; ++u) {
    xm.push_back(magnitude(xs[u]));
    ym.push_back(magnitude(ys[u]));
    iam.push_back(iam_label(xs[u], ys[u]));
    ones.push_back({RealGrid(xs[u].rows(), xs[u].cols(), 1.0), LabelKind::kFree});
  }
  std::vector<MaskedPair> at_iam, at_ones;
  for (int u = 0; u < 3; ++u) {
    at_iam.push_back({batch[u], &iam[u], &ym[u], &xm[u]});
    at_ones.push_back({batch[u], &ones[u], &ym[u], &xm[u]});
  }
  JointLossConfig zero;
  zero.pesq_weight = 0.0;
  EXPECT_EQ(joint_sdr_mse(at_ones, zero), sdr_loss(batch));
  EXPECT_NEAR(joint_sdr_mse(at_iam, JointLossConfig{}), sdr_loss(batch), 1e-9);
  JointLossConfig cfg;
  cfg.pesq_weight = 0.3;
  double mse = 0.0;
  for (int u = 0; u < 3; ++u) {
    for (std::size_t j = 0; j < xm[u].size(); ++j) mse += std::pow(ym[u][j] - xm[u][j], 2) / 3.0;
  }
  EXPECT_NEAR(joint_sdr_mse(at_ones, cfg), sdr_loss(batch) - 0.3 * mse, 1e-9 * (1.0 + mse));
}

TEST(JointLossConfig, RejectsNegativeWeight) {
  JointLossConfig cfg;
  cfg.pesq_weight = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace sdrpesq
