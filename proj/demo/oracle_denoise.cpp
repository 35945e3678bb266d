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


// Denoises a synthetic vowel-like signal with each oracle mask and with a
// fitted SDR-PESQ mask, then prints SI-SDR and the PESQ-style score.
//
//   oracle_denoise [snr_db]

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <random>
#include <vector>

#include "sdrpesq/sdrpesq.hpp"

int main(int argc, char** argv) {
  using namespace sdrpesq;
  const double snr = argc > 1 ? std::atof(argv[1]) : 0.0;
  const int rate = 16000;
  const std::size_t length = rate;

  Waveform clean{std::vector<double>(length), rate};
  Waveform noise{std::vector<double>(length), rate};
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t n = 0; n < length; ++n) {
    const double t = double(n) / rate;
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 3.0 * t);
    double s = 0.0;
    for (int h = 1; h <= 12; ++h) s += std::sin(2.0 * std::numbers::pi * 140.0 * h * t) / h;
    clean.samples[n] = 0.1 * env * s;
    noise.samples[n] = g(rng);
  }

  try {
    const Mixture mix = mix_at_snr(clean, noise, {snr, 1});
    const PesqContext ctx = RunConfig{}.context(rate);
    const Metrics in = measure(clean.samples, mix.noisy.samples, ctx);
    std::printf("%-10s si_sdr %7.2f dB  pesq %.3f\n", "noisy", in.si_sdr, in.pesq);

    for (LabelKind kind : {LabelKind::kIbm, LabelKind::kIrm, LabelKind::kIam, LabelKind::kPsm}) {
      const auto est = oracle_denoise(clean.samples, mix.scaled_noise.samples, kind, 1, ctx.stft);
      const Metrics m = measure(clean.samples, est, ctx);
      std::printf("%-10s si_sdr %7.2f dB  pesq %.3f\n", std::string(to_string(kind)).c_str(), m.si_sdr, m.pesq);
    }

    FitConfig fc;
    fc.loss_kind = LossKind::kSdrPesq;
    fc.mask_init = MaskInit::kIam;
    fc.steps = 50;
    const FitResult r = fit_mask(FitProblem::from_signals(clean.samples, mix.scaled_noise.samples, ctx), fc);
    const Metrics m = measure(clean.samples, r.estimate, ctx);
    std::printf("%-10s si_sdr %7.2f dB  pesq %.3f\n", "sdr-pesq", m.si_sdr, m.pesq);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  }
  return 0;
}
