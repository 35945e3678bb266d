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


// Command-line front end: mix, score, oracle, fit, eval, tables.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sdrpesq/cli.hpp"

int main(int argc, char** argv) {
  using namespace sdrpesq;
  CLI::App app{"Mask-based speech enhancement losses and evaluation"};
  app.require_subcommand(1);

  MixOptions mix;
  auto* c_mix = app.add_subcommand("mix", "Mix clean speech with noise at a target SNR");
  c_mix->add_option("clean", mix.clean, "Clean WAV")->required();
  c_mix->add_option("noise", mix.noise, "Noise WAV")->required();
  c_mix->add_option("out", mix.out, "Noisy output WAV")->required();
  c_mix->add_option("--snr", mix.snr_db, "Target SNR in dB");
  c_mix->add_option("--seed", mix.seed, "Seed for the noise crop offset");
  c_mix->add_option("--noise-out", mix.noise_out, "Scaled-noise output WAV");
  c_mix->add_flag("--json", mix.json);

  ScoreOptions score;
  auto* c_score = app.add_subcommand("score", "SI-SDR and PESQ-style score of an estimate");
  c_score->add_option("clean", score.clean, "Clean WAV")->required();
  c_score->add_option("estimate", score.estimate, "Estimate WAV")->required();
  c_score->add_option("--config", score.config, "JSON overrides for STFT/PESQ constants");
  c_score->add_flag("--json", score.json);

  OracleOptions oracle;
  auto* c_oracle = app.add_subcommand("oracle", "Denoise with an oracle mask");
  c_oracle->add_option("clean", oracle.clean, "Clean WAV")->required();
  c_oracle->add_option("noise", oracle.noise, "Noise WAV (added to clean)")->required();
  c_oracle->add_option("out", oracle.out, "Denoised output WAV");
  c_oracle->add_option("--mask", oracle.mask, "ibm, irm, iam or psm");
  c_oracle->add_option("--gl-iters", oracle.gl_iters, "Griffin-Lim iterations");
  c_oracle->add_option("--config", oracle.config, "JSON overrides for STFT/PESQ constants");
  c_oracle->add_flag("--json", oracle.json);

  FitOptions fit;
  auto* c_fit = app.add_subcommand("fit", "Fit a mask by gradient ascent on a loss");
  c_fit->add_option("clean", fit.clean, "Clean WAV")->required();
  c_fit->add_option("noise", fit.noise, "Noise WAV (added to clean)")->required();
  c_fit->add_option("out", fit.out_csv, "Trajectory CSV")->required();
  c_fit->add_option("--wav", fit.out_wav, "Denoised output WAV");
  c_fit->add_option("--loss", fit.loss, "sdr, snr, sdr-mse, sdr-pesq or pesq");
  c_fit->add_option("--steps", fit.steps, "Gradient steps");
  c_fit->add_option("--lr", fit.lr, "Step size");
  c_fit->add_option("--init", fit.init, "Mask initialisation: ones, iam or value");
  c_fit->add_option("--init-value", fit.init_value, "Constant for --init value");
  c_fit->add_option("--gl-iters", fit.gl_iters, "Griffin-Lim iterations in the forward pass");
  c_fit->add_option("--config", fit.config, "JSON overrides for STFT/PESQ constants");
  c_fit->add_flag("--json", fit.json);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Batch report over a manifest");
  c_eval->add_option("manifest", eval.manifest, "CSV manifest: id,clean,noisy,noise,snr,method")->required();
  c_eval->add_option("out", eval.out, "Report prefix (writes .csv and .json)")->required();
  c_eval->add_option("--jobs", eval.jobs, "Parallel rows (0 = all cores)");
  c_eval->add_option("--gl-iters", eval.gl_iters, "Griffin-Lim iterations");
  c_eval->add_option("--steps", eval.steps, "Gradient steps for loss methods");
  c_eval->add_option("--lr", eval.lr, "Step size for loss methods");
  c_eval->add_option("--init", eval.init, "Mask initialisation for loss methods");
  c_eval->add_option("--seed", eval.seed, "Seed for noise+snr rows");
  c_eval->add_option("--config", eval.config, "JSON overrides for STFT/PESQ constants");
  c_eval->add_flag("--json", eval.json);

  TablesOptions tables;
  auto* c_tables = app.add_subcommand("tables", "Generate a Bark band table");
  c_tables->add_option("--rate", tables.sample_rate, "Sample rate in Hz");
  c_tables->add_option("--fft", tables.fft_size, "FFT size");
  c_tables->add_option("--bands", tables.bands, "Number of Bark bands");
  c_tables->add_option("--out", tables.out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::kBadArgument);
  }

  if (*c_mix) return cmd_mix(mix, std::cout, std::cerr);
  if (*c_score) return cmd_score(score, std::cout, std::cerr);
  if (*c_oracle) return cmd_oracle(oracle, std::cout, std::cerr);
  if (*c_fit) return cmd_fit(fit, std::cout, std::cerr);
  if (*c_eval) return cmd_eval(eval, std::cout, std::cerr);
  return cmd_tables(tables, std::cout, std::cerr);
}
