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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdrpesq/joint_loss.hpp"
#include "sdrpesq/masks.hpp"
#include "sdrpesq/pesq_loss.hpp"
#include "sdrpesq/sdr_loss.hpp"
#include "sdrpesq/spectral.hpp"

namespace sdrpesq {

enum class LossKind { kSdr, kSnrMse, kSdrMse, kSdrPesq, kPesq };

inline constexpr LossKind kAllLossKinds[] = {LossKind::kSdr, LossKind::kSnrMse, LossKind::kSdrMse,
                                             LossKind::kSdrPesq, LossKind::kPesq};

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kSdr: return "sdr";
    case LossKind::kSnrMse: return "snr";
    case LossKind::kSdrMse: return "sdr-mse";
    case LossKind::kSdrPesq: return "sdr-pesq";
    case LossKind::kPesq: return "pesq";
  }
  return "sdr";
}

inline LossKind parse_loss_kind(std::string_view name) {
  if (name == "sdr") return LossKind::kSdr;
  if (name == "snr" || name == "snr-mse") return LossKind::kSnrMse;
  if (name == "sdr-mse") return LossKind::kSdrMse;
  if (name == "sdr-pesq") return LossKind::kSdrPesq;
  if (name == "pesq") return LossKind::kPesq;
  fail(ErrorKind::kBadArgument, "unknown loss kind: " + std::string(name));
}

enum class MaskInit { kOnes, kIam, kValue };

struct FitConfig {
  LossKind loss_kind = LossKind::kSdr;
  std::size_t steps = 200;
  double step_size = 10.0;
  MaskInit mask_init = MaskInit::kOnes;
  double init_value = 1.0;  // used by MaskInit::kValue
  std::optional<std::pair<double, double>> clamp = std::pair{-2.0, 3.0};
  bool line_search = true;  // halve the step while the loss would decrease
  std::size_t max_halvings = 30;

  void validate() const {
    if (steps < 1) fail(ErrorKind::kBadArgument, "steps must be at least 1");
    if (!(step_size > 0.0)) fail(ErrorKind::kBadArgument, "step_size must be positive");
    if (clamp && clamp->first > clamp->second) fail(ErrorKind::kBadArgument, "empty clamp range");
  }
};

/// Fixed data of one utterance: the noisy spectrogram the mask acts on and
/// the references the losses compare against.
struct FitProblem {
  std::vector<double> clean;
  std::vector<double> noise;
  std::vector<double> noisy;
  ComplexGrid noisy_spec;
  ComplexGrid clean_spec;
  RealGrid noisy_mag;
  RealGrid clean_mag;
  PesqContext ctx;
  JointLossConfig joint;

  static FitProblem from_signals(std::span<const double> clean, std::span<const double> noise,
                                 PesqContext ctx = {}, JointLossConfig joint = {}) {
    if (clean.size() != noise.size()) fail(ErrorKind::kShapeMismatch, "clean and noise lengths differ");
    FitProblem p;
    p.clean.assign(clean.begin(), clean.end());
    p.noise.assign(noise.begin(), noise.end());
    p.noisy.resize(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) p.noisy[i] = clean[i] + noise[i];
    p.noisy_spec = stft(p.noisy, ctx.stft);
    p.clean_spec = stft(p.clean, ctx.stft);
    p.noisy_mag = magnitude(p.noisy_spec);
    p.clean_mag = magnitude(p.clean_spec);
    p.ctx = std::move(ctx);
    p.joint = joint;
    return p;
  }

  std::size_t length() const noexcept { return clean.size(); }
};

// ---------------------------------------------------------------------------
// Mask -> waveform, with a reverse pass

/// Forward state of apply_mask -> (iterative) Griffin-Lim.
struct Reconstruction {
  std::vector<double> signal;
  std::vector<ComplexGrid> spectra;  // STFT of each intermediate signal that fed a phase update
  RealGrid amplitude;                // |M| |Y|
  std::uint64_t sign_signature = 0;
};

/// Iteration 1 is istft_gl(M * Y). Later iterations keep the amplitude
/// |M||Y| and take the phase of the previous reconstruction.
inline Reconstruction reconstruct(const MaskGrid& mask, const ComplexGrid& noisy, const StftConfig& cfg,
                                  std::size_t gl_iterations, std::size_t length) {
  if (gl_iterations < 1) fail(ErrorKind::kBadArgument, "gl_iterations must be at least 1");
  Reconstruction r;
  r.signal = istft_gl(apply_mask(mask, noisy), cfg, length);
  if (gl_iterations == 1) return r;
  r.amplitude = RealGrid(noisy.rows(), noisy.cols());
  BranchSignature sig;
  for (std::size_t j = 0; j < noisy.size(); ++j) {
    r.amplitude[j] = std::abs(mask.values[j]) * std::abs(noisy[j]);
    sig.add(mask.values[j] > 0.0 ? 1 : (mask.values[j] < 0.0 ? 2 : 0));
  }
  r.sign_signature = sig.value();
  ComplexGrid target(noisy.rows(), noisy.cols());
  for (std::size_t i = 1; i < gl_iterations; ++i) {
    r.spectra.push_back(stft(r.signal, cfg));
    const ComplexGrid& z = r.spectra.back();
    for (std::size_t j = 0; j < z.size(); ++j) target[j] = r.amplitude[j] * unit_phasor(z[j]);
    r.signal = istft_gl(target, cfg, length);
  }
  return r;
}

/// d loss / d mask given d loss / d reconstructed samples.
inline RealGrid reconstruct_backward(const Reconstruction& r, const MaskGrid& mask, const ComplexGrid& noisy,
                                     const StftConfig& cfg, std::vector<double> grad_signal) {
  const std::size_t frames = noisy.rows();
  const std::size_t length = grad_signal.size();
  RealGrid grad_amplitude(frames, noisy.cols());
  for (std::size_t i = r.spectra.size(); i-- > 0;) {
    const ComplexGrid g_target = istft_gl_adjoint(grad_signal, cfg, frames);
    const ComplexGrid& z = r.spectra[i];
    ComplexGrid g_z(frames, noisy.cols());
    for (std::size_t j = 0; j < z.size(); ++j) {
      const Complex u = unit_phasor(z[j]);
      grad_amplitude[j] += (std::conj(g_target[j]) * u).real();
      const double rad = std::abs(z[j]);
      if (rad > 0.0) {
        const Complex g_u = r.amplitude[j] * g_target[j];
        const double c = -(std::conj(g_u) * u).imag() / rad;
        g_z[j] = Complex(0.0, c) * u;
      }
    }
    grad_signal = stft_adjoint(g_z, cfg, length);
  }
  const ComplexGrid g_first = istft_gl_adjoint(grad_signal, cfg, frames);
  RealGrid grad(frames, noisy.cols());
  for (std::size_t j = 0; j < grad.size(); ++j) {
    grad[j] = (std::conj(g_first[j]) * noisy[j]).real();
    if (!r.spectra.empty()) {
      const double sign = mask.values[j] > 0.0 ? 1.0 : (mask.values[j] < 0.0 ? -1.0 : 0.0);
      grad[j] += grad_amplitude[j] * sign * std::abs(noisy[j]);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Loss and gradient

/// Forward loss through apply_mask -> Griffin-Lim -> loss, and optionally its
/// exact gradient w.r.t. the mask. Every kind is oriented so larger is
/// better: SNR_MSE reports -sum (x - xhat)^2.
inline LossReport loss_and_grad(const MaskGrid& mask, const FitProblem& p, LossKind kind,
                                std::size_t gl_iterations = 1, bool want_gradient = true) {
  require_same_shape(mask.values, p.noisy_spec, "mask does not match the noisy spectrogram");
  const StftConfig& cfg = p.ctx.stft;
  const Reconstruction rec = reconstruct(mask, p.noisy_spec, cfg, gl_iterations, p.length());
  const std::vector<double>& est = rec.signal;

  LossReport report;
  BranchSignature sig;
  sig.add(rec.sign_signature);
  std::vector<double> g_signal(est.size(), 0.0);
  std::optional<RealGrid> g_direct;
  const double w = p.joint.pesq_weight;

  const bool uses_sdr = kind == LossKind::kSdr || kind == LossKind::kSdrMse || kind == LossKind::kSdrPesq;
  const bool uses_pesq = kind == LossKind::kSdrPesq || kind == LossKind::kPesq;

  const SiSdrResult sdr = si_sdr_with_gradient(p.clean, est, want_gradient && uses_sdr);
  const double sdr_clamped = clamp_sdr(sdr.value_db);
  report.diagnostics["si_sdr"] = sdr_clamped;

  double value = 0.0;
  if (uses_sdr) {
    value += sdr_clamped;
    const bool clamped = !(std::abs(sdr.value_db) < kSdrClampDb);
    sig.add(clamped ? 1 : 0);
    if (want_gradient && !clamped)
      for (std::size_t i = 0; i < est.size(); ++i) g_signal[i] += sdr.gradient[i];
  }
  if (kind == LossKind::kSnrMse) {
    value = -snr_mse_loss(p.clean, est);
    if (want_gradient)
      for (std::size_t i = 0; i < est.size(); ++i) g_signal[i] += 2.0 * (p.clean[i] - est[i]);
  }
  if (kind == LossKind::kSdrMse) {
    const double mse = spectrum_mse(mask, p.noisy_mag, p.clean_mag);
    report.diagnostics["spectrum_mse"] = mse;
    value -= w * mse;
    if (want_gradient) {
      g_direct = RealGrid(mask.values.rows(), mask.values.cols());
      for (std::size_t j = 0; j < g_direct->size(); ++j)
        (*g_direct)[j] = -w * 2.0 * (mask.values[j] * p.noisy_mag[j] - p.clean_mag[j]) * p.noisy_mag[j];
    }
  }
  if (uses_pesq) {
    const PesqGradient pg = pesq_score_and_gradient(p.clean, est, cfg, p.ctx.pesq, p.ctx.table, want_gradient);
    report.diagnostics["pesq"] = pg.score;
    sig.add(pg.branch_signature);
    const double weight = kind == LossKind::kPesq ? 1.0 : w;
    value += weight * pg.score;
    if (want_gradient)
      for (std::size_t i = 0; i < est.size(); ++i) g_signal[i] += weight * pg.gradient[i];
  }

  report.value = value;
  report.branch_signature = sig.value();
  if (want_gradient) {
    RealGrid g = reconstruct_backward(rec, mask, p.noisy_spec, cfg, std::move(g_signal));
    if (g_direct)
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += (*g_direct)[j];
    report.gradient = std::move(g);
  }
  return report;
}

/// Central differences (f(M + eps e_j) - f(M - eps e_j)) / 2 eps per entry.
template <typename LossFn>
RealGrid fd_gradient(const MaskGrid& mask, LossFn&& loss, double epsilon) {
  if (!(epsilon > 0.0)) fail(ErrorKind::kBadArgument, "epsilon must be positive");
  RealGrid grad(mask.values.rows(), mask.values.cols());
  MaskGrid probe = mask;
  for (std::size_t j = 0; j < grad.size(); ++j) {
    const double base = mask.values[j];
    probe.values[j] = base + epsilon;
    const double up = loss(probe);
    probe.values[j] = base - epsilon;
    const double down = loss(probe);
    probe.values[j] = base;
    grad[j] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

inline RealGrid fd_gradient(const MaskGrid& mask, const FitProblem& p, LossKind kind, double epsilon,
                            std::size_t gl_iterations = 1) {
  return fd_gradient(
      mask, [&](const MaskGrid& m) { return loss_and_grad(m, p, kind, gl_iterations, false).value; }, epsilon);
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries whose +-eps probes cross a branch boundary
};

/// Compares loss_and_grad with central differences. An entry is skipped when
/// either probe lands on a different smooth piece (different branch
/// signature) than the base point. The relative error of entry j is
/// |g - fd| / max(|g|, |fd|, 1e-6 max_k |g_k|).
inline GradientCheck check_gradient(const MaskGrid& mask, const FitProblem& p, LossKind kind, double epsilon,
                                    std::size_t gl_iterations = 1) {
  const LossReport base = loss_and_grad(mask, p, kind, gl_iterations, true);
  const RealGrid& g = *base.gradient;
  double scale = 0.0;
  for (double v : g) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-6 * scale, 1e-300);
  GradientCheck out;
  MaskGrid probe = mask;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double v = mask.values[j];
    probe.values[j] = v + epsilon;
    const LossReport up = loss_and_grad(probe, p, kind, gl_iterations, false);
    probe.values[j] = v - epsilon;
    const LossReport down = loss_and_grad(probe, p, kind, gl_iterations, false);
    probe.values[j] = v;
    if (up.branch_signature != base.branch_signature || down.branch_signature != base.branch_signature) {
      ++out.skipped;
      continue;
    }
    const double fd = (up.value - down.value) / (2.0 * epsilon);
    const double denom = std::max({std::abs(g[j]), std::abs(fd), floor});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(g[j] - fd) / denom);
    ++out.checked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask fitting

struct TrajectoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double si_sdr = 0.0;      // dB, clamped to +-60
  double pesq_score = 0.0;  // NaN when the reconstruction is silent
};

struct FitResult {
  MaskGrid mask;
  std::vector<double> estimate;
  std::vector<TrajectoryRow> trajectory;
  bool diverged = false;
  std::string message;
};

inline MaskGrid initial_mask(const FitProblem& p, const FitConfig& cfg) {
  MaskGrid m{RealGrid(p.noisy_spec.rows(), p.noisy_spec.cols(), 1.0), LabelKind::kFree};
  if (cfg.mask_init == MaskInit::kValue) m.values = RealGrid(m.values.rows(), m.values.cols(), cfg.init_value);
  if (cfg.mask_init == MaskInit::kIam) {
    const MaskConfig mc;
    m.values = clip_mask(iam_label(p.clean_spec, p.noisy_spec, mc), 0.0, mc.iam_label_max).values;
  }
  if (cfg.clamp) m = clip_mask(std::move(m), cfg.clamp->first, cfg.clamp->second);
  m.label_kind = LabelKind::kFree;
  return m;
}

namespace detail {

inline double pesq_or_nan(const FitProblem& p, std::span<const double> estimate) {
  try {
    return pesq_score_and_gradient(p.clean, estimate, p.ctx.stft, p.ctx.pesq, p.ctx.table, false).score;
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline std::optional<LossReport> try_loss(const MaskGrid& m, const FitProblem& p, LossKind kind,
                                          std::size_t gl, bool grad) {
  try {
    LossReport r = loss_and_grad(m, p, kind, gl, grad);
    if (!std::isfinite(r.value)) return std::nullopt;
    return r;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kDegenerateSignal) return std::nullopt;
    throw;
  }
}

}  // namespace detail

/// Gradient ascent on the mask with the forward pass running
/// `gl_iterations` Griffin-Lim iterations. The trajectory has one row per
/// step plus the initial state. A non-finite loss or gradient stops the run
/// and keeps the last finite state.
inline FitResult fit_with_gl_iterations(const FitProblem& p, const FitConfig& cfg, std::size_t gl_iterations) {
  cfg.validate();
  if (gl_iterations < 1) fail(ErrorKind::kBadArgument, "gl_iterations must be at least 1");
  FitResult result;
  result.mask = initial_mask(p, cfg);

  auto record = [&](std::size_t step, const LossReport& r) {
    const auto rec = reconstruct(result.mask, p.noisy_spec, p.ctx.stft, gl_iterations, p.length());
    result.estimate = rec.signal;
    const auto it = r.diagnostics.find("pesq");
    result.trajectory.push_back({step, r.value, r.diagnostics.at("si_sdr"),
                                 it != r.diagnostics.end() ? it->second : detail::pesq_or_nan(p, rec.signal)});
  };

  auto current = detail::try_loss(result.mask, p, cfg.loss_kind, gl_iterations, true);
  if (!current) {
    result.diverged = true;
    result.message = "loss is not finite at the initial mask";
    result.estimate = reconstruct(result.mask, p.noisy_spec, p.ctx.stft, gl_iterations, p.length()).signal;
    return result;
  }
  record(0, *current);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const RealGrid& grad = *current->gradient;
    if (!std::all_of(grad.begin(), grad.end(), [](double v) { return std::isfinite(v); })) {
      result.diverged = true;
      result.message = "non-finite gradient at step " + std::to_string(step);
      return result;
    }
    double lr = cfg.step_size;
    std::optional<LossReport> accepted;
    MaskGrid trial = result.mask;
    for (std::size_t attempt = 0; attempt <= cfg.max_halvings; ++attempt) {
      for (std::size_t j = 0; j < trial.values.size(); ++j) {
        double v = result.mask.values[j] + lr * grad[j];
        if (cfg.clamp) v = std::clamp(v, cfg.clamp->first, cfg.clamp->second);
        trial.values[j] = v;
      }
      auto next = detail::try_loss(trial, p, cfg.loss_kind, gl_iterations, true);
      if (!cfg.line_search) {
        if (!next) {
          result.diverged = true;
          result.message = "non-finite loss at step " + std::to_string(step);
          return result;
        }
        accepted = std::move(next);
        break;
      }
      if (next && next->value >= current->value) {
        accepted = std::move(next);
        break;
      }
      lr *= 0.5;
    }
    if (accepted) {
      result.mask = trial;
      current = std::move(accepted);
    }
    record(step, *current);
  }
  return result;
}

inline FitResult fit_mask(const FitProblem& p, const FitConfig& cfg) { return fit_with_gl_iterations(p, cfg, 1); }

}  // namespace sdrpesq
