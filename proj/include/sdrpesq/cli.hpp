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
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdrpesq/audio_io.hpp"
#include "sdrpesq/bark_table.hpp"
#include "sdrpesq/config.hpp"
#include "sdrpesq/error.hpp"
#include "sdrpesq/grad_fit.hpp"
#include "sdrpesq/masks.hpp"
#include "sdrpesq/pesq_loss.hpp"
#include "sdrpesq/sdr_loss.hpp"
#include "sdrpesq/spectral.hpp"

namespace sdrpesq {

// Each command returns a process exit status and never throws. Regular
// output goes to `out`, diagnostics to `err`.

struct MixOptions {
  std::string clean;
  std::string noise;
  double snr_db = 0.0;
  std::string out;
  std::string noise_out;  // defaults to <out stem>.noise.wav
  std::uint64_t seed = 0;
  bool json = false;
};

struct ScoreOptions {
  std::string clean;
  std::string estimate;
  std::string config;
  bool json = false;
};

struct OracleOptions {
  std::string clean;
  std::string noise;
  std::string mask = "psm";
  std::size_t gl_iters = 1;
  std::string out;
  std::string config;
  bool json = false;
};

struct FitOptions {
  std::string clean;
  std::string noise;
  std::string loss = "sdr";
  std::size_t steps = 200;
  double lr = 10.0;
  std::string init = "ones";
  double init_value = 1.0;
  std::size_t gl_iters = 1;
  std::string out_csv;
  std::string out_wav;  // defaults to out_csv with a .wav extension
  std::string config;
  bool json = false;
};

struct EvalOptions {
  std::string manifest;
  std::string out;  // report prefix; writes <out>.csv and <out>.json
  std::size_t jobs = 1;
  std::size_t gl_iters = 1;
  std::size_t steps = 200;
  double lr = 10.0;
  std::string init = "ones";
  std::uint64_t seed = 0;
  std::string config;
  bool json = false;
};

struct TablesOptions {
  int sample_rate = 16000;
  std::size_t fft_size = 512;
  std::size_t bands = 49;
  std::string out;
};

/// Fixed-point with 6 decimals; -0 prints as 0.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::abs(v) < 5e-7) v = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline MaskInit parse_mask_init(const std::string& s) {
  if (s == "ones") return MaskInit::kOnes;
  if (s == "iam") return MaskInit::kIam;
  if (s == "value") return MaskInit::kValue;
  fail(ErrorKind::kBadArgument, "unknown mask init: " + s);
}

/// Oracle label of the given kind for a clean/noise pair.
inline MaskGrid oracle_mask(LabelKind kind, const ComplexGrid& clean, const ComplexGrid& noise,
                            const ComplexGrid& noisy, const MaskConfig& mc = {}) {
  switch (kind) {
    case LabelKind::kIbm: return ibm_label(clean, noise, mc);
    case LabelKind::kIrm: return irm_label(clean, noise);
    case LabelKind::kIam: return iam_label(clean, noisy, mc);
    case LabelKind::kPsm: return psm_label(clean, noisy, mc);
    case LabelKind::kFree: break;
  }
  fail(ErrorKind::kBadArgument, "not an oracle mask kind: free");
}

inline LabelKind parse_oracle_kind(const std::string& name) {
  const LabelKind k = parse_label_kind(name);
  if (k == LabelKind::kFree) fail(ErrorKind::kBadArgument, "not an oracle mask kind: " + name);
  return k;
}

/// Noisy = clean + noise, masked with an oracle label and reconstructed with
/// `gl_iters` Griffin-Lim iterations.
inline std::vector<double> oracle_denoise(std::span<const double> clean, std::span<const double> noise,
                                          LabelKind kind, std::size_t gl_iters, const StftConfig& cfg) {
  if (clean.size() != noise.size()) fail(ErrorKind::kShapeMismatch, "clean and noise lengths differ");
  std::vector<double> noisy(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) noisy[i] = clean[i] + noise[i];
  const ComplexGrid y = stft(noisy, cfg);
  const MaskGrid mask = oracle_mask(kind, stft(clean, cfg), stft(noise, cfg), y);
  return reconstruct(mask, y, cfg, gl_iters, clean.size()).signal;
}

struct Metrics {
  double si_sdr = 0.0;  // dB, clamped to +-60
  double pesq = 0.0;
};

inline Metrics measure(std::span<const double> clean, std::span<const double> estimate, const PesqContext& ctx) {
  return {clamp_sdr(si_sdr(clean, estimate)), pesq_loss(clean, estimate, ctx.stft, ctx.pesq, ctx.table).value};
}

namespace detail {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kBadArgument);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kPartial);
  }
}

inline std::string replace_extension(const std::string& path, const std::string& ext) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + ext;
  return path.substr(0, dot) + ext;
}

inline void require_aligned(const Waveform& a, const Waveform& b, const std::string& what) {
  if (a.sample_rate != b.sample_rate) fail(ErrorKind::kBadArgument, what + ": sample rates differ");
  if (a.size() != b.size()) fail(ErrorKind::kShapeMismatch, what + ": lengths differ");
}

inline void print_fields(std::ostream& out, const std::vector<std::pair<std::string, double>>& fields) {
  for (const auto& [k, v] : fields) out << k << " " << format_number(v) << "\n";
}

inline nlohmann::json json_fields(const std::vector<std::pair<std::string, double>>& fields) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : fields) j[k] = v;
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kMissingInput, "cannot write " + path);
  f << text;
  if (!f) fail(ErrorKind::kMissingInput, "write failed: " + path);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_mix(const MixOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const Waveform clean = read_wav(o.clean);
    const Waveform noise = read_wav(o.noise);
    const Mixture m = mix_at_snr(clean, noise, {o.snr_db, o.seed});
    const std::string noise_out = o.noise_out.empty() ? detail::replace_extension(o.out, ".noise.wav") : o.noise_out;
    write_wav(m.noisy, o.out);
    write_wav(m.scaled_noise, noise_out);
    const double achieved = snr_db(clean.samples, m.scaled_noise.samples);
    if (o.json) {
      out << nlohmann::json{{"snr_db", achieved}, {"noisy", o.out}, {"noise", noise_out}}.dump() << "\n";
    } else {
      out << "snr_db " << format_number(achieved) << "\n";
    }
    return 0;
  });
}

inline int cmd_score(const ScoreOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const RunConfig cfg = RunConfig::load(o.config);
    const Waveform clean = read_wav(o.clean);
    const Waveform est = read_wav(o.estimate);
    detail::require_aligned(clean, est, "score");
    const PesqContext ctx = cfg.context(clean.sample_rate);
    const Metrics m = measure(clean.samples, est.samples, ctx);
    const std::vector<std::pair<std::string, double>> fields{{"si_sdr", m.si_sdr}, {"pesq", m.pesq}};
    if (o.json) {
      nlohmann::json j = detail::json_fields(fields);
      j["config_digest"] = config_digest(ctx);
      out << j.dump() << "\n";
    } else {
      detail::print_fields(out, fields);
    }
    return 0;
  });
}

inline int cmd_oracle(const OracleOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const LabelKind kind = parse_oracle_kind(o.mask);
    if (o.gl_iters < 1) fail(ErrorKind::kBadArgument, "gl-iters must be at least 1");
    const RunConfig cfg = RunConfig::load(o.config);
    const Waveform clean = read_wav(o.clean);
    const Waveform noise = read_wav(o.noise);
    detail::require_aligned(clean, noise, "oracle");
    const PesqContext ctx = cfg.context(clean.sample_rate);
    std::vector<double> noisy(clean.size());
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = clean.samples[i] + noise.samples[i];
    const std::vector<double> est = oracle_denoise(clean.samples, noise.samples, kind, o.gl_iters, ctx.stft);
    if (!o.out.empty()) write_wav({est, clean.sample_rate}, o.out);
    const Metrics in = measure(clean.samples, noisy, ctx);
    const Metrics res = measure(clean.samples, est, ctx);
    const std::vector<std::pair<std::string, double>> fields{
        {"si_sdr_in", in.si_sdr}, {"si_sdr_out", res.si_sdr}, {"pesq_in", in.pesq}, {"pesq_out", res.pesq}};
    if (o.json) {
      nlohmann::json j = detail::json_fields(fields);
      j["mask"] = std::string(to_string(kind));
      j["gl_iters"] = o.gl_iters;
      j["config_digest"] = config_digest(ctx);
      out << j.dump() << "\n";
    } else {
      out << "mask " << to_string(kind) << "\n";
      detail::print_fields(out, fields);
    }
    return 0;
  });
}

inline std::string trajectory_csv(std::span<const TrajectoryRow> rows) {
  std::string s = "step,loss,si_sdr,pesq_score\n";
  for (const auto& r : rows)
    s += std::to_string(r.step) + "," + format_number(r.loss) + "," + format_number(r.si_sdr) + "," +
         format_number(r.pesq_score) + "\n";
  return s;
}

inline int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    FitConfig fc;
    fc.loss_kind = parse_loss_kind(o.loss);
    fc.steps = o.steps;
    fc.step_size = o.lr;
    fc.mask_init = parse_mask_init(o.init);
    fc.init_value = o.init_value;
    fc.validate();
    if (o.gl_iters < 1) fail(ErrorKind::kBadArgument, "gl-iters must be at least 1");
    if (o.out_csv.empty()) fail(ErrorKind::kBadArgument, "an output CSV path is required");
    const RunConfig cfg = RunConfig::load(o.config);
    const Waveform clean = read_wav(o.clean);
    const Waveform noise = read_wav(o.noise);
    detail::require_aligned(clean, noise, "fit");
    const FitProblem problem = FitProblem::from_signals(clean.samples, noise.samples, cfg.context(clean.sample_rate));
    const FitResult r = fit_with_gl_iterations(problem, fc, o.gl_iters);

    detail::write_text(o.out_csv, trajectory_csv(r.trajectory));
    const std::string wav = o.out_wav.empty() ? detail::replace_extension(o.out_csv, ".wav") : o.out_wav;
    write_wav({r.estimate, clean.sample_rate}, wav);
    if (r.diverged) {
      err << "error: diverged: " << r.message << "\n";
      return static_cast<int>(ErrorKind::kDivergence);
    }
    const TrajectoryRow& last = r.trajectory.back();
    const std::vector<std::pair<std::string, double>> fields{
        {"loss", last.loss}, {"si_sdr", last.si_sdr}, {"pesq", last.pesq_score}};
    if (o.json) {
      nlohmann::json j = detail::json_fields(fields);
      j["loss_kind"] = std::string(to_string(fc.loss_kind));
      j["steps"] = fc.steps;
      j["config_digest"] = config_digest(problem.ctx);
      out << j.dump() << "\n";
    } else {
      out << "loss_kind " << to_string(fc.loss_kind) << "\n";
      detail::print_fields(out, fields);
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Batch evaluation

inline constexpr const char* kManifestHeader = "id,clean,noisy,noise,snr,method";

struct ManifestRow {
  std::size_t line = 0;
  std::vector<std::string> fields;  // id, clean, noisy, noise, snr, method
};

struct ReportRow {
  std::string id;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double pesq_in = 0.0;
  double pesq_out = 0.0;
  std::string loss_kind;
  std::string config_digest;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

namespace detail {

inline std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty() || p.front() == '/' || base_dir.empty()) return p;
  return base_dir + "/" + p;
}

inline ReportRow evaluate_row(const ManifestRow& row, const std::string& base_dir, const EvalOptions& o,
                              const RunConfig& cfg) {
  const auto& f = row.fields;
  if (f.size() != 6)
    fail(ErrorKind::kBadArgument, "expected 6 fields, got " + std::to_string(f.size()));
  const std::string& id = f[0];
  const std::string& method = f[5];
  if (id.empty()) fail(ErrorKind::kBadArgument, "empty id");
  if (f[1].empty()) fail(ErrorKind::kBadArgument, "clean path is required");
  if (method.empty()) fail(ErrorKind::kBadArgument, "method is required");

  const Waveform clean = read_wav(resolve(base_dir, f[1]));
  Waveform noisy, noise;
  if (!f[2].empty()) {
    noisy = read_wav(resolve(base_dir, f[2]));
    require_aligned(clean, noisy, "noisy");
    if (!f[3].empty()) {
      noise = read_wav(resolve(base_dir, f[3]));
      require_aligned(clean, noise, "noise");
    } else {
      noise = {std::vector<double>(clean.size()), clean.sample_rate};
      for (std::size_t i = 0; i < clean.size(); ++i) noise.samples[i] = noisy.samples[i] - clean.samples[i];
    }
  } else {
    if (f[3].empty() || f[4].empty()) fail(ErrorKind::kBadArgument, "either noisy or noise+snr is required");
    double snr = 0.0;
    try {
      std::size_t used = 0;
      snr = std::stod(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument(f[4]);
    } catch (const std::exception&) {
      fail(ErrorKind::kBadArgument, "bad snr: " + f[4]);
    }
    const Mixture m = mix_at_snr(clean, read_wav(resolve(base_dir, f[3])), {snr, o.seed});
    noisy = m.noisy;
    noise = m.scaled_noise;
  }

  const PesqContext ctx = cfg.context(clean.sample_rate);
  std::vector<double> est;
  std::string kind;
  if (method == "noisy") {
    est = noisy.samples;
    kind = "noisy";
  } else if (method == "ibm" || method == "irm" || method == "iam" || method == "psm") {
    const LabelKind k = parse_oracle_kind(method);
    est = oracle_denoise(clean.samples, noise.samples, k, o.gl_iters, ctx.stft);
    kind = std::string(to_string(k));
  } else {
    FitConfig fc;
    fc.loss_kind = parse_loss_kind(method);
    fc.steps = o.steps;
    fc.step_size = o.lr;
    fc.mask_init = parse_mask_init(o.init);
    const FitProblem problem = FitProblem::from_signals(clean.samples, noise.samples, ctx);
    const FitResult r = fit_with_gl_iterations(problem, fc, o.gl_iters);
    if (r.diverged) fail(ErrorKind::kDivergence, "diverged: " + r.message);
    est = r.estimate;
    kind = std::string(to_string(fc.loss_kind));
  }
  const Metrics in = measure(clean.samples, noisy.samples, ctx);
  const Metrics res = measure(clean.samples, est, ctx);
  return {id, in.si_sdr, res.si_sdr, in.pesq, res.pesq, kind, config_digest(ctx)};
}

}  // namespace detail

/// Parses a manifest. Malformed rows are kept and reported during
/// evaluation so the line numbers survive.
inline std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kMissingInput, "cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header_seen) {
      if (line != kManifestHeader)
        fail(ErrorKind::kBadArgument, "manifest header must be '" + std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    rows.push_back({number, detail::split_csv(line)});
  }
  return rows;
}

inline std::string report_csv(std::span<const ReportRow> rows) {
  std::string s = "id,si_sdr_in,si_sdr_out,pesq_in,pesq_out,loss_kind,config_digest\n";
  for (const auto& r : rows)
    s += r.id + "," + format_number(r.si_sdr_in) + "," + format_number(r.si_sdr_out) + "," +
         format_number(r.pesq_in) + "," + format_number(r.pesq_out) + "," + r.loss_kind + "," + r.config_digest +
         "\n";
  return s;
}

inline nlohmann::json report_json(std::span<const ReportRow> rows, std::span<const RowError> errors) {
  nlohmann::json j_rows = nlohmann::json::array();
  for (const auto& r : rows)
    j_rows.push_back({{"id", r.id},
                      {"si_sdr_in", r.si_sdr_in},
                      {"si_sdr_out", r.si_sdr_out},
                      {"pesq_in", r.pesq_in},
                      {"pesq_out", r.pesq_out},
                      {"loss_kind", r.loss_kind},
                      {"config_digest", r.config_digest}});
  nlohmann::json j_err = nlohmann::json::array();
  for (const auto& e : errors) j_err.push_back({{"line", e.line}, {"message", e.message}});
  return {{"schema", "sdrpesq.report/1"}, {"rows", j_rows}, {"errors", j_err}};
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    if (o.out.empty()) fail(ErrorKind::kBadArgument, "an output report path is required");
    parse_mask_init(o.init);
    const RunConfig cfg = RunConfig::load(o.config);
    const std::vector<ManifestRow> rows = read_manifest(o.manifest);
    const auto slash = o.manifest.find_last_of('/');
    const std::string base_dir = slash == std::string::npos ? std::string() : o.manifest.substr(0, slash);

    std::vector<std::optional<ReportRow>> results(rows.size());
    std::vector<std::string> messages(rows.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) {
        try {
          results[i] = detail::evaluate_row(rows[i], base_dir, o, cfg);
        } catch (const std::exception& e) {
          messages[i] = e.what();
        }
      }
    };
    std::size_t jobs = o.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : o.jobs;
    jobs = std::min(jobs, std::max<std::size_t>(rows.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<ReportRow> report;
    std::vector<RowError> errors;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (results[i]) {
        report.push_back(*results[i]);
      } else {
        errors.push_back({rows[i].line, messages[i]});
        err << "line " << rows[i].line << ": " << messages[i] << "\n";
      }
    }
    std::string prefix = o.out;
    for (const char* ext : {".csv", ".json"})
      if (prefix.size() > std::string(ext).size() && prefix.ends_with(ext))
        prefix.resize(prefix.size() - std::string(ext).size());
    const nlohmann::json j = report_json(report, errors);
    detail::write_text(prefix + ".csv", report_csv(report));
    detail::write_text(prefix + ".json", j.dump(2) + "\n");
    if (o.json) {
      out << j.dump() << "\n";
    } else {
      out << "rows " << report.size() << "\nfailed " << errors.size() << "\n";
    }
    return errors.empty() ? 0 : static_cast<int>(ErrorKind::kPartial);
  });
}

inline int cmd_tables(const TablesOptions& o, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    BarkTableRecipe recipe;
    recipe.bands = o.bands;
    const BarkTable t = BarkTable::generate(o.sample_rate, o.fft_size, recipe);
    const std::string text = t.to_json().dump(2) + "\n";
    if (o.out.empty()) {
      out << text;
    } else {
      detail::write_text(o.out, text);
    }
    return 0;
  });
}

}  // namespace sdrpesq
