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
#include <string>
#include <string_view>
#include <vector>

#include "sdrpesq/error.hpp"
#include "sdrpesq/grid.hpp"

namespace sdrpesq {

enum class LabelKind { kIbm, kIrm, kIam, kPsm, kFree };

inline std::string_view to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::kIbm: return "ibm";
    case LabelKind::kIrm: return "irm";
    case LabelKind::kIam: return "iam";
    case LabelKind::kPsm: return "psm";
    case LabelKind::kFree: return "free";
  }
  return "free";
}

inline LabelKind parse_label_kind(std::string_view name) {
  if (name == "ibm") return LabelKind::kIbm;
  if (name == "irm") return LabelKind::kIrm;
  if (name == "iam") return LabelKind::kIam;
  if (name == "psm") return LabelKind::kPsm;
  if (name == "free") return LabelKind::kFree;
  fail(ErrorKind::kBadArgument, "unknown mask kind: " + std::string(name));
}

struct MaskGrid {
  RealGrid values;
  LabelKind label_kind = LabelKind::kFree;
};

struct MaskConfig {
  // Per-bin log-scale IBM threshold in dB; a single entry applies to all bins.
  std::vector<double> ibm_threshold_db = {0.0};
  double epsilon = 1e-8;
  // Range applied to IAM labels when used to initialise a fit.
  double iam_label_max = 10.0;

  double threshold_db(std::size_t bin) const {
    if (ibm_threshold_db.empty()) return 0.0;
    return ibm_threshold_db.size() == 1 ? ibm_threshold_db.front() : ibm_threshold_db.at(bin);
  }
};

inline MaskGrid ibm_label(const ComplexGrid& clean, const ComplexGrid& noise,
                          const MaskConfig& cfg = {}) {
  require_same_shape(clean, noise, "ibm_label: dimension mismatch");
  MaskGrid mask{RealGrid(clean.rows(), clean.cols()), LabelKind::kIbm};
  for (std::size_t m = 0; m < clean.rows(); ++m)
    for (std::size_t k = 0; k < clean.cols(); ++k) {
      const double x = std::abs(clean(m, k));
      const double n = std::abs(noise(m, k));
      const double threshold = std::pow(10.0, cfg.threshold_db(k) / 10.0);
      // |N| = 0 is an infinite ratio.
      mask.values(m, k) = (n == 0.0 || x / n >= threshold) ? 1.0 : 0.0;
    }
  return mask;
}

inline MaskGrid irm_label(const ComplexGrid& clean, const ComplexGrid& noise) {
  require_same_shape(clean, noise, "irm_label: dimension mismatch");
  MaskGrid mask{RealGrid(clean.rows(), clean.cols()), LabelKind::kIrm};
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double x = std::abs(clean[i]);
    const double n = std::abs(noise[i]);
    mask.values[i] = (x + n) > 0.0 ? x / (x + n) : 0.5;
  }
  return mask;
}

/// |X| / max(|Y|, epsilon). Unbounded above.
inline MaskGrid iam_label(const ComplexGrid& clean, const ComplexGrid& noisy,
                          const MaskConfig& cfg = {}) {
  require_same_shape(clean, noisy, "iam_label: dimension mismatch");
  MaskGrid mask{RealGrid(clean.rows(), clean.cols()), LabelKind::kIam};
  for (std::size_t i = 0; i < clean.size(); ++i)
    mask.values[i] = std::abs(clean[i]) / std::max(std::abs(noisy[i]), cfg.epsilon);
  return mask;
}

/// IAM scaled by cos(angle Y - angle X). May be negative.
inline MaskGrid psm_label(const ComplexGrid& clean, const ComplexGrid& noisy,
                          const MaskConfig& cfg = {}) {
  MaskGrid mask = iam_label(clean, noisy, cfg);
  mask.label_kind = LabelKind::kPsm;
  for (std::size_t i = 0; i < clean.size(); ++i)
    mask.values[i] *= std::cos(std::arg(noisy[i]) - std::arg(clean[i]));
  return mask;
}

inline MaskGrid clip_mask(MaskGrid mask, double lo, double hi) {
  for (double& v : mask.values) v = std::clamp(v, lo, hi);
  return mask;
}

/// M * Y: magnitude |M||Y| with the noisy phase, rotated by pi where M < 0.
inline ComplexGrid apply_mask(const MaskGrid& mask, const ComplexGrid& noisy) {
  require_same_shape(mask.values, noisy, "apply_mask: dimension mismatch");
  ComplexGrid out(noisy.rows(), noisy.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.values[i] * noisy[i];
  return out;
}

inline RealGrid magnitude(const ComplexGrid& s) {
  RealGrid out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = std::abs(s[i]);
  return out;
}

inline RealGrid phase(const ComplexGrid& s) {
  RealGrid out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = std::arg(s[i]);
  return out;
}

// Distortion metrics, summed over the grid.

/// sum (M - L)^2
inline double d1(const MaskGrid& mask, const MaskGrid& label) {
  require_same_shape(mask.values, label.values, "d1: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const double d = mask.values[i] - label.values[i];
    s += d * d;
  }
  return s;
}

/// sum (M |Y| - |X|)^2
inline double d2(const MaskGrid& mask, const RealGrid& clean_mag, const RealGrid& noisy_mag) {
  require_same_shape(mask.values, clean_mag, "d2: dimension mismatch");
  require_same_shape(mask.values, noisy_mag, "d2: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const double d = mask.values[i] * noisy_mag[i] - clean_mag[i];
    s += d * d;
  }
  return s;
}

/// sum |M Y - X|^2
inline double d3_complex(const MaskGrid& mask, const ComplexGrid& clean, const ComplexGrid& noisy) {
  require_same_shape(mask.values, clean, "d3: dimension mismatch");
  require_same_shape(mask.values, noisy, "d3: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) s += std::norm(mask.values[i] * noisy[i] - clean[i]);
  return s;
}

/// sum (M |Y| - |X| cos(angle Y - angle X))^2. Differs from d3_complex by
/// sum |X|^2 sin^2(angle Y - angle X), which does not depend on M.
inline double d3_cosine(const MaskGrid& mask, const ComplexGrid& clean, const ComplexGrid& noisy) {
  require_same_shape(mask.values, clean, "d3: dimension mismatch");
  require_same_shape(mask.values, noisy, "d3: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = mask.values[i] * std::abs(noisy[i]) -
                     std::abs(clean[i]) * std::cos(std::arg(noisy[i]) - std::arg(clean[i]));
    s += d * d;
  }
  return s;
}

}  // namespace sdrpesq
