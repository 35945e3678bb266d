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

#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "sdrpesq/grid.hpp"

namespace sdrpesq {

/// Power-of-two real FFT working on one-sided spectra (bins 0..n/2).
/// Not thread-safe; create one per thread.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n), full_(n), time_(n) {}

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  // out[k] = sum_t in[t] e^{-2 pi i k t / n}, k = 0..n/2
  void forward(std::span<const double> in, std::span<Complex> out) {
    for (std::size_t t = 0; t < n_; ++t) time_[t] = in[t];
    engine_.fwd(full_, time_);
    for (std::size_t k = 0; k < bins(); ++k) out[k] = full_[k];
  }

  // Real inverse of a one-sided spectrum, scaled by 1/n. The imaginary parts
  // of the DC and Nyquist bins are ignored.
  void inverse(std::span<const Complex> in, std::span<double> out) {
    const std::size_t half = n_ / 2;
    full_[0] = in[0].real();
    full_[half] = in[half].real();
    for (std::size_t k = 1; k < half; ++k) {
      full_[k] = in[k];
      full_[n_ - k] = std::conj(in[k]);
    }
    engine_.inv(time_, full_);
    for (std::size_t t = 0; t < n_; ++t) out[t] = time_[t].real();
  }

  // out[t] = Re sum_{k=0}^{n/2} in[k] e^{+2 pi i k t / n}, no doubling or
  // scaling. Adjoint of `forward` under the real inner product.
  void forward_adjoint(std::span<const Complex> in, std::span<double> out) {
    for (std::size_t k = 0; k < n_; ++k) full_[k] = k < bins() ? in[k] : Complex{};
    engine_.inv(time_, full_);
    const double n = static_cast<double>(n_);
    for (std::size_t t = 0; t < n_; ++t) out[t] = n * time_[t].real();
  }

 private:
  std::size_t n_;
  Eigen::FFT<double> engine_;
  std::vector<Complex> full_;
  std::vector<Complex> time_;
};

}  // namespace sdrpesq
