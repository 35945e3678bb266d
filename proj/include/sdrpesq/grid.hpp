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

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "sdrpesq/error.hpp"

namespace sdrpesq {

using Complex = std::complex<double>;

/// Dense row-major frames x columns grid. Rows are STFT frames, columns are
/// frequency bins or Bark bands.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RealGrid = Grid<double>;
using ComplexGrid = Grid<Complex>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::kShapeMismatch, what);
}

// Binary grid file: 8-byte magic "SPGRID01", then little-endian uint64
// rows, cols, components (1 = real, 2 = complex), then row-major float64
// values (complex values stored as re, im pairs).
namespace detail {

inline constexpr char kGridMagic[8] = {'S', 'P', 'G', 'R', 'I', 'D', '0', '1'};

template <typename T>
constexpr std::uint64_t grid_components() {
  if constexpr (std::is_same_v<T, Complex>) {
    return 2;
  } else {
    static_assert(std::is_same_v<T, double>, "grid files hold doubles");
    return 1;
  }
}

}  // namespace detail

template <typename T>
void write_grid(const Grid<T>& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kMissingInput, "cannot open for writing: " + path);
  const std::uint64_t header[3] = {grid.rows(), grid.cols(),
                                   detail::grid_components<T>()};
  out.write(detail::kGridMagic, sizeof(detail::kGridMagic));
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(grid.data().data()),
            static_cast<std::streamsize>(grid.size() * sizeof(T)));
  if (!out) fail(ErrorKind::kMissingInput, "write failed: " + path);
}

template <typename T>
Grid<T> read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kMissingInput, "cannot open: " + path);
  char magic[8];
  std::uint64_t header[3];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, detail::kGridMagic, sizeof(magic)) != 0)
    fail(ErrorKind::kBadArgument, "not a grid file: " + path);
  if (header[2] != detail::grid_components<T>())
    fail(ErrorKind::kBadArgument, "grid component count mismatch: " + path);
  Grid<T> grid(header[0], header[1]);
  in.read(reinterpret_cast<char*>(grid.data().data()),
          static_cast<std::streamsize>(grid.size() * sizeof(T)));
  if (!in) fail(ErrorKind::kBadArgument, "truncated grid file: " + path);
  return grid;
}

}  // namespace sdrpesq
