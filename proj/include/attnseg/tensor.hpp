/* Copyright 2026 The attnseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Dense float tensors and the handful of numeric kernels the pipeline needs.
// Storage is 32-bit; every reduction accumulates in 64-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnseg/error.hpp"

namespace attnseg {

using Shape = std::vector<std::size_t>;

/// Spatial grid size of a map (rows x columns of latent pixels).
struct Extent {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const { return height * width; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

inline std::string to_string(Extent e) {
  return std::to_string(e.height) + "x" + std::to_string(e.width);
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Row-major float tensor. Immutable once constructed; construction rejects
/// zero dimensions, size mismatches and non-finite values.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) fail(ErrorCode::kInvalidShape, "tensor needs rank >= 1");
    for (std::size_t d : shape_) {
      if (d == 0) {
        fail(ErrorCode::kInvalidShape,
             "zero dimension in shape " + to_string(shape_));
      }
    }
    if (shape_product(shape_) != data_.size()) {
      fail(ErrorCode::kInvalidShape,
           "shape " + to_string(shape_) + " needs " +
               std::to_string(shape_product(shape_)) + " values, got " +
               std::to_string(data_.size()));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        fail(ErrorCode::kNonFinite,
             "non-finite value at flat index " + std::to_string(i));
      }
    }
  }

  static Tensor filled(Shape shape, float value) {
    const std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> values() const { return data_; }

  float at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Contiguous slice along the first axis (a row of a matrix, a plane of a
  /// rank-3 tensor).
  std::span<const float> slice(std::size_t outer) const {
    const std::size_t stride = data_.size() / shape_[0];
    return std::span<const float>(data_).subspan(outer * stride, stride);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank || t.empty()) {
    fail(ErrorCode::kInvalidShape, std::string(what) + " expects rank " +
                                       std::to_string(rank) + ", got " +
                                       to_string(t.shape()));
  }
}

/// Sum of a_i * b_i accumulated in double.
inline double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kInvalidShape, "dot of lengths " + std::to_string(a.size()) +
                                       " and " + std::to_string(b.size()));
  }
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size(), blocked = n - n % 4;
  for (std::size_t i = 0; i < blocked; i += 4) {
    for (std::size_t k = 0; k < 4; ++k) {
      acc[k] += static_cast<double>(a[i + k]) * static_cast<double>(b[i + k]);
    }
  }
  for (std::size_t i = blocked; i < n; ++i) {
    acc[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline double dot(const Tensor& a, const Tensor& b) {
  return dot(a.values(), b.values());
}

/// Row-wise softmax of scale * m, max-subtracted.
inline Tensor softmax_rows(const Tensor& m, double scale) {
  if (m.rank() != 2 || m.empty()) {
    fail(ErrorCode::kInvalidShape, "softmax_rows expects a non-empty matrix");
  }
  if (!(scale > 0.0)) fail(ErrorCode::kUnsupported, "softmax scale must be > 0");
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  std::vector<float> out(m.size());
  std::vector<double> buf(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = m.slice(r);
    double peak = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) {
      buf[c] = scale * static_cast<double>(row[c]);
      peak = std::max(peak, buf[c]);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      buf[c] = std::exp(buf[c] - peak);
      total += buf[c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<float>(buf[c] / total);
    }
  }
  return Tensor({rows, cols}, std::move(out));
}

/// a * b for a [r x k], b [k x c].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    fail(ErrorCode::kInvalidShape,
         "matmul " + to_string(a.shape()) + " * " + to_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<float> out(rows * cols);
  std::vector<double> acc(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < inner; ++k) {
      const double lhs = av[r * inner + k];
      if (lhs == 0.0) continue;
      const float* brow = bv.data() + k * cols;
      for (std::size_t c = 0; c < cols; ++c) acc[c] += lhs * brow[c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<float>(acc[c]);
    }
  }
  return Tensor({rows, cols}, std::move(out));
}

/// a * b^T for a [r x k], b [c x k].
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_transposed");
  require_rank(b, 2, "matmul_transposed");
  if (a.dim(1) != b.dim(1)) {
    fail(ErrorCode::kInvalidShape, "matmul_transposed " + to_string(a.shape()) +
                                       " * " + to_string(b.shape()) + "^T");
  }
  const std::size_t rows = a.dim(0), cols = b.dim(0);
  std::vector<float> out(rows * cols);
  const bool gram = &a == &b;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = gram ? r : 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<float>(dot(a.slice(r), b.slice(c)));
      if (gram) out[c * cols + r] = out[r * cols + c];
    }
  }
  return Tensor({rows, cols}, std::move(out));
}

namespace detail {

/// One output sample along an axis: blend of source indices lo and hi.
struct AxisTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

// align_corners=false: src = (dst + 0.5) * in / out - 0.5, clamped at 0;
// indices past the end clamp to the last sample.
inline std::vector<AxisTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo >= in - 1) {
      taps[d] = {in - 1, in - 1, 0.0};
      continue;
    }
    taps[d] = {lo, lo + 1, src - static_cast<double>(lo)};
  }
  return taps;
}

/// The (up to) four source pixels and weights contributing to each output
/// pixel of an H x W -> H' x W' bilinear resize.
struct PixelStencil {
  std::size_t index[4];
  double weight[4];
};

inline std::vector<PixelStencil> bilinear_stencils(Extent in, Extent out) {
  const auto ty = bilinear_taps(in.height, out.height);
  const auto tx = bilinear_taps(in.width, out.width);
  std::vector<PixelStencil> stencils(out.pixels());
  for (std::size_t oy = 0; oy < out.height; ++oy) {
    for (std::size_t ox = 0; ox < out.width; ++ox) {
      const AxisTap& y = ty[oy];
      const AxisTap& x = tx[ox];
      stencils[oy * out.width + ox] = PixelStencil{
          {y.lo * in.width + x.lo, y.lo * in.width + x.hi,
           y.hi * in.width + x.lo, y.hi * in.width + x.hi},
          {(1.0 - y.frac) * (1.0 - x.frac), (1.0 - y.frac) * x.frac,
           y.frac * (1.0 - x.frac), y.frac * x.frac}};
    }
  }
  return stencils;
}

inline void require_target(Extent target) {
  if (target.height == 0 || target.width == 0) {
    fail(ErrorCode::kInvalidShape, "resize target " + to_string(target));
  }
}

}  // namespace detail

/// Bilinear resize (align_corners=false) of an [H x W] map or a [C x H x W]
/// stack of maps. Same-size resizes return the input unchanged.
inline Tensor resize_bilinear(const Tensor& m, Extent target) {
  detail::require_target(target);
  if (m.empty() || (m.rank() != 2 && m.rank() != 3)) {
    fail(ErrorCode::kInvalidShape,
         "resize_bilinear expects [HxW] or [CxHxW], got " + to_string(m.shape()));
  }
  const std::size_t channels = m.rank() == 3 ? m.dim(0) : 1;
  const Extent source{m.dim(m.rank() - 2), m.dim(m.rank() - 1)};
  if (source == target) return m;

  const auto stencils = detail::bilinear_stencils(source, target);
  const auto in = m.values();
  std::vector<float> out(channels * target.pixels());
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = in.data() + c * source.pixels();
    float* dst = out.data() + c * target.pixels();
    for (std::size_t p = 0; p < stencils.size(); ++p) {
      const auto& s = stencils[p];
      double v = 0.0;
      for (int t = 0; t < 4; ++t) v += s.weight[t] * plane[s.index[t]];
      dst[p] = static_cast<float>(v);
    }
  }
  Shape shape = m.rank() == 3 ? Shape{channels, target.height, target.width}
                              : Shape{target.height, target.width};
  return Tensor(std::move(shape), std::move(out));
}

/// Resizes every column of a [pixels x n] map, treating each column as an
/// H x W plane over the latent grid.
inline Tensor resize_columns(const Tensor& m, Extent source, Extent target) {
  detail::require_target(target);
  require_rank(m, 2, "resize_columns");
  if (m.dim(0) != source.pixels()) {
    fail(ErrorCode::kInvalidShape, "map with " + std::to_string(m.dim(0)) +
                                       " rows is not a " + to_string(source) +
                                       " grid");
  }
  if (source == target) return m;
  const std::size_t cols = m.dim(1);
  const auto stencils = detail::bilinear_stencils(source, target);
  const auto in = m.values();
  std::vector<float> out(target.pixels() * cols);
  std::vector<double> acc(cols);
  for (std::size_t p = 0; p < stencils.size(); ++p) {
    const auto& s = stencils[p];
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int t = 0; t < 4; ++t) {
      if (s.weight[t] == 0.0) continue;
      const float* row = in.data() + s.index[t] * cols;
      for (std::size_t c = 0; c < cols; ++c) acc[c] += s.weight[t] * row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[p * cols + c] = static_cast<float>(acc[c]);
    }
  }
  return Tensor({target.pixels(), cols}, std::move(out));
}

/// Resizes a pixel-pair map [(H*W) x (H*W)] to [(H'*W') x (H'*W')]: bilinear
/// over the key grid, then over the query grid, then each row is rescaled to
/// sum to 1 (all-zero rows become uniform).
inline Tensor resize_pairwise(const Tensor& s, Extent source, Extent target) {
  detail::require_target(target);
  if (s.rank() != 2 || s.empty() || s.dim(0) != s.dim(1)) {
    fail(ErrorCode::kInvalidShape,
         "pairwise map must be square, got " + to_string(s.shape()));
  }
  if (s.dim(0) != source.pixels()) {
    fail(ErrorCode::kInvalidShape, "pairwise map side " +
                                       std::to_string(s.dim(0)) +
                                       " does not match grid " +
                                       to_string(source));
  }
  const std::size_t src_px = source.pixels();
  const std::size_t dst_px = target.pixels();
  const auto in = s.values();
  std::vector<float> out(dst_px * dst_px);

  auto normalize_into = [&](std::span<const double> row, std::size_t r) {
    double total = 0.0;
    for (double v : row) total += v;
    float* dst = out.data() + r * dst_px;
    if (total > 0.0) {
      for (std::size_t c = 0; c < dst_px; ++c) {
        dst[c] = static_cast<float>(row[c] / total);
      }
    } else {
      std::fill(dst, dst + dst_px, static_cast<float>(1.0 / dst_px));
    }
  };

  std::vector<double> row(dst_px);
  if (source == target) {
    for (std::size_t r = 0; r < src_px; ++r) {
      for (std::size_t c = 0; c < src_px; ++c) row[c] = in[r * src_px + c];
      normalize_into(row, r);
    }
    return Tensor({dst_px, dst_px}, std::move(out));
  }

  const auto stencils = detail::bilinear_stencils(source, target);
  // Key side: [src_px x dst_px].
  std::vector<double> keyed(src_px * dst_px);
  for (std::size_t r = 0; r < src_px; ++r) {
    const float* src_row = in.data() + r * src_px;
    double* dst_row = keyed.data() + r * dst_px;
    for (std::size_t p = 0; p < dst_px; ++p) {
      const auto& st = stencils[p];
      double v = 0.0;
      for (int t = 0; t < 4; ++t) v += st.weight[t] * src_row[st.index[t]];
      dst_row[p] = v;
    }
  }
  // Query side.
  for (std::size_t q = 0; q < dst_px; ++q) {
    const auto& st = stencils[q];
    std::fill(row.begin(), row.end(), 0.0);
    for (int t = 0; t < 4; ++t) {
      if (st.weight[t] == 0.0) continue;
      const double* src_row = keyed.data() + st.index[t] * dst_px;
      for (std::size_t c = 0; c < dst_px; ++c) row[c] += st.weight[t] * src_row[c];
    }
    normalize_into(row, q);
  }
  return Tensor({dst_px, dst_px}, std::move(out));
}

}  // namespace attnseg
