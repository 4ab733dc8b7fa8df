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

// Brute-force reference of the segmentation pipeline, used only to check the
// optimized engine. Everything is plain nested loops in double precision and
// deliberately shares no kernels with tensor.hpp / aggregation.hpp /
// correlation.hpp: resizing goes through dense interpolation matrices built
// from the triangle kernel, softmax and similarities are re-derived inline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "attnseg/bundle.hpp"
#include "attnseg/config.hpp"
#include "attnseg/error.hpp"

namespace attnseg::oracle {

struct OracleResult {
  Extent resolution;
  std::vector<int> class_columns;  // ascending class ids
  std::vector<double> refined;     // [pixels x class_columns.size()]
  SegmentationMask mask;
};

namespace detail {

using Matrix = std::vector<std::vector<double>>;

// Interpolation matrix [out x in] for align_corners=false bilinear sampling,
// written as a triangle kernel around the clamped source coordinate.
inline Matrix interpolation_matrix(std::size_t in, std::size_t out) {
  Matrix w(out, std::vector<double>(in, 0.0));
  for (std::size_t o = 0; o < out; ++o) {
    double src = (o + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    for (std::size_t s = 0; s < in; ++s) {
      w[o][s] = std::max(0.0, 1.0 - std::abs(src - static_cast<double>(s)));
    }
  }
  return w;
}

// Pixel-level interpolation matrix [out_px x in_px].
inline Matrix pixel_interpolation(Extent in, Extent out) {
  const Matrix wy = interpolation_matrix(in.height, out.height);
  const Matrix wx = interpolation_matrix(in.width, out.width);
  Matrix w(out.pixels(), std::vector<double>(in.pixels(), 0.0));
  for (std::size_t oy = 0; oy < out.height; ++oy)
    for (std::size_t ox = 0; ox < out.width; ++ox)
      for (std::size_t y = 0; y < in.height; ++y)
        for (std::size_t x = 0; x < in.width; ++x)
          w[oy * out.width + ox][y * in.width + x] = wy[oy][y] * wx[ox][x];
  return w;
}

inline Matrix to_matrix(const Tensor& t, std::size_t rows, std::size_t cols,
                        std::size_t offset = 0) {
  Matrix m(rows, std::vector<double>(cols));
  const auto v = t.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = v[offset + r * cols + c];
  return m;
}

// out[q'][c] = sum_q W[q'][q] * m[q][c]
inline Matrix resize_rows(const Matrix& m, Extent in, Extent out) {
  const Matrix w = pixel_interpolation(in, out);
  const std::size_t cols = m.empty() ? 0 : m[0].size();
  Matrix r(out.pixels(), std::vector<double>(cols, 0.0));
  for (std::size_t o = 0; o < out.pixels(); ++o)
    for (std::size_t i = 0; i < in.pixels(); ++i) {
      if (w[o][i] == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) r[o][c] += w[o][i] * m[i][c];
    }
  return r;
}

// Pairwise map resize: out[q'][k'] = sum_{q,k} W[q'][q] W[k'][k] s[q][k],
// then every row rescaled to sum 1.
inline Matrix resize_pairs(const Matrix& s, Extent in, Extent out) {
  const Matrix w = pixel_interpolation(in, out);
  const std::size_t n_in = in.pixels(), n_out = out.pixels();
  Matrix r(n_out, std::vector<double>(n_out, 0.0));
  for (std::size_t qo = 0; qo < n_out; ++qo)
    for (std::size_t q = 0; q < n_in; ++q) {
      if (w[qo][q] == 0.0) continue;
      for (std::size_t ko = 0; ko < n_out; ++ko)
        for (std::size_t k = 0; k < n_in; ++k) {
          if (w[ko][k] == 0.0) continue;
          r[qo][ko] += w[qo][q] * w[ko][k] * s[q][k];
        }
    }
  for (auto& row : r) {
    double total = 0.0;
    for (double v : row) total += v;
    for (double& v : row) v = total > 0.0 ? v / total : 1.0 / n_out;
  }
  return r;
}

inline std::vector<double> to_simplex(std::vector<double> raw) {
  double total = 0.0;
  for (double& v : raw) {
    v = std::max(v, 0.0);
    total += v;
  }
  for (double& v : raw) v = total > 0.0 ? v / total : 1.0 / raw.size();
  return raw;
}

}  // namespace detail

/// Reference pipeline with the same contract as segment().
inline OracleResult oracle_segment(const ActivationBundle& b, const EngineConfig& cfg) {
  using detail::Matrix;
  const bool uniform = cfg.aggregation == AggregationMode::kUniform;
  const std::size_t k = b.cross_layers.size();

  Extent target{0, 0};
  if (cfg.target_resolution) {
    target = *cfg.target_resolution;
  } else {
    for (const auto& l : b.cross_layers) {
      target.height = std::max(target.height, l.grid.height);
      target.width = std::max(target.width, l.grid.width);
    }
  }

  // Head aggregation, layer by layer.
  std::vector<Matrix> layer_maps;
  for (const auto& l : b.cross_layers) {
    const std::size_t px = l.grid.pixels(), n = l.token_count;
    Matrix agg(px, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < px; ++i) {
      std::vector<double> raw(l.heads, 1.0);
      if (!uniform) {
        std::vector<double> sum(l.d, 0.0);
        for (std::size_t h = 0; h < l.heads; ++h)
          for (std::size_t c = 0; c < l.d; ++c) sum[c] += l.head_out.at(h, i, c);
        for (std::size_t h = 0; h < l.heads; ++h) {
          double dp = 0.0, nv = 0.0, ns = 0.0;
          for (std::size_t c = 0; c < l.d; ++c) {
            const double v = l.head_out.at(h, i, c);
            dp += v * sum[c];
            nv += v * v;
            ns += sum[c] * sum[c];
          }
          switch (cfg.head_metric) {
            case HeadMetric::kDot: raw[h] = dp; break;
            case HeadMetric::kL2: raw[h] = std::sqrt(nv); break;
            case HeadMetric::kCosine:
              raw[h] = (nv > 0.0 && ns > 0.0) ? dp / std::sqrt(nv * ns) : 0.0;
              break;
          }
        }
      }
      const auto w = detail::to_simplex(raw);
      for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t j = 0; j < n; ++j) agg[i][j] += w[h] * l.attn.at(h, i, j);
    }
    layer_maps.push_back(std::move(agg));
  }

  // Layer weights from the pseudo self-attention.
  std::vector<double> self_w(b.self_layers.size(), 1.0);
  if (!uniform) {
    const auto& f = b.dense_feature;
    const std::size_t pp = f.grid.pixels();
    Matrix pseudo(pp, std::vector<double>(pp, 0.0));
    for (std::size_t i = 0; i < pp; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < pp; ++j) {
        double logit = 0.0;
        for (std::size_t c = 0; c < f.channels; ++c) {
          logit += static_cast<double>(f.values.at(i, c)) * f.values.at(j, c);
        }
        pseudo[i][j] = logit / std::sqrt(static_cast<double>(f.channels));
        peak = std::max(peak, pseudo[i][j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < pp; ++j) total += (pseudo[i][j] = std::exp(pseudo[i][j] - peak));
      for (std::size_t j = 0; j < pp; ++j) pseudo[i][j] /= total;
    }
    for (std::size_t m = 0; m < b.self_layers.size(); ++m) {
      const auto& s = b.self_layers[m];
      const Matrix resized = detail::resize_pairs(
          detail::to_matrix(s.map, s.grid.pixels(), s.grid.pixels()), s.grid, f.grid);
      double score = 0.0;
      if (cfg.layer_metric == LayerMetric::kDot) {
        for (std::size_t i = 0; i < pp; ++i)
          for (std::size_t j = 0; j < pp; ++j) score += pseudo[i][j] * resized[i][j];
      } else if (cfg.layer_metric == LayerMetric::kMse) {
        for (std::size_t i = 0; i < pp; ++i)
          for (std::size_t j = 0; j < pp; ++j) {
            const double d = pseudo[i][j] - resized[i][j];
            score += d * d;
          }
        score = 1.0 / (score / static_cast<double>(pp * pp) + cfg.epsilon);
      } else {
        double lo = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < pp; ++i)
          for (std::size_t j = 0; j < pp; ++j) {
            lo += std::min(pseudo[i][j], resized[i][j]);
            hi += std::max(pseudo[i][j], resized[i][j]);
          }
        score = hi > 0.0 ? lo / hi : 0.0;
      }
      self_w[m] = score;
    }
  }
  self_w = detail::to_simplex(self_w);

  std::vector<double> cross_w(k, 1.0);
  if (!uniform) {
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t paired = cfg.layer_pairing.empty() ? m : cfg.layer_pairing[m];
      cross_w[m] = self_w.at(paired);
    }
  }
  cross_w = detail::to_simplex(cross_w);

  const std::size_t n = b.tokens.size();
  const std::size_t px = target.pixels();
  Matrix global(px, std::vector<double>(n, 0.0));
  for (std::size_t m = 0; m < k; ++m) {
    const Matrix resized = detail::resize_rows(layer_maps[m], b.cross_layers[m].grid, target);
    for (std::size_t i = 0; i < px; ++i)
      for (std::size_t j = 0; j < n; ++j) global[i][j] += cross_w[m] * resized[i][j];
  }

  // Merge content tokens per class.
  std::map<int, std::vector<std::size_t>> class_tokens;
  for (const auto& t : b.tokens) {
    if (t.category == TokenCategory::kContent) class_tokens[*t.class_id].push_back(t.index);
  }
  if (class_tokens.empty()) fail(ErrorCode::kNoContentTokens, "bundle has no content tokens");
  OracleResult out;
  out.resolution = target;
  for (const auto& [id, _] : class_tokens) out.class_columns.push_back(id);
  const std::size_t l = out.class_columns.size();
  Matrix scores(px, std::vector<double>(l, 0.0));
  for (std::size_t i = 0; i < px; ++i) {
    std::size_t q = 0;
    for (const auto& [id, toks] : class_tokens) {
      for (std::size_t t : toks) scores[i][q] += global[i][t];
      scores[i][q] /= static_cast<double>(toks.size());
      ++q;
    }
  }

  // Per-pixel rescale.
  for (auto& row : scores) {
    double total = 0.0;
    for (double v : row) {
      if (v < 0.0) fail(ErrorCode::kInvalidScores, "negative merged score");
      total += v;
    }
    for (double& v : row) v = total > 0.0 ? v / total : 1.0 / l;
  }
  // Per-class min-max.
  for (std::size_t q = 0; q < l; ++q) {
    double lo = scores[0][q], hi = scores[0][q];
    for (std::size_t i = 0; i < px; ++i) {
      lo = std::min(lo, scores[i][q]);
      hi = std::max(hi, scores[i][q]);
    }
    for (std::size_t i = 0; i < px; ++i) {
      scores[i][q] = hi > lo ? (scores[i][q] - lo) / (hi - lo) : 0.0;
    }
  }

  // Self-attention refinement.
  if (cfg.refinement_steps > 0) {
    Matrix s(px, std::vector<double>(px, 0.0));
    for (std::size_t m = 0; m < b.self_layers.size(); ++m) {
      const auto& layer = b.self_layers[m];
      const Matrix resized = detail::resize_pairs(
          detail::to_matrix(layer.map, layer.grid.pixels(), layer.grid.pixels()),
          layer.grid, target);
      for (std::size_t i = 0; i < px; ++i)
        for (std::size_t j = 0; j < px; ++j) s[i][j] += self_w[m] * resized[i][j];
    }
    for (int step = 0; step < cfg.refinement_steps; ++step) {
      Matrix next(px, std::vector<double>(l, 0.0));
      for (std::size_t i = 0; i < px; ++i)
        for (std::size_t j = 0; j < px; ++j)
          for (std::size_t q = 0; q < l; ++q) next[i][q] += s[i][j] * scores[j][q];
      scores = std::move(next);
    }
  }

  out.refined.reserve(px * l);
  for (const auto& row : scores) out.refined.insert(out.refined.end(), row.begin(), row.end());

  // Labels on the working grid, then nearest-neighbour upsampling.
  std::map<int, bool> is_bg;
  for (const auto& c : b.classes) is_bg[c.class_id] = c.is_background;
  std::vector<int> grid_labels(px, 0);
  for (std::size_t i = 0; i < px; ++i) {
    double fg = -std::numeric_limits<double>::infinity();
    double bg = cfg.bg_threshold;
    int best = 0;
    for (std::size_t q = 0; q < l; ++q) {
      const int id = out.class_columns[q];
      if (is_bg[id]) {
        bg = std::max(bg, scores[i][q]);
      } else if (scores[i][q] > fg) {
        fg = scores[i][q];
        best = id;
      }
    }
    grid_labels[i] = bg > fg ? 0 : best;
  }
  const Extent img = b.image_size;
  out.mask.size = img;
  out.mask.labels.resize(img.pixels());
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t sy = std::min<std::size_t>(
        static_cast<std::size_t>((y + 0.5) * target.height / img.height), target.height - 1);
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t sx = std::min<std::size_t>(
          static_cast<std::size_t>((x + 0.5) * target.width / img.width), target.width - 1);
      out.mask.labels[y * img.width + x] = grid_labels[sy * target.width + sx];
    }
  }
  return out;
}

}  // namespace attnseg::oracle
