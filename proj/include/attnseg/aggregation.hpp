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

// Automatic aggregation of cross-attention maps.
//
// Heads: a multi-head layer's output is the sum of per-head summands
// A_n V_n W^O_n. Each head is weighted, per pixel, by the similarity between
// its summand and that sum.
//
// Layers: each self-attention layer is compared with a pseudo self-attention
// built from a dense feature; the similarity becomes the layer's weight, and
// cross-attention layers inherit the weight of their paired self layer.
//
// All weights are clamped at zero and normalized onto the simplex; a vector
// that clamps to all zeros becomes uniform.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnseg/attention_map.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/error.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

enum class HeadMetric { kDot, kL2, kCosine };
enum class LayerMetric { kDot, kMse, kIou };

inline std::string_view to_string(HeadMetric m) {
  switch (m) {
    case HeadMetric::kDot: return "dot";
    case HeadMetric::kL2: return "l2";
    case HeadMetric::kCosine: return "cosine";
  }
  return "dot";
}

inline std::string_view to_string(LayerMetric m) {
  switch (m) {
    case LayerMetric::kDot: return "dot";
    case LayerMetric::kMse: return "mse";
    case LayerMetric::kIou: return "iou";
  }
  return "dot";
}

inline std::optional<HeadMetric> parse_head_metric(std::string_view s) {
  if (s == "dot") return HeadMetric::kDot;
  if (s == "l2") return HeadMetric::kL2;
  if (s == "cosine") return HeadMetric::kCosine;
  return std::nullopt;
}

inline std::optional<LayerMetric> parse_layer_metric(std::string_view s) {
  if (s == "dot") return LayerMetric::kDot;
  if (s == "mse") return LayerMetric::kMse;
  if (s == "iou") return LayerMetric::kIou;
  return std::nullopt;
}

/// Per-pixel head weights of one layer, [pixels x heads].
struct HeadWeights {
  Tensor weights;
};

/// One weight per layer, on the simplex.
struct LayerWeights {
  std::vector<double> values;
};

struct PseudoSelfAttention {
  Tensor map;  // [pixels x pixels], row-stochastic
  Extent grid;
};

/// A per-layer [pixels x n] map together with its grid.
struct LayerMap {
  Tensor scores;
  Extent grid;
};

/// Clamps negatives to 0 and rescales to sum 1; all-zero input -> uniform.
inline void normalize_simplex(std::span<double> raw) {
  double total = 0.0;
  for (double& v : raw) {
    if (!(v > 0.0)) v = 0.0;
    total += v;
  }
  if (total > 0.0) {
    for (double& v : raw) v /= total;
  } else {
    for (double& v : raw) v = 1.0 / static_cast<double>(raw.size());
  }
}

inline Tensor sum_head_outputs(const Tensor& head_out) {
  require_rank(head_out, 3, "sum_head_outputs");
  const std::size_t heads = head_out.dim(0);
  const std::size_t pixels = head_out.dim(1);
  const std::size_t d = head_out.dim(2);
  std::vector<double> acc(pixels * d, 0.0);
  for (std::size_t n = 0; n < heads; ++n) {
    const auto plane = head_out.slice(n);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += plane[i];
  }
  return Tensor({pixels, d}, std::vector<float>(acc.begin(), acc.end()));
}

inline HeadWeights uniform_head_weights(std::size_t pixels, std::size_t heads) {
  return {Tensor::filled({pixels, heads}, static_cast<float>(1.0 / heads))};
}

inline HeadWeights head_weights(const Tensor& head_out, HeadMetric metric) {
  require_rank(head_out, 3, "head_weights");
  const std::size_t heads = head_out.dim(0);
  const std::size_t pixels = head_out.dim(1);
  const std::size_t d = head_out.dim(2);
  const auto values = head_out.values();
  std::vector<float> out(pixels * heads);
  std::vector<double> total(d);
  std::vector<double> raw(heads);
  for (std::size_t i = 0; i < pixels; ++i) {
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t n = 0; n < heads; ++n) {
      const float* v = values.data() + (n * pixels + i) * d;
      for (std::size_t c = 0; c < d; ++c) total[c] += v[c];
    }
    double total_norm2 = 0.0;
    for (double t : total) total_norm2 += t * t;
    for (std::size_t n = 0; n < heads; ++n) {
      const float* v = values.data() + (n * pixels + i) * d;
      double dp = 0.0, norm2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        dp += v[c] * total[c];
        norm2 += static_cast<double>(v[c]) * v[c];
      }
      switch (metric) {
        case HeadMetric::kDot:
          raw[n] = dp;
          break;
        case HeadMetric::kL2:
          raw[n] = std::sqrt(norm2);
          break;
        case HeadMetric::kCosine:
          raw[n] = (norm2 > 0.0 && total_norm2 > 0.0)
                       ? dp / (std::sqrt(norm2) * std::sqrt(total_norm2))
                       : 0.0;
          break;
      }
    }
    normalize_simplex(raw);
    for (std::size_t n = 0; n < heads; ++n) {
      out[i * heads + n] = static_cast<float>(raw[n]);
    }
  }
  return {Tensor({pixels, heads}, std::move(out))};
}

/// Per-pixel convex combination of the heads' attention rows.
inline Tensor aggregate_heads(const Tensor& attn, const HeadWeights& w) {
  require_rank(attn, 3, "aggregate_heads");
  const std::size_t heads = attn.dim(0);
  const std::size_t pixels = attn.dim(1);
  const std::size_t tokens = attn.dim(2);
  if (w.weights.shape() != Shape{pixels, heads}) {
    fail(ErrorCode::kInvalidShape, "head weights " + to_string(w.weights.shape()) +
                                       " do not match attention " +
                                       to_string(attn.shape()));
  }
  const auto a = attn.values();
  const auto wv = w.weights.values();
  std::vector<float> out(pixels * tokens);
  std::vector<double> acc(tokens);
  for (std::size_t i = 0; i < pixels; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t n = 0; n < heads; ++n) {
      const double weight = wv[i * heads + n];
      if (weight == 0.0) continue;
      const float* row = a.data() + (n * pixels + i) * tokens;
      for (std::size_t j = 0; j < tokens; ++j) acc[j] += weight * row[j];
    }
    for (std::size_t j = 0; j < tokens; ++j) {
      out[i * tokens + j] = static_cast<float>(acc[j]);
    }
  }
  return Tensor({pixels, tokens}, std::move(out));
}

/// softmax(feat feat^T / sqrt(d)) over the dense feature's pixels.
inline PseudoSelfAttention pseudo_self_attention(const Tensor& feat, Extent grid) {
  require_rank(feat, 2, "pseudo_self_attention");
  if (feat.dim(0) != grid.pixels()) {
    fail(ErrorCode::kInvalidShape,
         "dense feature rows do not match grid " + to_string(grid));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(feat.dim(1)));
  return {softmax_rows(matmul_transposed(feat, feat), scale), grid};
}

inline double layer_similarity(const Tensor& pseudo, const Tensor& self_map,
                               LayerMetric metric, double epsilon) {
  const auto a = pseudo.values();
  const auto b = self_map.values();
  switch (metric) {
    case LayerMetric::kDot:
      return dot(a, b);
    case LayerMetric::kMse: {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = static_cast<double>(a[i]) - b[i];
        acc += diff * diff;
      }
      return 1.0 / (acc / static_cast<double>(a.size()) + epsilon);
    }
    case LayerMetric::kIou: {
      double lo = 0.0, hi = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        lo += std::min(a[i], b[i]);
        hi += std::max(a[i], b[i]);
      }
      return hi > 0.0 ? lo / hi : 0.0;
    }
  }
  return 0.0;
}

inline LayerWeights uniform_layer_weights(std::size_t layers) {
  return {std::vector<double>(layers, 1.0 / static_cast<double>(layers))};
}

/// Weight of each self layer from its similarity with the pseudo
/// self-attention, after resizing the layer onto the pseudo map's grid.
inline LayerWeights layer_weights(std::span<const SelfLayer> self_layers,
                                  const PseudoSelfAttention& pseudo,
                                  LayerMetric metric, double epsilon = 1e-8) {
  if (self_layers.empty()) {
    fail(ErrorCode::kInvalidShape, "layer_weights needs at least one self layer");
  }
  LayerWeights w;
  w.values.reserve(self_layers.size());
  for (const auto& layer : self_layers) {
    const Tensor resized = resize_pairwise(layer.map, layer.grid, pseudo.grid);
    w.values.push_back(layer_similarity(pseudo.map, resized, metric, epsilon));
  }
  normalize_simplex(w.values);
  return w;
}

/// Cross layer m takes the weight of self layer pairing[m]; the result is
/// renormalized over the cross layers.
inline LayerWeights inherit_layer_weights(const LayerWeights& self_weights,
                                          std::span<const std::size_t> pairing) {
  LayerWeights w;
  w.values.reserve(pairing.size());
  for (std::size_t m = 0; m < pairing.size(); ++m) {
    if (pairing[m] >= self_weights.values.size()) {
      fail(ErrorCode::kInvalidConfig,
           "cross layer " + std::to_string(m) + " is paired with self layer " +
               std::to_string(pairing[m]) + ", which does not exist");
    }
    w.values.push_back(self_weights.values[pairing[m]]);
  }
  normalize_simplex(w.values);
  return w;
}

/// Resizes every per-layer map onto `target` and takes their weighted sum.
inline GlobalAttentionMap aggregate_layers(std::span<const LayerMap> maps,
                                           const LayerWeights& w, Extent target) {
  if (maps.empty() || maps.size() != w.values.size()) {
    fail(ErrorCode::kInvalidShape, std::to_string(maps.size()) + " layer maps but " +
                                       std::to_string(w.values.size()) + " weights");
  }
  const std::size_t cols = maps.front().scores.dim(1);
  std::vector<double> acc(target.pixels() * cols, 0.0);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].scores.rank() != 2 || maps[m].scores.dim(1) != cols) {
      fail(ErrorCode::kInvalidShape,
           "layer map " + std::to_string(m) + " has a different column count");
    }
    if (w.values[m] == 0.0) continue;
    const Tensor resized = resize_columns(maps[m].scores, maps[m].grid, target);
    const auto v = resized.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w.values[m] * v[i];
  }
  GlobalAttentionMap out;
  out.scores = Tensor({target.pixels(), cols}, std::vector<float>(acc.begin(), acc.end()));
  out.stage = Stage::kRaw;
  out.resolution = target;
  out.columns.resize(cols);
  for (std::size_t j = 0; j < cols; ++j) out.columns[j] = static_cast<int>(j);
  return out;
}

}  // namespace attnseg
