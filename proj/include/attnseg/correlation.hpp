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

// From the raw global attention map to a segmentation mask:
//   merge tokens -> per-pixel rescale -> per-class min-max -> self-attention
//   refinement -> background-aware argmax -> nearest upsampling.
// Only content-token columns survive the merge, so special and stop tokens
// cannot influence anything downstream.

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attnseg/aggregation.hpp"
#include "attnseg/attention_map.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/config.hpp"
#include "attnseg/error.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

namespace detail {

inline void require_stage(const GlobalAttentionMap& m, Stage expected, const char* op) {
  if (m.stage != expected) {
    fail(ErrorCode::kInvalidScores, std::string(op) + " expects a " +
                                        std::string(to_string(expected)) +
                                        " map, got " + std::string(to_string(m.stage)));
  }
}

}  // namespace detail

/// One column per class holding the mean of its content-token columns.
/// Classes without content tokens get no column.
inline GlobalAttentionMap merge_token_columns(const GlobalAttentionMap& raw,
                                              std::span<const TokenEntry> tokens,
                                              std::span<const ClassEntry> classes) {
  detail::require_stage(raw, Stage::kRaw, "merge_token_columns");
  std::map<int, bool> declared;
  for (const auto& c : classes) declared[c.class_id] = true;
  std::map<int, std::vector<std::size_t>> groups;
  for (const auto& t : tokens) {
    if (t.category != TokenCategory::kContent) continue;
    if (!t.class_id || !declared.count(*t.class_id)) {
      fail(ErrorCode::kUnknownClassId,
           "token " + std::to_string(t.index) + " (\"" + t.text + "\") has no declared class");
    }
    if (t.index >= raw.scores.dim(1)) {
      fail(ErrorCode::kInvalidShape,
           "token " + std::to_string(t.index) + " is outside the raw map");
    }
    groups[*t.class_id].push_back(t.index);
  }
  if (groups.empty()) fail(ErrorCode::kNoContentTokens, "prompt has no content tokens");

  const std::size_t pixels = raw.scores.dim(0);
  const std::size_t cols = groups.size();
  std::vector<float> out(pixels * cols);
  for (std::size_t i = 0; i < pixels; ++i) {
    const auto row = raw.scores.slice(i);
    std::size_t q = 0;
    for (const auto& [id, members] : groups) {
      double acc = 0.0;
      for (std::size_t t : members) acc += row[t];
      out[i * cols + q++] = static_cast<float>(acc / static_cast<double>(members.size()));
    }
  }
  GlobalAttentionMap merged;
  merged.scores = Tensor({pixels, cols}, std::move(out));
  merged.stage = Stage::kMerged;
  merged.resolution = raw.resolution;
  for (const auto& [id, _] : groups) merged.columns.push_back(id);
  return merged;
}

/// Each pixel's class scores divided by their sum; an all-zero row becomes
/// uniform.
inline GlobalAttentionMap per_pixel_rescale(const GlobalAttentionMap& m) {
  detail::require_stage(m, Stage::kMerged, "per_pixel_rescale");
  const std::size_t pixels = m.scores.dim(0);
  const std::size_t cols = m.scores.dim(1);
  const auto in = m.scores.values();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < pixels; ++i) {
    double total = 0.0;
    for (std::size_t q = 0; q < cols; ++q) {
      const float v = in[i * cols + q];
      if (v < 0.0f) {
        fail(ErrorCode::kInvalidScores, "negative score at pixel " + std::to_string(i));
      }
      total += v;
    }
    for (std::size_t q = 0; q < cols; ++q) {
      out[i * cols + q] = total > 0.0
                              ? static_cast<float>(in[i * cols + q] / total)
                              : static_cast<float>(1.0 / static_cast<double>(cols));
    }
  }
  return {Tensor(m.scores.shape(), std::move(out)), Stage::kRescaled, m.resolution,
          m.columns};
}

/// Min-max normalization of every class column over the pixels; a constant
/// column becomes all zeros.
inline GlobalAttentionMap per_token_renormalize(const GlobalAttentionMap& m) {
  detail::require_stage(m, Stage::kRescaled, "per_token_renormalize");
  const std::size_t pixels = m.scores.dim(0);
  const std::size_t cols = m.scores.dim(1);
  const auto in = m.scores.values();
  std::vector<float> out(in.size());
  for (std::size_t q = 0; q < cols; ++q) {
    float lo = in[q], hi = in[q];
    for (std::size_t i = 0; i < pixels; ++i) {
      lo = std::min(lo, in[i * cols + q]);
      hi = std::max(hi, in[i * cols + q]);
    }
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < pixels; ++i) {
      out[i * cols + q] =
          hi > lo ? static_cast<float>((static_cast<double>(in[i * cols + q]) - lo) / range)
                  : 0.0f;
    }
  }
  return {Tensor(m.scores.shape(), std::move(out)), Stage::kRenormalized, m.resolution,
          m.columns};
}

/// Weighted sum of the self-attention layers resized onto `target`.
inline Tensor combined_self_attention(std::span<const SelfLayer> self_layers,
                                      const LayerWeights& w, Extent target) {
  if (self_layers.size() != w.values.size()) {
    fail(ErrorCode::kInvalidShape, "self layer count does not match its weights");
  }
  const std::size_t px = target.pixels();
  std::vector<double> acc(px * px, 0.0);
  for (std::size_t m = 0; m < self_layers.size(); ++m) {
    if (w.values[m] == 0.0) continue;
    const Tensor resized = resize_pairwise(self_layers[m].map, self_layers[m].grid, target);
    const auto v = resized.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w.values[m] * v[i];
  }
  return Tensor({px, px}, std::vector<float>(acc.begin(), acc.end()));
}

/// scores <- S^steps * scores, S the weighted self-attention on the map grid.
inline GlobalAttentionMap self_attention_refine(const GlobalAttentionMap& m,
                                                std::span<const SelfLayer> self_layers,
                                                const LayerWeights& w, int steps) {
  detail::require_stage(m, Stage::kRenormalized, "self_attention_refine");
  if (steps < 0) fail(ErrorCode::kInvalidConfig, "refinement steps must be >= 0");
  GlobalAttentionMap out{m.scores, Stage::kRefined, m.resolution, m.columns};
  if (steps == 0) return out;
  const Tensor s = combined_self_attention(self_layers, w, m.resolution);
  for (int step = 0; step < steps; ++step) out.scores = matmul(s, out.scores);
  return out;
}

/// Nearest-neighbour lookup of grid labels at image resolution, sampling
/// pixel centres: src = floor((dst + 0.5) * in / out).
inline SegmentationMask upsample_nearest(std::span<const std::int32_t> labels, Extent grid,
                                         Extent image) {
  SegmentationMask mask{image, std::vector<std::int32_t>(image.pixels())};
  auto source = [](std::size_t dst, std::size_t in, std::size_t out) {
    return std::min((2 * dst + 1) * in / (2 * out), in - 1);
  };
  for (std::size_t y = 0; y < image.height; ++y) {
    const std::size_t sy = source(y, grid.height, image.height);
    for (std::size_t x = 0; x < image.width; ++x) {
      mask.labels[y * image.width + x] =
          labels[sy * grid.width + source(x, grid.width, image.width)];
    }
  }
  return mask;
}

/// Background-aware argmax. Foreground is the best non-background class (ties
/// go to the lower class id); the background score is the larger of the
/// threshold and every background-object class. Background wins only when
/// strictly greater.
inline SegmentationMask label_pixels(const GlobalAttentionMap& m,
                                     std::span<const ClassEntry> classes,
                                     double bg_threshold, Extent image_size) {
  if (m.stage != Stage::kRefined && m.stage != Stage::kRenormalized) {
    fail(ErrorCode::kInvalidScores, "label_pixels expects a refined map");
  }
  std::map<int, bool> background;
  for (const auto& c : classes) background[c.class_id] = c.is_background;
  std::vector<bool> column_is_bg(m.columns.size());
  for (std::size_t q = 0; q < m.columns.size(); ++q) {
    auto it = background.find(m.columns[q]);
    if (it == background.end()) {
      fail(ErrorCode::kUnknownClassId,
           "map column for undeclared class " + std::to_string(m.columns[q]));
    }
    column_is_bg[q] = it->second;
  }
  // Columns are ascending by class id, so a strict '>' keeps the lower id on ties.
  const std::size_t pixels = m.scores.dim(0);
  const std::size_t cols = m.scores.dim(1);
  std::vector<std::int32_t> labels(pixels, 0);
  for (std::size_t i = 0; i < pixels; ++i) {
    const auto row = m.scores.slice(i);
    double fg = -std::numeric_limits<double>::infinity();
    double bg = bg_threshold;
    int best = 0;
    for (std::size_t q = 0; q < cols; ++q) {
      if (column_is_bg[q]) {
        bg = std::max<double>(bg, row[q]);
      } else if (row[q] > fg) {
        fg = row[q];
        best = m.columns[q];
      }
    }
    labels[i] = bg > fg ? 0 : best;
  }
  return upsample_nearest(labels, m.resolution, image_size);
}

/// Everything segment() computed along the way.
struct SegmentationTrace {
  std::vector<HeadWeights> head_weights;  // one per cross layer
  LayerWeights self_layer_weights;
  LayerWeights cross_layer_weights;
  std::array<GlobalAttentionMap, 5> stages;  // raw .. refined
  SegmentationMask mask;
};

inline Extent working_resolution(const ActivationBundle& b, const EngineConfig& cfg) {
  if (cfg.target_resolution) return *cfg.target_resolution;
  Extent e{0, 0};
  for (const auto& l : b.cross_layers) {
    e.height = std::max(e.height, l.grid.height);
    e.width = std::max(e.width, l.grid.width);
  }
  return e;
}

inline std::vector<std::size_t> resolve_pairing(const ActivationBundle& b,
                                                const EngineConfig& cfg) {
  const std::size_t k = b.cross_layers.size();
  if (!cfg.layer_pairing.empty()) {
    if (cfg.layer_pairing.size() != k) {
      fail(ErrorCode::kInvalidConfig,
           "layer_pairing lists " + std::to_string(cfg.layer_pairing.size()) +
               " entries for " + std::to_string(k) + " cross layers");
    }
    return cfg.layer_pairing;
  }
  if (b.self_layers.size() != k) {
    fail(ErrorCode::kInvalidConfig,
         "bundle has " + std::to_string(k) + " cross and " +
             std::to_string(b.self_layers.size()) +
             " self layers; set layer_pairing explicitly");
  }
  std::vector<std::size_t> pairing(k);
  for (std::size_t m = 0; m < k; ++m) pairing[m] = m;
  return pairing;
}

/// Auto-aggregated raw global attention map, before any token handling.
inline GlobalAttentionMap aggregate_bundle(const ActivationBundle& b,
                                           const EngineConfig& cfg,
                                           SegmentationTrace* trace = nullptr) {
  validate_config(cfg);
  const auto pairing = resolve_pairing(b, cfg);
  const bool uniform = cfg.aggregation == AggregationMode::kUniform;

  std::vector<LayerMap> maps;
  maps.reserve(b.cross_layers.size());
  for (const auto& l : b.cross_layers) {
    HeadWeights hw = uniform ? uniform_head_weights(l.grid.pixels(), l.heads)
                             : head_weights(l.head_out, cfg.head_metric);
    maps.push_back({aggregate_heads(l.attn, hw), l.grid});
    if (trace) trace->head_weights.push_back(std::move(hw));
  }
  LayerWeights self_w;
  if (uniform) {
    self_w = uniform_layer_weights(b.self_layers.size());
  } else {
    const auto pseudo =
        pseudo_self_attention(b.dense_feature.values, b.dense_feature.grid);
    self_w = layer_weights(b.self_layers, pseudo, cfg.layer_metric, cfg.epsilon);
  }
  LayerWeights cross_w = uniform ? uniform_layer_weights(b.cross_layers.size())
                                 : inherit_layer_weights(self_w, pairing);
  GlobalAttentionMap raw = aggregate_layers(maps, cross_w, working_resolution(b, cfg));
  if (trace) {
    trace->self_layer_weights = std::move(self_w);
    trace->cross_layer_weights = std::move(cross_w);
  }
  return raw;
}

/// The full pipeline, keeping every intermediate stage.
inline SegmentationTrace segment_with_trace(const ActivationBundle& b,
                                            const EngineConfig& cfg) {
  SegmentationTrace trace;
  trace.stages[0] = aggregate_bundle(b, cfg, &trace);
  trace.stages[1] = merge_token_columns(trace.stages[0], b.tokens, b.classes);
  trace.stages[2] = per_pixel_rescale(trace.stages[1]);
  trace.stages[3] = per_token_renormalize(trace.stages[2]);
  trace.stages[4] = self_attention_refine(trace.stages[3], b.self_layers,
                                          trace.self_layer_weights, cfg.refinement_steps);
  trace.mask = label_pixels(trace.stages[4], b.classes, cfg.bg_threshold, b.image_size);
  return trace;
}

inline SegmentationMask segment(const ActivationBundle& b, const EngineConfig& cfg) {
  return segment_with_trace(b, cfg).mask;
}

}  // namespace attnseg
