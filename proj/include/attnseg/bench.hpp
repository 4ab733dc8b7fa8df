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

// Overhead micro-benchmark: uniform averaging of heads and layers against
// automatic aggregation plus per-pixel rescaling, on the same synthetic
// workload.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "attnseg/aggregation.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/config.hpp"
#include "attnseg/correlation.hpp"
#include "attnseg/fixture.hpp"
#include "json.hpp"

namespace attnseg {

struct BenchSpec {
  Extent grid{64, 64};
  std::size_t layers = 16;
  std::size_t heads = 8;
  std::size_t repeat = 3;
  std::size_t tokens = 77;
  std::size_t dense_channels = 640;
  std::uint64_t seed = 0;
  bool end_to_end = false;
};

struct BenchReport {
  BenchSpec spec;
  std::size_t runs = 0;
  double uniform_median_s = 0.0;
  double auto_median_s = 0.0;
  double ratio = 0.0;
  // Only with spec.end_to_end: one full segment() per aggregation mode.
  double pipeline_uniform_s = 0.0;
  double pipeline_auto_s = 0.0;
};

/// Resolution level (0 = full grid, each level halves) of layer i out of k,
/// following a U-Net's down / mid / up order.
inline std::size_t unet_level(std::size_t i, std::size_t k) {
  static constexpr std::size_t kPattern[16] = {0, 0, 1, 1, 2, 2, 3, 2,
                                               2, 2, 1, 1, 1, 0, 0, 0};
  if (k <= 16) return kPattern[i * 16 / k];
  return kPattern[i % 16];
}

/// U-Net-shaped synthetic bundle: layers spread over four resolution levels,
/// summand width 320 * 2^level (capped at 1280), dense feature one level
/// below the full grid. Not validated; values are only for timing.
inline ActivationBundle make_bench_workload(const BenchSpec& spec) {
  SplitMix64 rng(spec.seed);
  ActivationBundle b;
  b.model_id = "bench";
  b.image_size = {spec.grid.height * 8, spec.grid.width * 8};
  const std::size_t n_tok = std::max<std::size_t>(spec.tokens, 4);
  b.classes = {{1, "cat", false}, {2, "dog", false}, {3, "grass", true}};
  for (std::size_t t = 0; t < n_tok; ++t) {
    if (t == 0) {
      b.tokens.push_back({t, "<sos>", TokenCategory::kSpecial, std::nullopt});
    } else if (t <= 3) {
      b.tokens.push_back({t, b.classes[t - 1].name, TokenCategory::kContent,
                          static_cast<int>(t)});
    } else {
      b.tokens.push_back({t, "<pad>", TokenCategory::kStop, std::nullopt});
    }
  }
  auto level_grid = [&](std::size_t level) {
    return Extent{std::max<std::size_t>(1, spec.grid.height >> level),
                  std::max<std::size_t>(1, spec.grid.width >> level)};
  };
  auto stochastic = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.uniform(0.01, 1.0);
    return detail::normalize_rows(std::move(v), rows, cols);
  };
  for (std::size_t m = 0; m < spec.layers; ++m) {
    const std::size_t level = unet_level(m, spec.layers);
    const Extent g = level_grid(level);
    const std::size_t px = g.pixels();
    CrossLayer l;
    l.name = "cross_" + std::to_string(m);
    l.heads = spec.heads;
    l.grid = g;
    l.token_count = n_tok;
    l.d = std::min<std::size_t>(320u << level, 1280);
    std::vector<float> attn;
    attn.reserve(spec.heads * px * n_tok);
    for (std::size_t h = 0; h < spec.heads; ++h) {
      const Tensor a = stochastic(px, n_tok);
      attn.insert(attn.end(), a.values().begin(), a.values().end());
    }
    l.attn = Tensor({spec.heads, px, n_tok}, std::move(attn));
    l.head_out = detail::random_tensor(rng, {spec.heads, px, l.d}, -1.0, 1.0);
    b.cross_layers.push_back(std::move(l));
    b.self_layers.push_back({"self_" + std::to_string(m), g, stochastic(px, px)});
  }
  const Extent fg = level_grid(1);
  b.dense_feature = {fg, spec.dense_channels,
                     detail::random_tensor(rng, {fg.pixels(), spec.dense_channels}, -1.0, 1.0)};
  return b;
}

/// Head and layer maps averaged with equal weights.
inline GlobalAttentionMap uniform_aggregate(const ActivationBundle& b, Extent target) {
  std::vector<LayerMap> maps;
  maps.reserve(b.cross_layers.size());
  for (const auto& l : b.cross_layers) {
    maps.push_back({aggregate_heads(l.attn, uniform_head_weights(l.grid.pixels(), l.heads)),
                    l.grid});
  }
  return aggregate_layers(maps, uniform_layer_weights(maps.size()), target);
}

/// Automatic head and layer weighting followed by token merge and per-pixel
/// rescaling.
inline GlobalAttentionMap auto_aggregate_and_rescale(const ActivationBundle& b,
                                                     const EngineConfig& cfg) {
  const GlobalAttentionMap raw = aggregate_bundle(b, cfg);
  return per_pixel_rescale(merge_token_columns(raw, b.tokens, b.classes));
}

inline BenchReport run_bench(const BenchSpec& spec) {
  using clock = std::chrono::steady_clock;
  const ActivationBundle b = make_bench_workload(spec);
  const EngineConfig cfg;
  const Extent target = working_resolution(b, cfg);
  auto seconds = [](clock::time_point a, clock::time_point z) {
    return std::chrono::duration<double>(z - a).count();
  };
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  BenchReport report;
  report.spec = spec;
  std::vector<double> uniform_s, auto_s;
  const std::size_t runs = std::max<std::size_t>(spec.repeat, 1);
  for (std::size_t r = 0; r < runs; ++r) {
    auto t0 = clock::now();
    const auto u = uniform_aggregate(b, target);
    auto t1 = clock::now();
    const auto a = auto_aggregate_and_rescale(b, cfg);
    auto t2 = clock::now();
    uniform_s.push_back(seconds(t0, t1));
    auto_s.push_back(seconds(t1, t2));
    if (u.scores.empty() || a.scores.empty()) fail(ErrorCode::kInvalidShape, "empty bench map");
    ++report.runs;
  }
  report.uniform_median_s = median(uniform_s);
  report.auto_median_s = median(auto_s);
  report.ratio = report.auto_median_s / std::max(report.uniform_median_s, 1e-12);

  if (spec.end_to_end) {
    EngineConfig uniform_cfg;
    uniform_cfg.aggregation = AggregationMode::kUniform;
    auto t0 = clock::now();
    (void)segment(b, uniform_cfg);
    auto t1 = clock::now();
    (void)segment(b, cfg);
    auto t2 = clock::now();
    report.pipeline_uniform_s = seconds(t0, t1);
    report.pipeline_auto_s = seconds(t1, t2);
  }
  return report;
}

inline nlohmann::json bench_to_json(const BenchReport& r) {
  nlohmann::json j{{"grid", to_string(r.spec.grid)},
                   {"layers", r.spec.layers},
                   {"heads", r.spec.heads},
                   {"tokens", r.spec.tokens},
                   {"dense_channels", r.spec.dense_channels},
                   {"runs", r.runs},
                   {"uniform_aggregation_median_s", r.uniform_median_s},
                   {"auto_aggregation_rescale_median_s", r.auto_median_s},
                   {"ratio", r.ratio}};
  if (r.spec.end_to_end) {
    j["pipeline_uniform_s"] = r.pipeline_uniform_s;
    j["pipeline_auto_s"] = r.pipeline_auto_s;
    j["pipeline_ratio"] = r.pipeline_auto_s / std::max(r.pipeline_uniform_s, 1e-12);
  }
  return j;
}

}  // namespace attnseg
