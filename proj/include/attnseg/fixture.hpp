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

// Deterministic synthetic bundles.
//
// generate_fixture() plants a region partition and builds attention layers
// from explicit per-head Q/K/V and an output projection W^O, so the bundle's
// head summands can be checked against the concat-then-project output, and
// the planted partition is the expected segmentation.
//
// random_bundle() draws unstructured but valid bundles for equivalence and
// invariance sweeps.
//
// All randomness comes from SplitMix64 (docs/FORMAT.md), so any
// implementation of the same recipe reproduces the bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attnseg/aggregation.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/error.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  /// Uniform integer in [lo, hi].
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }

 private:
  std::uint64_t state_;
};

struct FixtureSpec {
  std::uint64_t seed = 0;
  Extent grid{8, 8};
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t tokens = 6;
  std::size_t classes = 0;  // 0 picks min(3, tokens - 2)
  bool background_class = true;
  std::size_t model_dim = 8;
  std::size_t head_dim = 4;
  std::size_t image_scale = 4;
  double logit_gap = 8.0;
  double noise_amplitude = 0.0;
};

struct Fixture {
  ActivationBundle bundle;
  SegmentationMask ground_truth;
  std::vector<Tensor> concat_outputs;        // per layer, [pixels x model_dim]
  std::vector<double> recomposition_error;  // per layer, relative max-abs
};

namespace detail {

inline Tensor random_tensor(SplitMix64& rng, Shape shape, double lo, double hi) {
  std::vector<float> v(shape_product(shape));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor normalize_rows(std::vector<double> v, std::size_t rows, std::size_t cols) {
  std::vector<float> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += v[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<float>(v[r * cols + c] / total);
    }
  }
  return Tensor({rows, cols}, std::move(out));
}

inline const char* class_name(std::size_t i) {
  static const char* kNames[] = {"cat",  "grass", "dog",  "sky",    "tree",
                                 "car",  "road",  "wall", "person", "boat"};
  return kNames[i % 10];
}

inline double max_abs(std::span<const float> v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

}  // namespace detail

inline std::size_t fixture_class_count(const FixtureSpec& spec) {
  return spec.classes ? spec.classes : std::min<std::size_t>(3, spec.tokens - 2);
}

inline void validate_fixture_spec(const FixtureSpec& spec) {
  auto bad = [](const std::string& m) { fail(ErrorCode::kInvalidSpec, m); };
  if (spec.grid.pixels() == 0) bad("grid must be non-empty");
  if (spec.layers == 0 || spec.heads == 0) bad("layers and heads must be >= 1");
  if (spec.tokens < 4) bad("need at least 4 tokens (special, two content, stop)");
  if (spec.model_dim == 0 || spec.head_dim == 0 || spec.image_scale == 0) {
    bad("model_dim, head_dim and image_scale must be >= 1");
  }
  const std::size_t classes = fixture_class_count(spec);
  if (classes < 2 || classes > spec.tokens - 2) {
    bad("classes must be between 2 and tokens - 2; a lone class rescales to a constant");
  }
  if (classes > spec.grid.pixels()) bad("grid has fewer pixels than classes");
  if (!(spec.noise_amplitude >= 0.0)) bad("noise_amplitude must be >= 0");
  if (!(spec.logit_gap > 3.0 * spec.noise_amplitude)) {
    bad("planted margin " + std::to_string(spec.logit_gap) +
        " must exceed 3x noise amplitude " + std::to_string(spec.noise_amplitude));
  }
}

/// Builds a bundle whose pipeline output is the planted partition.
///
/// Layout: token 0 is a special token, tokens 1..C are one content token per
/// class, a spare slot (if any) becomes a second token of class 1, the rest
/// are stop words. With two or more classes the last one is flagged as a
/// background object, so its region is expected as label 0.
///
/// Per head, query logits for a pixel are: special ~ U[2,6]; the planted
/// class's tokens gap * U[1,1.5]; other content tokens 0; stop tokens
/// U[-1,1]; content tokens get an extra U[-noise, noise]. Keys are
/// sqrt(tokens) * I, so softmax(Q K^T / sqrt(tokens)) reproduces the logits.
/// Self-attention is block-diagonal on the regions plus a small uniform
/// leak, and the dense feature is a scaled region one-hot.
inline Fixture generate_fixture(const FixtureSpec& spec) {
  validate_fixture_spec(spec);
  SplitMix64 rng(spec.seed);
  const Extent grid = spec.grid;
  const std::size_t px = grid.pixels();
  const std::size_t n_tok = spec.tokens;
  const std::size_t n_cls = fixture_class_count(spec);
  const bool has_bg = spec.background_class && n_cls >= 2;

  Fixture fx;
  ActivationBundle& b = fx.bundle;
  b.model_id = "synthetic-fixture";
  b.timestep = 100;
  b.image_size = {grid.height * spec.image_scale, grid.width * spec.image_scale};

  // Tokens and classes.
  std::vector<int> token_class(n_tok, 0);
  b.tokens.push_back({0, "<sos>", TokenCategory::kSpecial, std::nullopt});
  for (std::size_t c = 0; c < n_cls; ++c) {
    b.classes.push_back({static_cast<int>(c + 1), detail::class_name(c),
                         has_bg && c + 1 == n_cls});
  }
  for (std::size_t t = 1; t < n_tok; ++t) {
    if (t <= n_cls) {
      token_class[t] = static_cast<int>(t);
      b.tokens.push_back({t, detail::class_name(t - 1), TokenCategory::kContent,
                          static_cast<int>(t)});
    } else if (t == n_cls + 1 && t + 1 < n_tok) {
      token_class[t] = 1;
      b.tokens.push_back({t, "big", TokenCategory::kContent, 1});
    } else {
      b.tokens.push_back({t, t + 1 == n_tok ? "<pad>" : "a", TokenCategory::kStop,
                          std::nullopt});
    }
  }

  // Planted regions: nearest of n_cls distinct seed pixels.
  std::vector<std::size_t> seeds;
  while (seeds.size() < n_cls) {
    const std::size_t p = rng.index(px);
    if (std::find(seeds.begin(), seeds.end(), p) == seeds.end()) seeds.push_back(p);
  }
  std::vector<int> region(px);
  for (std::size_t p = 0; p < px; ++p) {
    const long long y = static_cast<long long>(p / grid.width);
    const long long x = static_cast<long long>(p % grid.width);
    long long best = -1;
    for (std::size_t c = 0; c < n_cls; ++c) {
      const long long sy = static_cast<long long>(seeds[c] / grid.width);
      const long long sx = static_cast<long long>(seeds[c] % grid.width);
      const long long dist = (y - sy) * (y - sy) + (x - sx) * (x - sx);
      if (best < 0 || dist < best) {
        best = dist;
        region[p] = static_cast<int>(c + 1);
      }
    }
  }

  // Cross-attention layers.
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_tok));
  std::vector<float> key_values(n_tok * n_tok, 0.0f);
  for (std::size_t t = 0; t < n_tok; ++t) {
    key_values[t * n_tok + t] = static_cast<float>(std::sqrt(static_cast<double>(n_tok)));
  }
  const Tensor keys({n_tok, n_tok}, std::move(key_values));
  const Tensor text = detail::random_tensor(rng, {n_tok, spec.model_dim}, -1.0, 1.0);
  const std::size_t hd = spec.head_dim;
  const std::size_t concat_dim = spec.heads * hd;

  for (std::size_t m = 0; m < spec.layers; ++m) {
    const Tensor w_out = detail::random_tensor(
        rng, {concat_dim, spec.model_dim}, -1.0 / std::sqrt(double(concat_dim)),
        1.0 / std::sqrt(double(concat_dim)));
    std::vector<float> attn_all, head_all, concat(px * concat_dim);
    for (std::size_t n = 0; n < spec.heads; ++n) {
      const double gap = spec.logit_gap * rng.uniform(1.0, 1.5);
      std::vector<float> logits(px * n_tok);
      for (std::size_t p = 0; p < px; ++p) {
        for (std::size_t t = 0; t < n_tok; ++t) {
          double v;
          if (t == 0) {
            v = rng.uniform(2.0, 6.0);
          } else if (token_class[t] != 0) {
            v = (token_class[t] == region[p] ? gap : 0.0) +
                rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
          } else {
            v = rng.uniform(-1.0, 1.0);
          }
          logits[p * n_tok + t] = static_cast<float>(v);
        }
      }
      const Tensor query({px, n_tok}, std::move(logits));
      const Tensor attn = softmax_rows(matmul_transposed(query, keys), scale);
      const Tensor w_value = detail::random_tensor(
          rng, {spec.model_dim, hd}, -1.0 / std::sqrt(double(spec.model_dim)),
          1.0 / std::sqrt(double(spec.model_dim)));
      const Tensor head_value = matmul(attn, matmul(text, w_value));  // A_n V_n
      std::vector<float> w_out_rows(w_out.values().begin() + n * hd * spec.model_dim,
                                    w_out.values().begin() + (n + 1) * hd * spec.model_dim);
      const Tensor summand = matmul(head_value, Tensor({hd, spec.model_dim}, w_out_rows));
      for (std::size_t p = 0; p < px; ++p) {
        for (std::size_t c = 0; c < hd; ++c) {
          concat[p * concat_dim + n * hd + c] = head_value.at(p, c);
        }
      }
      attn_all.insert(attn_all.end(), attn.values().begin(), attn.values().end());
      head_all.insert(head_all.end(), summand.values().begin(), summand.values().end());
    }
    CrossLayer layer;
    layer.name = "cross_" + std::to_string(m);
    layer.heads = spec.heads;
    layer.grid = grid;
    layer.token_count = n_tok;
    layer.d = spec.model_dim;
    layer.attn = Tensor({spec.heads, px, n_tok}, std::move(attn_all));
    layer.head_out = Tensor({spec.heads, px, spec.model_dim}, std::move(head_all));

    const Tensor projected = matmul(Tensor({px, concat_dim}, std::move(concat)), w_out);
    const Tensor summed = sum_head_outputs(layer.head_out);
    double worst = 0.0;
    for (std::size_t i = 0; i < projected.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(projected.values()[i]) -
                                       summed.values()[i]));
    }
    const double rel = worst / std::max(detail::max_abs(projected.values()), 1e-30);
    if (rel > 1e-5) {
      fail(ErrorCode::kInvalidSpec, "head summands of layer " + std::to_string(m) +
                                        " do not recompose the projected output");
    }
    fx.recomposition_error.push_back(rel);
    fx.concat_outputs.push_back(projected);
    b.cross_layers.push_back(std::move(layer));
  }

  // Self-attention layers, one per cross layer.
  for (std::size_t m = 0; m < spec.layers; ++m) {
    const double leak = rng.uniform(0.0, 0.1);
    std::vector<double> s(px * px, 0.0);
    for (std::size_t i = 0; i < px; ++i) {
      double block = 0.0;
      for (std::size_t j = 0; j < px; ++j) {
        if (region[j] == region[i]) block += (s[i * px + j] = rng.uniform(0.5, 1.5));
      }
      for (std::size_t j = 0; j < px; ++j) {
        s[i * px + j] = (1.0 - leak) * s[i * px + j] / block + leak / double(px);
      }
    }
    b.self_layers.push_back({"self_" + std::to_string(m), grid,
                             detail::normalize_rows(std::move(s), px, px)});
  }

  // Dense feature: scaled one-hot of the region plus small jitter.
  const std::size_t channels = n_cls + 2;
  const double amplitude = std::sqrt(12.0 * std::sqrt(static_cast<double>(channels)));
  std::vector<float> feat(px * channels);
  for (std::size_t p = 0; p < px; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double hot = static_cast<int>(c + 1) == region[p] ? amplitude : 0.0;
      feat[p * channels + c] = static_cast<float>(hot + rng.uniform(-0.1, 0.1));
    }
  }
  b.dense_feature = {grid, channels, Tensor({px, channels}, std::move(feat))};

  // Ground truth at image resolution, background objects -> 0.
  fx.ground_truth.size = b.image_size;
  fx.ground_truth.labels.resize(b.image_size.pixels());
  for (std::size_t y = 0; y < b.image_size.height; ++y) {
    for (std::size_t x = 0; x < b.image_size.width; ++x) {
      const int r = region[(y / spec.image_scale) * grid.width + x / spec.image_scale];
      fx.ground_truth.labels[y * b.image_size.width + x] =
          b.classes[r - 1].is_background ? 0 : r;
    }
  }
  validate_bundle(b);
  return fx;
}

struct RandomBundleSpec {
  std::uint64_t seed = 0;
  std::size_t min_grid = 4;
  std::size_t max_grid = 8;
  std::size_t max_layers = 3;
  std::size_t max_heads = 4;
  std::size_t max_tokens = 8;
  // Every pixel's head summands cancel, so the summed output is zero and the
  // head weights must fall back to uniform.
  bool cancelling_heads = false;
};

/// Unstructured valid bundle: random grids (cross, self and dense layers at
/// full or half resolution), token categories, background flags and an
/// image size that is not a multiple of the grid.
inline ActivationBundle random_bundle(const RandomBundleSpec& spec) {
  SplitMix64 rng(spec.seed);
  const Extent grid{rng.between(spec.min_grid, spec.max_grid),
                    rng.between(spec.min_grid, spec.max_grid)};
  auto pick_grid = [&] {
    return rng.index(2) ? grid : Extent{(grid.height + 1) / 2, (grid.width + 1) / 2};
  };

  ActivationBundle b;
  b.model_id = "random";
  b.timestep = static_cast<std::int64_t>(rng.between(0, 999));
  b.image_size = {rng.between(grid.height, 3 * grid.height),
                  rng.between(grid.width, 3 * grid.width)};

  const std::size_t n_cls = rng.between(1, 3);
  for (std::size_t c = 0; c < n_cls; ++c) {
    b.classes.push_back({static_cast<int>(c + 1), detail::class_name(c), rng.uniform() < 0.3});
  }
  const std::size_t n_tok = rng.between(3, std::max<std::size_t>(3, spec.max_tokens));
  b.tokens.push_back({0, "<sos>", TokenCategory::kSpecial, std::nullopt});
  bool any_content = false;
  for (std::size_t t = 1; t < n_tok; ++t) {
    const bool content = (t + 1 == n_tok && !any_content) || rng.uniform() < 0.5;
    if (content) {
      const int id = static_cast<int>(rng.between(1, n_cls));
      b.tokens.push_back({t, b.classes[id - 1].name, TokenCategory::kContent, id});
      any_content = true;
    } else {
      b.tokens.push_back({t, "of", TokenCategory::kStop, std::nullopt});
    }
  }

  const std::size_t layers = rng.between(1, spec.max_layers);
  for (std::size_t m = 0; m < layers; ++m) {
    CrossLayer l;
    l.name = "cross_" + std::to_string(m);
    l.heads = rng.between(1, spec.max_heads);
    l.grid = pick_grid();
    l.token_count = n_tok;
    l.d = rng.between(2, 6);
    const std::size_t px = l.grid.pixels();
    std::vector<float> attn;
    for (std::size_t h = 0; h < l.heads; ++h) {
      std::vector<float> logits(px * n_tok);
      for (std::size_t p = 0; p < px; ++p) {
        for (std::size_t t = 0; t < n_tok; ++t) {
          logits[p * n_tok + t] =
              static_cast<float>(rng.uniform(-3.0, 3.0) + (t == 0 ? rng.uniform(0.0, 4.0) : 0.0));
        }
      }
      const Tensor a = softmax_rows(Tensor({px, n_tok}, std::move(logits)), 1.0);
      attn.insert(attn.end(), a.values().begin(), a.values().end());
    }
    l.attn = Tensor({l.heads, px, n_tok}, std::move(attn));
    std::vector<float> out(l.heads * px * l.d);
    for (float& v : out) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (std::size_t p = 0; p < px; ++p) {
      const bool cancel = spec.cancelling_heads || rng.uniform() < 0.1;
      if (!cancel) continue;
      // Pairs of opposite summands; an odd head out is zeroed.
      for (std::size_t h = 0; h < l.heads; ++h) {
        for (std::size_t c = 0; c < l.d; ++c) {
          float& v = out[(h * px + p) * l.d + c];
          if (h % 2 == 1) {
            v = -out[((h - 1) * px + p) * l.d + c];
          } else if (h + 1 == l.heads) {
            v = 0.0f;
          }
        }
      }
    }
    l.head_out = Tensor({l.heads, px, l.d}, std::move(out));
    b.cross_layers.push_back(std::move(l));
  }

  for (std::size_t m = 0; m < layers; ++m) {
    const Extent g = pick_grid();
    const std::size_t px = g.pixels();
    std::vector<double> s(px * px);
    for (double& v : s) v = rng.uniform(0.01, 1.0);
    b.self_layers.push_back({"self_" + std::to_string(m), g,
                             detail::normalize_rows(std::move(s), px, px)});
  }

  const Extent fg = pick_grid();
  const std::size_t channels = rng.between(2, 6);
  b.dense_feature = {fg, channels,
                     detail::random_tensor(rng, {fg.pixels(), channels}, -1.5, 1.5)};
  validate_bundle(b);
  return b;
}

}  // namespace attnseg
