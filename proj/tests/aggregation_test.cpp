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

#include "attnseg/aggregation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "attnseg/config.hpp"
#include "attnseg/correlation.hpp"
#include "attnseg/fixture.hpp"
#include "test_util.hpp"

namespace attnseg {
namespace {

using testing::ReferenceResize;
using testing::ThrowsCode;

std::vector<float> Values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor HeadOut(std::size_t heads, std::size_t pixels, std::size_t d, std::vector<float> v) {
  return Tensor({heads, pixels, d}, std::move(v));
}

void ExpectSimplexRows(const Tensor& w, double tol = 1e-5) {
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    double total = 0.0;
    for (float v : w.slice(i)) {
      EXPECT_GE(v, 0.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, tol) << "row " << i;
  }
}

TEST(SumHeadOutputsTest, SingleHeadIsIdentity) {
  const Tensor h = HeadOut(1, 2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(Values(sum_head_outputs(h)), (std::vector<float>{1, 2, 3, 4, 5, 6}));
}

TEST(SumHeadOutputsTest, OppositeHeadsCancel) {
  const Tensor h = HeadOut(2, 1, 3, {1.5f, -2, 7, -1.5f, 2, -7});
  EXPECT_EQ(Values(sum_head_outputs(h)), (std::vector<float>{0, 0, 0}));
}

TEST(SumHeadOutputsTest, FixtureRecomposition) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Fixture fx = generate_fixture({.seed = seed, .heads = 4, .head_dim = 16});
    for (std::size_t m = 0; m < fx.bundle.cross_layers.size(); ++m) {
      const Tensor sum = sum_head_outputs(fx.bundle.cross_layers[m].head_out);
      const auto ref = fx.concat_outputs[m].values();
      double scale = 0.0, err = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
        err = std::max(err, std::abs(static_cast<double>(ref[i]) - sum.values()[i]));
      }
      EXPECT_LE(err / scale, 1e-5);
      EXPECT_LE(fx.recomposition_error[m], 1e-5);
    }
  }
}

TEST(HeadWeightsTest, SingleHeadIsOne) {
  const Tensor w = head_weights(HeadOut(1, 3, 2, {1, 2, -3, 4, 0, 0}), HeadMetric::kDot).weights;
  EXPECT_EQ(Values(w), (std::vector<float>{1, 1, 1}));
}

TEST(HeadWeightsTest, OrthogonalUnitHeadsSplitEvenly) {
  const Tensor w = head_weights(HeadOut(2, 1, 2, {1, 0, 0, 1}), HeadMetric::kDot).weights;
  EXPECT_EQ(Values(w), (std::vector<float>{0.5f, 0.5f}));
}

TEST(HeadWeightsTest, DotMetricHandValues) {
  // Output = (2,1); raw = (2,0).(2,1) = 4 and (0,1).(2,1) = 1.
  const Tensor w = head_weights(HeadOut(2, 1, 2, {2, 0, 0, 1}), HeadMetric::kDot).weights;
  EXPECT_NEAR(w.values()[0], 0.8, 1e-7);
  EXPECT_NEAR(w.values()[1], 0.2, 1e-7);
}

TEST(HeadWeightsTest, L2AndCosineHandValues) {
  const Tensor h = HeadOut(2, 1, 2, {3, 4, 0, 1});
  // Output = (3,5). l2: |h| = 5 and 1. cosine: 29/(5 sqrt34), 5/(1 sqrt34).
  const Tensor l2 = head_weights(h, HeadMetric::kL2).weights;
  EXPECT_NEAR(l2.values()[0], 5.0 / 6.0, 1e-7);
  const Tensor cos = head_weights(h, HeadMetric::kCosine).weights;
  const double a = 29.0 / (5.0 * std::sqrt(34.0)), b = 5.0 / std::sqrt(34.0);
  EXPECT_NEAR(cos.values()[0], a / (a + b), 1e-7);
  EXPECT_NEAR(cos.values()[1], b / (a + b), 1e-7);
}

TEST(HeadWeightsTest, NegativeSimilarityIsClampedAndCancellationFallsBack) {
  // Output = (1,0): raw = 2, -1 -> (1, 0).
  Tensor w = head_weights(HeadOut(2, 1, 2, {2, 0, -1, 0}), HeadMetric::kDot).weights;
  EXPECT_EQ(Values(w), (std::vector<float>{1, 0}));
  // Output = 0 under every metric except l2 -> uniform.
  const Tensor cancel = HeadOut(2, 1, 2, {1, 2, -1, -2});
  for (HeadMetric m : {HeadMetric::kDot, HeadMetric::kCosine}) {
    EXPECT_EQ(Values(head_weights(cancel, m).weights), (std::vector<float>{0.5f, 0.5f}));
  }
  // All heads zero: l2 raw is 0 too.
  EXPECT_EQ(Values(head_weights(HeadOut(2, 1, 2, {0, 0, 0, 0}), HeadMetric::kL2).weights),
            (std::vector<float>{0.5f, 0.5f}));
}

TEST(HeadWeightsTest, SimplexOnRandomBundles) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const ActivationBundle b =
        random_bundle({.seed = seed, .cancelling_heads = seed % 4 == 0});
    for (const auto& l : b.cross_layers) {
      for (HeadMetric m : {HeadMetric::kDot, HeadMetric::kL2, HeadMetric::kCosine}) {
        ExpectSimplexRows(head_weights(l.head_out, m).weights);
      }
    }
  }
}

TEST(HeadWeightsTest, PositivePixelScalingLeavesDotWeights) {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t heads = rng.between(1, 6), pixels = rng.between(1, 10),
                      d = rng.between(1, 8);
    const Tensor h = detail::random_tensor(rng, {heads, pixels, d}, -1.0, 1.0);
    std::vector<float> scaled = Values(h);
    std::vector<double> c(pixels);
    for (double& x : c) x = rng.uniform(0.1, 10.0);
    for (std::size_t n = 0; n < heads; ++n) {
      for (std::size_t i = 0; i < pixels; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          float& v = scaled[(n * pixels + i) * d + k];
          v = static_cast<float>(v * c[i]);
        }
      }
    }
    const Tensor w0 = head_weights(h, HeadMetric::kDot).weights;
    const Tensor w1 = head_weights(Tensor(h.shape(), scaled), HeadMetric::kDot).weights;
    for (std::size_t i = 0; i < w0.size(); ++i) {
      EXPECT_NEAR(w0.values()[i], w1.values()[i], 1e-5);
    }
  }
}

TEST(AggregateHeadsTest, DegenerateWeights) {
  SplitMix64 rng(2);
  const Tensor a = Tensor({1, 3, 4}, Values(detail::normalize_rows(
                                         [&] {
                                           std::vector<double> v(12);
                                           for (double& x : v) x = rng.uniform(0.1, 1.0);
                                           return v;
                                         }(),
                                         3, 4)));
  std::vector<float> two = Values(a);
  const std::vector<float> copy = two;
  two.insert(two.end(), copy.begin(), copy.end());
  const Tensor identical({2, 3, 4}, two);
  EXPECT_EQ(Values(aggregate_heads(identical, uniform_head_weights(3, 2))), Values(a));

  std::vector<float> other(12, 0.25f);
  std::vector<float> mixed = Values(a);
  mixed.insert(mixed.end(), other.begin(), other.end());
  const HeadWeights first{Tensor({3, 2}, {1, 0, 1, 0, 1, 0})};
  EXPECT_EQ(Values(aggregate_heads(Tensor({2, 3, 4}, mixed), first)), Values(a));
}

TEST(AggregateHeadsTest, MatchesTripleLoop) {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor attn = detail::random_tensor(rng, {2, 3, 4}, 0.0, 1.0);
    const Tensor w = detail::random_tensor(rng, {3, 2}, 0.0, 1.0);
    const Tensor got = aggregate_heads(attn, {w});
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double ref = 0.0;
        for (std::size_t n = 0; n < 2; ++n) ref += w.at(i, n) * attn.at(n, i, j);
        EXPECT_NEAR(got.at(i, j), ref, 1e-6);
      }
    }
  }
}

TEST(AggregateHeadsTest, ConvexOnRandomBundles) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed});
    for (const auto& l : b.cross_layers) {
      const Tensor out = aggregate_heads(l.attn, head_weights(l.head_out, HeadMetric::kDot));
      const std::size_t px = l.grid.pixels(), n = l.token_count;
      for (std::size_t i = 0; i < px; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          float lo = l.attn.at(0, i, j), hi = lo;
          for (std::size_t h = 1; h < l.heads; ++h) {
            lo = std::min(lo, l.attn.at(h, i, j));
            hi = std::max(hi, l.attn.at(h, i, j));
          }
          EXPECT_GE(out.at(i, j), lo - 1e-6f);
          EXPECT_LE(out.at(i, j), hi + 1e-6f);
          row += out.at(i, j);
        }
        EXPECT_NEAR(row, 1.0, 1e-4);
      }
    }
  }
}

TEST(PseudoSelfAttentionTest, IdenticalRowsAreUniform) {
  const Tensor feat({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  const Tensor p = pseudo_self_attention(feat, {2, 2}).map;
  for (float v : p.values()) EXPECT_NEAR(v, 0.25, 1e-7);
}

TEST(PseudoSelfAttentionTest, SinglePixel) {
  EXPECT_EQ(Values(pseudo_self_attention(Tensor({1, 5}, {1, -2, 3, 0, 9}), {1, 1}).map),
            (std::vector<float>{1.0f}));
}

TEST(PseudoSelfAttentionTest, OrthogonalRowsUnitLogit) {
  // d_f = 4, row norm 4^(1/4): diagonal logit 2/sqrt(4) = 1, off-diagonal 0.
  const float r = static_cast<float>(std::sqrt(2.0));
  const Tensor feat({2, 4}, {r, 0, 0, 0, 0, r, 0, 0});
  const Tensor p = pseudo_self_attention(feat, {1, 2}).map;
  const double e = std::exp(1.0);
  EXPECT_NEAR(p.at(0, 0), e / (e + 1.0), 1e-6);
  EXPECT_NEAR(p.at(1, 1), e / (e + 1.0), 1e-6);
  EXPECT_NEAR(p.at(0, 1), 1.0 / (e + 1.0), 1e-6);
}

TEST(PseudoSelfAttentionTest, OrthogonalRowsOfNormSqrtD) {
  // Norm sqrt(d_f) gives diagonal logit d_f / sqrt(d_f) = sqrt(d_f).
  for (std::size_t df : {2u, 3u, 9u}) {
    const float r = static_cast<float>(std::sqrt(static_cast<double>(df)));
    std::vector<float> v(2 * df, 0.0f);
    v[0] = r;
    v[df + 1] = r;
    const Tensor p = pseudo_self_attention(Tensor({2, df}, v), {2, 1}).map;
    const double e = std::exp(std::sqrt(static_cast<double>(df)));
    EXPECT_NEAR(p.at(0, 0), e / (e + 1.0), 1e-6) << df;
  }
}

TEST(PseudoSelfAttentionTest, RowsAreStochastic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed});
    ExpectSimplexRows(pseudo_self_attention(b.dense_feature.values, b.dense_feature.grid).map);
  }
}

TEST(LayerWeightsTest, SingleLayerAndIdenticalLayers) {
  const ActivationBundle b = random_bundle({.seed = 3});
  const auto pseudo = pseudo_self_attention(b.dense_feature.values, b.dense_feature.grid);
  for (LayerMetric m : {LayerMetric::kDot, LayerMetric::kMse, LayerMetric::kIou}) {
    const std::vector<SelfLayer> one{b.self_layers[0]};
    EXPECT_EQ(layer_weights(one, pseudo, m).values, (std::vector<double>{1.0}));
    const std::vector<SelfLayer> two{b.self_layers[0], b.self_layers[0]};
    EXPECT_EQ(layer_weights(two, pseudo, m).values, (std::vector<double>{0.5, 0.5}));
  }
}

TEST(LayerWeightsTest, FlatDotOracleOnTwoByTwo) {
  SplitMix64 rng(9);
  std::vector<double> raw(16);
  for (double& x : raw) x = rng.uniform(0.05, 1.0);
  const Tensor p = detail::normalize_rows(raw, 4, 4);
  const Tensor uniform = Tensor::filled({4, 4}, 0.25f);
  const std::vector<SelfLayer> layers{{"a", {2, 2}, p}, {"b", {2, 2}, uniform}};
  const LayerWeights w = layer_weights(layers, {p, {2, 2}}, LayerMetric::kDot);

  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    s1 += static_cast<double>(p.values()[i]) * p.values()[i];
    s2 += static_cast<double>(p.values()[i]) * 0.25;
  }
  ASSERT_NEAR(s2, 1.0, 1e-6);
  EXPECT_NEAR(w.values[0], s1 / (s1 + s2), 1e-12);
  EXPECT_NEAR(w.values[1], s2 / (s1 + s2), 1e-12);
}

TEST(LayerWeightsTest, MseAndIouHandValues) {
  const Tensor pseudo({2, 2}, {1, 0, 0, 1});
  const Tensor half = Tensor::filled({2, 2}, 0.5f);
  const std::vector<SelfLayer> layers{{"same", {1, 2}, pseudo}, {"half", {1, 2}, half}};
  // mse: 1/(0 + 1e-8) vs 1/(0.25 + 1e-8).
  const LayerWeights mse = layer_weights(layers, {pseudo, {1, 2}}, LayerMetric::kMse, 1e-8);
  const double a = 1e8, b = 1.0 / (0.25 + 1e-8);
  EXPECT_NEAR(mse.values[0], a / (a + b), 1e-12);
  // iou: 2/2 = 1 vs sum(min)=1, sum(max)=3 -> 1/3.
  const LayerWeights iou = layer_weights(layers, {pseudo, {1, 2}}, LayerMetric::kIou);
  EXPECT_NEAR(iou.values[0], 0.75, 1e-12);
  EXPECT_NEAR(iou.values[1], 0.25, 1e-12);
}

TEST(LayerWeightsTest, FallbackWhenEverySimilarityIsZero) {
  const Tensor pseudo({2, 2}, {1, 0, 0, 1});
  const Tensor swap({2, 2}, {0, 1, 1, 0});
  const std::vector<SelfLayer> layers{{"a", {1, 2}, swap}, {"b", {1, 2}, swap},
                                      {"c", {1, 2}, swap}};
  for (LayerMetric m : {LayerMetric::kDot, LayerMetric::kIou}) {
    const LayerWeights w = layer_weights(layers, {pseudo, {1, 2}}, m);
    for (double v : w.values) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  }
}

TEST(LayerWeightsTest, PermutingLayersPermutesWeights) {
  SplitMix64 rng(41);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed, .max_layers = 4});
    const auto pseudo = pseudo_self_attention(b.dense_feature.values, b.dense_feature.grid);
    std::vector<std::size_t> perm(b.self_layers.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    std::vector<SelfLayer> permuted;
    for (std::size_t p : perm) permuted.push_back(b.self_layers[p]);
    for (LayerMetric m : {LayerMetric::kDot, LayerMetric::kMse, LayerMetric::kIou}) {
      const LayerWeights w = layer_weights(b.self_layers, pseudo, m);
      const LayerWeights wp = layer_weights(permuted, pseudo, m);
      for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_DOUBLE_EQ(wp.values[i], w.values[perm[i]]);
      }
    }
  }
}

TEST(LayerWeightsTest, PermutingLayerPairsPermutesRawMapInputsOnly) {
  SplitMix64 rng(43);
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const ActivationBundle b = random_bundle({.seed = 900 + seed, .max_layers = 4});
    ActivationBundle p = b;
    std::vector<std::size_t> perm(b.cross_layers.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.cross_layers[i] = b.cross_layers[perm[i]];
      p.self_layers[i] = b.self_layers[perm[i]];
    }
    SegmentationTrace t0, t1;
    const GlobalAttentionMap r0 = aggregate_bundle(b, {}, &t0);
    const GlobalAttentionMap r1 = aggregate_bundle(p, {}, &t1);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      EXPECT_DOUBLE_EQ(t1.cross_layer_weights.values[i], t0.cross_layer_weights.values[perm[i]]);
    }
    for (std::size_t i = 0; i < r0.scores.size(); ++i) {
      EXPECT_NEAR(r0.scores.values()[i], r1.scores.values()[i], 1e-6);
    }
  }
}

TEST(InheritLayerWeightsTest, RenormalizesOverCrossLayers) {
  const LayerWeights self{{0.5, 0.3, 0.2}};
  const std::vector<std::size_t> pairing{2, 2};
  EXPECT_EQ(inherit_layer_weights(self, pairing).values, (std::vector<double>{0.5, 0.5}));
  const std::vector<std::size_t> bad{0, 3};
  EXPECT_TRUE(ThrowsCode([&] { inherit_layer_weights(self, bad); }, ErrorCode::kInvalidConfig));
}

TEST(AggregateLayersTest, DegenerateWeightsAndIdenticalMaps) {
  SplitMix64 rng(5);
  const Tensor a = detail::random_tensor(rng, {4, 3}, 0.0, 1.0);
  const Tensor b = detail::random_tensor(rng, {16, 3}, 0.0, 1.0);
  const std::vector<LayerMap> maps{{a, {2, 2}}, {b, {4, 4}}};
  const GlobalAttentionMap first = aggregate_layers(maps, {{1.0, 0.0}}, {4, 4});
  EXPECT_EQ(first.scores, resize_columns(a, {2, 2}, {4, 4}));
  EXPECT_EQ(first.stage, Stage::kRaw);
  EXPECT_EQ(first.columns, (std::vector<int>{0, 1, 2}));

  const std::vector<LayerMap> same{{b, {4, 4}}, {b, {4, 4}}, {b, {4, 4}}};
  const GlobalAttentionMap avg = aggregate_layers(same, uniform_layer_weights(3), {4, 4});
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_NEAR(avg.scores.values()[i], b.values()[i], 1e-6);
  }
}

TEST(AggregateLayersTest, MatchesResizeThenAverageOracle) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = rng.between(1, 5);
    const Tensor a = detail::random_tensor(rng, {4, n}, 0.0, 1.0);
    const Tensor b = detail::random_tensor(rng, {16, n}, 0.0, 1.0);
    const std::vector<LayerMap> maps{{a, {2, 2}}, {b, {4, 4}}};
    const GlobalAttentionMap got = aggregate_layers(maps, uniform_layer_weights(2), {4, 4});
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> pa(4), pb(16);
      for (std::size_t i = 0; i < 4; ++i) pa[i] = a.at(i, j);
      for (std::size_t i = 0; i < 16; ++i) pb[i] = b.at(i, j);
      const auto ra = ReferenceResize(pa, {2, 2}, {4, 4});
      const auto rb = ReferenceResize(pb, {4, 4}, {4, 4});
      for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(got.scores.at(i, j), 0.5 * (ra[i] + rb[i]), 1e-6);
      }
    }
  }
}

TEST(AggregateLayersTest, StaysWithinInputRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed});
    std::vector<LayerMap> maps;
    float lo = 1.0f, hi = 0.0f;
    for (const auto& l : b.cross_layers) {
      maps.push_back({aggregate_heads(l.attn, uniform_head_weights(l.grid.pixels(), l.heads)),
                      l.grid});
      for (float v : maps.back().scores.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    std::vector<double> raw(maps.size());
    SplitMix64 rng(seed);
    for (double& x : raw) x = rng.uniform();
    normalize_simplex(raw);
    const GlobalAttentionMap g =
        aggregate_layers(maps, {raw}, working_resolution(b, EngineConfig{}));
    for (float v : g.scores.values()) {
      EXPECT_GE(v, lo - 1e-6f);
      EXPECT_LE(v, hi + 1e-6f);
    }
  }
}

TEST(AggregateLayersTest, CountMismatchIsInvalidShape) {
  const std::vector<LayerMap> maps{{Tensor::filled({4, 2}, 0.5f), {2, 2}}};
  EXPECT_TRUE(ThrowsCode([&] { aggregate_layers(maps, uniform_layer_weights(2), {2, 2}); },
                         ErrorCode::kInvalidShape));
}

TEST(MetricNamesTest, ParseAndPrint) {
  for (HeadMetric m : {HeadMetric::kDot, HeadMetric::kL2, HeadMetric::kCosine}) {
    EXPECT_EQ(parse_head_metric(to_string(m)), m);
  }
  for (LayerMetric m : {LayerMetric::kDot, LayerMetric::kMse, LayerMetric::kIou}) {
    EXPECT_EQ(parse_layer_metric(to_string(m)), m);
  }
  EXPECT_FALSE(parse_head_metric("manhattan"));
  EXPECT_FALSE(parse_layer_metric("l2"));
}

}  // namespace
}  // namespace attnseg
