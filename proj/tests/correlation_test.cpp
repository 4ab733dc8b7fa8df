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

#include "attnseg/correlation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "attnseg/fixture.hpp"
#include "attnseg/oracle.hpp"
#include "test_util.hpp"

namespace attnseg {
namespace {

using testing::ThrowsCode;

std::vector<float> Values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

GlobalAttentionMap Map(Stage stage, Extent res, std::vector<int> columns,
                       std::vector<float> v) {
  const std::size_t cols = columns.size();
  return {Tensor({res.pixels(), cols}, std::move(v)), stage, res, std::move(columns)};
}

std::vector<TokenEntry> Tokens() {
  return {{0, "<sos>", TokenCategory::kSpecial, std::nullopt},
          {1, "potted", TokenCategory::kContent, 2},
          {2, "plants", TokenCategory::kContent, 2},
          {3, "and", TokenCategory::kStop, std::nullopt},
          {4, "cat", TokenCategory::kContent, 1}};
}

std::vector<ClassEntry> Classes() { return {{2, "potted plant", false}, {1, "cat", false}}; }

TEST(MergeTokenColumnsTest, AveragesMultiWordClassesInClassOrder) {
  const auto raw = Map(Stage::kRaw, {1, 2}, {0, 1, 2, 3, 4},
                       {0.1f, 0.2f, 0.4f, 0.05f, 0.25f, 0.5f, 0.1f, 0.1f, 0.1f, 0.2f});
  const auto merged = merge_token_columns(raw, Tokens(), Classes());
  EXPECT_EQ(merged.stage, Stage::kMerged);
  EXPECT_EQ(merged.columns, (std::vector<int>{1, 2}));
  EXPECT_NEAR(merged.scores.at(0, 0), 0.25, 1e-7);
  EXPECT_NEAR(merged.scores.at(0, 1), 0.3, 1e-7);
  EXPECT_NEAR(merged.scores.at(1, 1), 0.1, 1e-7);
}

TEST(MergeTokenColumnsTest, OneTokenPerClassCopiesColumns) {
  const std::vector<TokenEntry> tokens{{0, "<sos>", TokenCategory::kSpecial, std::nullopt},
                                       {1, "cat", TokenCategory::kContent, 1},
                                       {2, "dog", TokenCategory::kContent, 2}};
  const std::vector<ClassEntry> classes{{1, "cat", false}, {2, "dog", false}};
  const auto raw = Map(Stage::kRaw, {2, 1}, {0, 1, 2}, {0.5f, 0.3f, 0.2f, 0.1f, 0.2f, 0.7f});
  EXPECT_EQ(Values(merge_token_columns(raw, tokens, classes).scores),
            (std::vector<float>{0.3f, 0.2f, 0.2f, 0.7f}));
}

TEST(MergeTokenColumnsTest, SpecialAndStopColumnsAreIgnored) {
  auto raw = Map(Stage::kRaw, {1, 1}, {0, 1, 2, 3, 4}, {0.1f, 0.2f, 0.4f, 0.05f, 0.25f});
  const auto before = merge_token_columns(raw, Tokens(), Classes());
  raw.scores = Tensor({1, 5}, {9.0f, 0.2f, 0.4f, -3.0f, 0.25f});
  EXPECT_EQ(merge_token_columns(raw, Tokens(), Classes()).scores, before.scores);
}

TEST(MergeTokenColumnsTest, ErrorsAndStageChecks) {
  const auto raw = Map(Stage::kRaw, {1, 1}, {0, 1}, {0.5f, 0.5f});
  const std::vector<TokenEntry> none{{0, "<sos>", TokenCategory::kSpecial, std::nullopt},
                                     {1, "the", TokenCategory::kStop, std::nullopt}};
  EXPECT_TRUE(ThrowsCode([&] { merge_token_columns(raw, none, Classes()); },
                         ErrorCode::kNoContentTokens));
  const std::vector<TokenEntry> unknown{{0, "<sos>", TokenCategory::kSpecial, std::nullopt},
                                        {1, "bird", TokenCategory::kContent, 7}};
  EXPECT_TRUE(ThrowsCode([&] { merge_token_columns(raw, unknown, Classes()); },
                         ErrorCode::kUnknownClassId));
  auto merged = raw;
  merged.stage = Stage::kMerged;
  EXPECT_TRUE(ThrowsCode([&] { merge_token_columns(merged, none, Classes()); },
                         ErrorCode::kInvalidScores));
}

TEST(PerPixelRescaleTest, HandValues) {
  const auto out = per_pixel_rescale(
      Map(Stage::kMerged, {1, 3}, {1, 2}, {0.3f, 0.1f, 0.7f, 0.7f, 0.0f, 0.0f}));
  EXPECT_EQ(out.stage, Stage::kRescaled);
  EXPECT_NEAR(out.scores.at(0, 0), 0.75, 1e-7);
  EXPECT_NEAR(out.scores.at(0, 1), 0.25, 1e-7);
  EXPECT_EQ(out.scores.at(1, 0), 0.5f);
  EXPECT_EQ(out.scores.at(2, 0), 0.5f);
  EXPECT_EQ(out.scores.at(2, 1), 0.5f);
}

TEST(PerPixelRescaleTest, ScalingARowByTenChangesNothing) {
  const auto a = per_pixel_rescale(Map(Stage::kMerged, {1, 1}, {1, 2, 3}, {0.3f, 0.1f, 0.2f}));
  const auto b = per_pixel_rescale(Map(Stage::kMerged, {1, 1}, {1, 2, 3}, {3.0f, 1.0f, 2.0f}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.scores.values()[i], b.scores.values()[i], 1e-7);
}

TEST(PerPixelRescaleTest, PowerOfTwoScalingIsBitIdentical) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cols = rng.between(1, 5), pixels = rng.between(1, 20);
    const Tensor t = detail::random_tensor(rng, {pixels, cols}, 0.0, 1.0);
    std::vector<float> scaled = Values(t);
    for (std::size_t i = 0; i < pixels; ++i) {
      const float c = std::ldexp(1.0f, static_cast<int>(rng.between(0, 20)) - 10);
      for (std::size_t q = 0; q < cols; ++q) scaled[i * cols + q] *= c;
    }
    std::vector<int> columns(cols);
    for (std::size_t q = 0; q < cols; ++q) columns[q] = static_cast<int>(q + 1);
    const GlobalAttentionMap a{t, Stage::kMerged, {pixels, 1}, columns};
    const GlobalAttentionMap b{Tensor(t.shape(), scaled), Stage::kMerged, {pixels, 1}, columns};
    EXPECT_EQ(per_pixel_rescale(a).scores, per_pixel_rescale(b).scores);
  }
}

TEST(PerPixelRescaleTest, NegativeScoreIsInvalid) {
  EXPECT_TRUE(ThrowsCode(
      [] { per_pixel_rescale(Map(Stage::kMerged, {1, 1}, {1, 2}, {0.5f, -0.1f})); },
      ErrorCode::kInvalidScores));
}

TEST(PerTokenRenormalizeTest, HandValues) {
  const auto out = per_token_renormalize(
      Map(Stage::kRescaled, {3, 1}, {1, 2}, {0.2f, 0.5f, 0.4f, 0.5f, 0.6f, 0.5f}));
  EXPECT_EQ(out.stage, Stage::kRenormalized);
  EXPECT_EQ(out.scores.at(0, 0), 0.0f);
  EXPECT_NEAR(out.scores.at(1, 0), 0.5, 1e-6);
  EXPECT_EQ(out.scores.at(2, 0), 1.0f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.scores.at(i, 1), 0.0f);
}

TEST(PerTokenRenormalizeTest, IdempotentOnNormalizedColumns) {
  const auto in = Map(Stage::kRescaled, {4, 1}, {1}, {0.0f, 0.25f, 1.0f, 0.5f});
  EXPECT_EQ(per_token_renormalize(in).scores, in.scores);
}

TEST(SelfAttentionRefineTest, ZeroStepsAndIdentity) {
  const auto in = Map(Stage::kRenormalized, {1, 2}, {1, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
  const std::vector<SelfLayer> uniform{{"s", {1, 2}, Tensor::filled({2, 2}, 0.5f)}};
  const auto zero = self_attention_refine(in, uniform, uniform_layer_weights(1), 0);
  EXPECT_EQ(zero.stage, Stage::kRefined);
  EXPECT_EQ(zero.scores, in.scores);

  const std::vector<SelfLayer> identity{{"s", {1, 2}, Tensor({2, 2}, {1, 0, 0, 1})}};
  EXPECT_EQ(self_attention_refine(in, identity, uniform_layer_weights(1), 5).scores, in.scores);
}

TEST(SelfAttentionRefineTest, UniformTwoPixelMapAverages) {
  const auto in = Map(Stage::kRenormalized, {1, 2}, {1, 2}, {0.0f, 1.0f, 1.0f, 0.2f});
  const std::vector<SelfLayer> uniform{{"s", {1, 2}, Tensor::filled({2, 2}, 0.5f)}};
  const auto out = self_attention_refine(in, uniform, uniform_layer_weights(1), 1);
  EXPECT_EQ(Values(out.scores), (std::vector<float>{0.5f, 0.6f, 0.5f, 0.6f}));
}

TEST(SelfAttentionRefineTest, StaysWithinColumnRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed});
    SegmentationTrace t;
    EngineConfig cfg;
    cfg.refinement_steps = 1 + static_cast<int>(seed % 3);
    t = segment_with_trace(b, cfg);
    const auto& before = t.stages[3].scores;
    const auto& after = t.stages[4].scores;
    for (std::size_t q = 0; q < before.dim(1); ++q) {
      float lo = before.at(0, q), hi = lo;
      for (std::size_t i = 0; i < before.dim(0); ++i) {
        lo = std::min(lo, before.at(i, q));
        hi = std::max(hi, before.at(i, q));
      }
      for (std::size_t i = 0; i < after.dim(0); ++i) {
        EXPECT_GE(after.at(i, q), lo - 1e-6f);
        EXPECT_LE(after.at(i, q), hi + 1e-6f);
      }
    }
  }
}

TEST(LabelPixelsTest, BackgroundRule) {
  const std::vector<ClassEntry> classes{{1, "cat", false}, {2, "grass", true}};
  auto label = [&](float cat, float grass) {
    const auto m = Map(Stage::kRefined, {1, 1}, {1, 2}, {cat, grass});
    return label_pixels(m, classes, 0.5, {1, 1}).labels[0];
  };
  EXPECT_EQ(label(0.9f, 0.1f), 1);
  EXPECT_EQ(label(0.0f, 0.0f), 0);
  EXPECT_EQ(label(0.4f, 0.6f), 0);
  EXPECT_EQ(label(0.5f, 0.1f), 1);  // ties go to the foreground
}

TEST(LabelPixelsTest, TiesGoToLowerClassId) {
  const std::vector<ClassEntry> classes{{7, "dog", false}, {3, "cat", false}};
  const auto m = Map(Stage::kRefined, {1, 1}, {3, 7}, {0.8f, 0.8f});
  EXPECT_EQ(label_pixels(m, classes, 0.5, {1, 1}).labels[0], 3);
}

TEST(LabelPixelsTest, NearestUpsampling) {
  const auto m = Map(Stage::kRefined, {1, 2}, {1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  const std::vector<ClassEntry> classes{{1, "a", false}, {2, "b", false}};
  const SegmentationMask mask = label_pixels(m, classes, 0.5, {2, 5});
  // Source column floor((2x+1)*2/10): 0,0,1,1,1.
  EXPECT_EQ(mask.labels, (std::vector<std::int32_t>{1, 1, 2, 2, 2, 1, 1, 2, 2, 2}));
}

TEST(LabelPixelsTest, PermutingClassDeclarationsKeepsMask) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ActivationBundle b = random_bundle({.seed = seed});
    const SegmentationMask mask = segment(b, {});
    std::reverse(b.classes.begin(), b.classes.end());
    EXPECT_EQ(segment(b, {}), mask) << seed;
  }
}

TEST(SegmentTest, RescaledRowsAndRenormalizedColumns) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const SegmentationTrace t = segment_with_trace(random_bundle({.seed = seed}), {});
    const Tensor& r = t.stages[2].scores;
    for (std::size_t i = 0; i < r.dim(0); ++i) {
      double total = 0.0;
      for (float v : r.slice(i)) total += v;
      EXPECT_NEAR(total, 1.0, 1e-5);
    }
    const Tensor& n = t.stages[3].scores;
    for (std::size_t q = 0; q < n.dim(1); ++q) {
      float lo = 1.0f, hi = 0.0f;
      for (std::size_t i = 0; i < n.dim(0); ++i) {
        lo = std::min(lo, n.at(i, q));
        hi = std::max(hi, n.at(i, q));
      }
      if (hi > 0.0f) {
        EXPECT_EQ(lo, 0.0f);
        EXPECT_EQ(hi, 1.0f);
      }
    }
  }
}

TEST(SegmentTest, SingleLayerIdentitySelfMatchesDirectRescaling) {
  ActivationBundle b = random_bundle({.seed = 17, .max_layers = 1, .max_heads = 1});
  const auto& l = b.cross_layers[0];
  b.self_layers[0] = {"id", l.grid, Tensor::filled({l.grid.pixels(), l.grid.pixels()}, 0.0f)};
  std::vector<float> eye(l.grid.pixels() * l.grid.pixels(), 0.0f);
  for (std::size_t i = 0; i < l.grid.pixels(); ++i) eye[i * l.grid.pixels() + i] = 1.0f;
  b.self_layers[0].map = Tensor({l.grid.pixels(), l.grid.pixels()}, eye);

  GlobalAttentionMap raw{l.attn.reshaped({l.grid.pixels(), l.token_count}), Stage::kRaw, l.grid,
                         {}};
  for (std::size_t j = 0; j < l.token_count; ++j) raw.columns.push_back(static_cast<int>(j));
  const auto direct = per_token_renormalize(
      per_pixel_rescale(merge_token_columns(raw, b.tokens, b.classes)));
  for (int steps : {0, 1, 3}) {
    EngineConfig cfg;
    cfg.refinement_steps = steps;
    const SegmentationTrace t = segment_with_trace(b, cfg);
    EXPECT_EQ(t.stages[4].scores, direct.scores);
    EXPECT_EQ(t.mask, label_pixels(direct, b.classes, cfg.bg_threshold, b.image_size));
  }
}

TEST(SegmentTest, MatchesOracleOnRandomBundles) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ActivationBundle b = random_bundle({.seed = seed});
    const SegmentationTrace t = segment_with_trace(b, {});
    const oracle::OracleResult o = oracle::oracle_segment(b, {});
    ASSERT_EQ(o.class_columns, t.stages[4].columns);
    double worst = 0.0;
    for (std::size_t i = 0; i < o.refined.size(); ++i) {
      worst = std::max(worst, std::abs(o.refined[i] - t.stages[4].scores.values()[i]));
    }
    EXPECT_LE(worst, 1e-5) << seed;
    EXPECT_EQ(o.mask, t.mask) << seed;
  }
}

TEST(SegmentTest, PairingMismatchNeedsExplicitPairing) {
  ActivationBundle b = random_bundle({.seed = 4});
  b.self_layers.push_back(b.self_layers.front());
  b.self_layers.back().name = "extra";
  EXPECT_TRUE(ThrowsCode([&] { segment(b, {}); }, ErrorCode::kInvalidConfig));
  EngineConfig cfg;
  cfg.layer_pairing.assign(b.cross_layers.size(), b.self_layers.size() - 1);
  EXPECT_NO_THROW(segment(b, cfg));
}

TEST(SegmentTest, PlantedFixtureIsRecovered) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Fixture fx = generate_fixture({.seed = seed});
    EXPECT_EQ(segment(fx.bundle, {}), fx.ground_truth) << seed;
  }
}

}  // namespace
}  // namespace attnseg
