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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/aggregation.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/error.hpp"
#include "json.hpp"

namespace attnseg {

/// kUniform is the plain-average reference: every head and layer weighs the
/// same. Everything downstream of aggregation is unchanged.
enum class AggregationMode { kAuto, kUniform };

struct EngineConfig {
  HeadMetric head_metric = HeadMetric::kDot;
  LayerMetric layer_metric = LayerMetric::kDot;
  AggregationMode aggregation = AggregationMode::kAuto;
  int refinement_steps = 1;
  double bg_threshold = 0.5;
  // Working grid; unset means the largest height and width over cross layers.
  std::optional<Extent> target_resolution;
  double epsilon = 1e-8;
  // Self layer whose weight each cross layer inherits; empty means the layer
  // at the same position.
  std::vector<std::size_t> layer_pairing;

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

inline void validate_config(const EngineConfig& c) {
  if (!(c.bg_threshold >= 0.0 && c.bg_threshold <= 1.0)) {
    fail(ErrorCode::kInvalidConfig, "bg_threshold must lie in [0, 1]");
  }
  if (c.refinement_steps < 0) {
    fail(ErrorCode::kInvalidConfig, "refinement_steps must be >= 0");
  }
  if (!(c.epsilon > 0.0)) fail(ErrorCode::kInvalidConfig, "epsilon must be > 0");
  if (c.target_resolution &&
      (c.target_resolution->height == 0 || c.target_resolution->width == 0)) {
    fail(ErrorCode::kInvalidConfig, "target_resolution must be positive");
  }
}

inline nlohmann::json config_to_json(const EngineConfig& c) {
  using nlohmann::json;
  json j{{"head_metric", to_string(c.head_metric)},
         {"layer_metric", to_string(c.layer_metric)},
         {"aggregation", c.aggregation == AggregationMode::kAuto ? "auto" : "uniform"},
         {"refinement_steps", c.refinement_steps},
         {"bg_threshold", c.bg_threshold},
         {"epsilon", c.epsilon}};
  if (c.target_resolution) {
    j["target_resolution"] = {{"height", c.target_resolution->height},
                              {"width", c.target_resolution->width}};
  } else {
    j["target_resolution"] = "max";
  }
  if (c.layer_pairing.empty()) {
    j["layer_pairing"] = "ordinal";
  } else {
    j["layer_pairing"] = c.layer_pairing;
  }
  return j;
}

/// Overlays the keys present in `j` onto `base`.
inline EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {}) {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidConfig, what); };
  if (!j.is_object()) bad("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "head_metric") {
      auto m = v.is_string() ? parse_head_metric(v.get<std::string>()) : std::nullopt;
      if (!m) bad("head_metric must be \"dot\", \"l2\" or \"cosine\"");
      base.head_metric = *m;
    } else if (key == "layer_metric") {
      auto m = v.is_string() ? parse_layer_metric(v.get<std::string>()) : std::nullopt;
      if (!m) bad("layer_metric must be \"dot\", \"mse\" or \"iou\"");
      base.layer_metric = *m;
    } else if (key == "aggregation") {
      if (v == "auto") {
        base.aggregation = AggregationMode::kAuto;
      } else if (v == "uniform") {
        base.aggregation = AggregationMode::kUniform;
      } else {
        bad("aggregation must be \"auto\" or \"uniform\"");
      }
    } else if (key == "refinement_steps") {
      if (!v.is_number_integer()) bad("refinement_steps must be an integer");
      base.refinement_steps = v.get<int>();
    } else if (key == "bg_threshold") {
      if (!v.is_number()) bad("bg_threshold must be a number");
      base.bg_threshold = v.get<double>();
    } else if (key == "epsilon") {
      if (!v.is_number()) bad("epsilon must be a number");
      base.epsilon = v.get<double>();
    } else if (key == "target_resolution") {
      if (v == "max") {
        base.target_resolution.reset();
      } else if (v.is_object() && v.contains("height") && v.contains("width") &&
                 v["height"].is_number_unsigned() && v["width"].is_number_unsigned()) {
        base.target_resolution =
            Extent{v["height"].get<std::size_t>(), v["width"].get<std::size_t>()};
      } else {
        bad("target_resolution must be \"max\" or {\"height\", \"width\"}");
      }
    } else if (key == "layer_pairing") {
      if (v == "ordinal") {
        base.layer_pairing.clear();
      } else if (v.is_array()) {
        base.layer_pairing.clear();
        for (const auto& e : v) {
          if (!e.is_number_unsigned()) bad("layer_pairing entries must be indices");
          base.layer_pairing.push_back(e.get<std::size_t>());
        }
      } else {
        bad("layer_pairing must be \"ordinal\" or a list of self layer indices");
      }
    } else {
      bad("unknown config key \"" + key + "\"");
    }
  }
  validate_config(base);
  return base;
}

inline EngineConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace attnseg
