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
#include <string>

#include "attnseg/bundle.hpp"
#include "attnseg/correlation.hpp"
#include "json.hpp"

namespace attnseg {

inline std::filesystem::path stage_file(std::size_t index, Stage stage) {
  return "stage_" + std::to_string(index) + "_" + std::string(to_string(stage)) + ".f32";
}

/// Writes every stage of `trace` as a raw tensor file plus stages.json, which
/// records each file's shape, grid and column ids.
inline void dump_stages(const SegmentationTrace& trace, const std::filesystem::path& dir) {
  ensure_directory(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < trace.stages.size(); ++i) {
    const auto& s = trace.stages[i];
    const auto file = stage_file(i, s.stage);
    write_tensor_file(dir / file, s.scores);
    index.push_back({{"stage", to_string(s.stage)},
                     {"file", file.string()},
                     {"shape", s.scores.shape()},
                     {"height", s.resolution.height},
                     {"width", s.resolution.width},
                     {"column_kind", s.stage == Stage::kRaw ? "token_index" : "class_id"},
                     {"columns", s.columns}});
  }
  const std::string text = nlohmann::json{{"stages", index}}.dump(2) + "\n";
  write_file_bytes(dir / "stages.json", text.data(), text.size());
}

}  // namespace attnseg
