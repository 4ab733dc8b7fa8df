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

#include <string_view>
#include <vector>

#include "attnseg/tensor.hpp"

namespace attnseg {

enum class Stage { kRaw, kMerged, kRescaled, kRenormalized, kRefined };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kRaw: return "raw";
    case Stage::kMerged: return "merged";
    case Stage::kRescaled: return "rescaled";
    case Stage::kRenormalized: return "renormalized";
    case Stage::kRefined: return "refined";
  }
  return "raw";
}

/// Pixel x column score matrix over the working grid. At the raw stage there
/// is one column per prompt token and `columns` holds token indices; from the
/// merged stage on there is one column per class and `columns` holds class
/// ids in ascending order.
struct GlobalAttentionMap {
  Tensor scores;
  Stage stage = Stage::kRaw;
  Extent resolution;
  std::vector<int> columns;
};

}  // namespace attnseg
