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

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnseg/bundle.hpp"
#include "attnseg/error.hpp"
#include "json.hpp"

namespace attnseg {

struct MaskPair {
  SegmentationMask pred;
  SegmentationMask gt;
};

struct EvalReport {
  std::map<int, double> per_class_iou;
  double miou = 0.0;
  std::map<std::pair<int, int>, std::uint64_t> confusion;  // (gt, pred) -> pixels
  std::size_t images_evaluated = 0;
};

inline void require_same_size(const SegmentationMask& pred, const SegmentationMask& gt) {
  if (pred.size != gt.size || pred.labels.size() != gt.labels.size()) {
    fail(ErrorCode::kShapeMismatch, "prediction is " + to_string(pred.size) +
                                        " but ground truth is " + to_string(gt.size));
  }
}

/// |pred ∩ gt| / |pred ∪ gt| for one class; nullopt when the class appears in
/// neither mask.
inline std::optional<double> compute_iou(const SegmentationMask& pred,
                                         const SegmentationMask& gt, int class_id) {
  require_same_size(pred, gt);
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == class_id;
    const bool g = gt.labels[i] == class_id;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Dataset-level IoU: intersections and unions are summed over all images
/// before dividing. mIoU averages the listed classes that occur in at least
/// one prediction or ground truth.
inline EvalReport compute_miou(std::span<const MaskPair> pairs,
                               std::span<const int> class_ids) {
  if (pairs.empty()) fail(ErrorCode::kInvalidShape, "evaluation needs at least one image");
  EvalReport report;
  for (const auto& [pred, gt] : pairs) {
    require_same_size(pred, gt);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      ++report.confusion[{gt.labels[i], pred.labels[i]}];
    }
    ++report.images_evaluated;
  }
  const std::set<int> wanted(class_ids.begin(), class_ids.end());
  std::map<int, std::uint64_t> inter, gt_count, pred_count;
  for (const auto& [key, count] : report.confusion) {
    const auto [g, p] = key;
    gt_count[g] += count;
    pred_count[p] += count;
    if (g == p) inter[g] += count;
  }
  double total = 0.0;
  for (int c : wanted) {
    const std::uint64_t uni = gt_count[c] + pred_count[c] - inter[c];
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter[c]) / static_cast<double>(uni);
    report.per_class_iou[c] = iou;
    total += iou;
  }
  report.miou = report.per_class_iou.empty()
                    ? 0.0
                    : total / static_cast<double>(report.per_class_iou.size());
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json per_class = json::object();
  for (const auto& [c, iou] : r.per_class_iou) per_class[std::to_string(c)] = iou;
  json confusion = json::array();
  for (const auto& [key, count] : r.confusion) {
    confusion.push_back({{"gt", key.first}, {"pred", key.second}, {"count", count}});
  }
  return json{{"per_class_iou", std::move(per_class)},
              {"miou", r.miou},
              {"confusion", std::move(confusion)},
              {"images_evaluated", r.images_evaluated}};
}

}  // namespace attnseg
