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

// attnseg: segmentation, evaluation, fixtures and the overhead benchmark.
// Exit codes: 0 ok, 1 validation error, 2 I/O error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnseg/attnseg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace attnseg;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

Extent parse_extent(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    const auto h = std::stoul(text.substr(0, x));
    const auto w = std::stoul(text.substr(x + 1));
    if (h == 0 || w == 0) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidConfig, "expected HxW, got '" + text + "'");
  }
}

struct SegmentArgs {
  std::string bundle, config, out, dump_stages;
  std::optional<std::string> head_metric, layer_metric, aggregation;
  std::optional<int> steps;
  std::optional<double> bg_threshold;
};

int cmd_segment(const SegmentArgs& a) {
  EngineConfig cfg = a.config.empty() ? EngineConfig{} : load_config(a.config);
  nlohmann::json overrides = nlohmann::json::object();
  if (a.head_metric) overrides["head_metric"] = *a.head_metric;
  if (a.layer_metric) overrides["layer_metric"] = *a.layer_metric;
  if (a.aggregation) overrides["aggregation"] = *a.aggregation;
  if (a.steps) overrides["refinement_steps"] = *a.steps;
  if (a.bg_threshold) overrides["bg_threshold"] = *a.bg_threshold;
  cfg = config_from_json(overrides, cfg);

  const ActivationBundle bundle = load_bundle(a.bundle);
  const SegmentationTrace trace = segment_with_trace(bundle, cfg);
  write_mask(trace.mask, a.out, bundle.classes);
  if (!a.dump_stages.empty()) dump_stages(trace, a.dump_stages);
  return kExitOk;
}

std::vector<int> read_class_list(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kManifestSchema, path.string() + ": " + e.what());
  }
  std::vector<int> ids;
  const nlohmann::json& list = j.is_object() && j.contains("classes") ? j["classes"] : j;
  if (list.is_object()) {
    // Mask sidecar: {"<id>": "<name>", ...}
    for (const auto& [key, _] : list.items()) ids.push_back(std::stoi(key));
  } else if (list.is_array()) {
    for (const auto& e : list) {
      if (e.is_number_integer()) {
        ids.push_back(e.get<int>());
      } else if (e.is_object() && e.contains("class_id") && e["class_id"].is_number_integer()) {
        ids.push_back(e["class_id"].get<int>());
      } else {
        fail(ErrorCode::kManifestSchema, path.string() + ": unrecognized class entry");
      }
    }
  } else {
    fail(ErrorCode::kManifestSchema, path.string() + ": expected a class list");
  }
  return ids;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& classes_file) {
  const auto class_ids = read_class_list(classes_file);
  if (!fs::is_directory(gt_dir)) fail(ErrorCode::kMissingFile, gt_dir);
  if (!fs::is_directory(pred_dir)) fail(ErrorCode::kMissingFile, pred_dir);
  std::vector<fs::path> names;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
      names.push_back(entry.path().filename());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) fail(ErrorCode::kMissingFile, "no .pgm masks in " + gt_dir);
  std::vector<MaskPair> pairs;
  for (const auto& name : names) {
    MaskPair p{read_mask(fs::path(pred_dir) / name), read_mask(fs::path(gt_dir) / name)};
    require_same_size(p.pred, p.gt);
    pairs.push_back(std::move(p));
  }
  std::cout << report_to_json(compute_miou(pairs, class_ids)).dump(2) << "\n";
  return kExitOk;
}

int cmd_fixture(FixtureSpec spec, const std::string& out, const std::string& grid) {
  if (!grid.empty()) spec.grid = parse_extent(grid);
  const Fixture fx = generate_fixture(spec);
  write_bundle(fx.bundle, out);
  write_mask(fx.ground_truth, fs::path(out) / "ground_truth.pgm", fx.bundle.classes);
  return kExitOk;
}

int cmd_bench(BenchSpec spec, const std::string& grid) {
  if (!grid.empty()) spec.grid = parse_extent(grid);
  std::cout << bench_to_json(run_bench(spec)).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free segmentation from diffusion attention activations"};
  app.require_subcommand(1);

  SegmentArgs seg;
  auto* segment = app.add_subcommand("segment", "Segment one activation bundle");
  segment->add_option("--bundle", seg.bundle, "Bundle directory")->required();
  segment->add_option("--config", seg.config, "Engine config JSON");
  segment->add_option("--out", seg.out, "Output mask (.pgm)")->required();
  segment->add_option("--dump-stages", seg.dump_stages, "Directory for stage tensors");
  segment->add_option("--head-metric", seg.head_metric, "dot | l2 | cosine");
  segment->add_option("--layer-metric", seg.layer_metric, "dot | mse | iou");
  segment->add_option("--aggregation", seg.aggregation, "auto | uniform");
  segment->add_option("--steps", seg.steps, "Self-attention refinement steps");
  segment->add_option("--bg-threshold", seg.bg_threshold, "Background threshold in [0,1]");

  std::string pred_dir, gt_dir, classes_file;
  auto* eval = app.add_subcommand("eval", "mIoU of predicted masks against ground truth");
  eval->add_option("--pred", pred_dir, "Directory of predicted .pgm masks")->required();
  eval->add_option("--gt", gt_dir, "Directory of ground-truth .pgm masks")->required();
  eval->add_option("--classes", classes_file, "JSON class list")->required();

  FixtureSpec fspec;
  std::string fixture_out, fixture_grid;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic bundle with planted truth");
  fixture->add_option("--seed", fspec.seed, "PRNG seed")->required();
  fixture->add_option("--out", fixture_out, "Output bundle directory")->required();
  fixture->add_option("--grid", fixture_grid, "Latent grid HxW (default 8x8)");
  fixture->add_option("--layers", fspec.layers, "Cross/self layer pairs");
  fixture->add_option("--heads", fspec.heads, "Heads per cross layer");
  fixture->add_option("--tokens", fspec.tokens, "Prompt length");
  fixture->add_option("--classes", fspec.classes, "Class count (0 = automatic)");
  fixture->add_option("--noise", fspec.noise_amplitude, "Logit noise amplitude");

  BenchSpec bspec;
  std::string bench_grid;
  auto* bench = app.add_subcommand("bench", "Time uniform vs automatic aggregation");
  bench->add_option("--grid", bench_grid, "Finest latent grid HxW (default 64x64)");
  bench->add_option("--layers", bspec.layers, "Cross/self layer pairs");
  bench->add_option("--heads", bspec.heads, "Heads per layer");
  bench->add_option("--repeat", bspec.repeat, "Timed repetitions");
  bench->add_option("--tokens", bspec.tokens, "Prompt length");
  bench->add_option("--dense-channels", bspec.dense_channels, "Dense feature width");
  bench->add_flag("--end-to-end", bspec.end_to_end, "Also time one full segment() per mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*segment) return cmd_segment(seg);
    if (*eval) return cmd_eval(pred_dir, gt_dir, classes_file);
    if (*fixture) return cmd_fixture(fspec, fixture_out, fixture_grid);
    if (*bench) return cmd_bench(bspec, bench_grid);
  } catch (const Error& e) {
    std::cerr << "attnseg: " << e.what() << "\n";
    return e.code() == ErrorCode::kIo ? kExitIo : kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "attnseg: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}
