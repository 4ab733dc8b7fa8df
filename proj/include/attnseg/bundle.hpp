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

// On-disk activation bundle: one directory per image holding manifest.json
// plus headerless little-endian float32 tensor files. See docs/FORMAT.md.

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "attnseg/error.hpp"
#include "attnseg/tensor.hpp"
#include "json.hpp"

namespace attnseg {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr double kStochasticTolerance = 1e-3;
inline constexpr const char* kManifestName = "manifest.json";

enum class TokenCategory { kSpecial, kContent, kStop };

inline std::string_view to_string(TokenCategory c) {
  switch (c) {
    case TokenCategory::kSpecial: return "special";
    case TokenCategory::kContent: return "content";
    case TokenCategory::kStop: return "stop";
  }
  return "stop";
}

inline std::optional<TokenCategory> parse_token_category(std::string_view s) {
  if (s == "special") return TokenCategory::kSpecial;
  if (s == "content") return TokenCategory::kContent;
  if (s == "stop") return TokenCategory::kStop;
  return std::nullopt;
}

struct TokenEntry {
  std::size_t index = 0;
  std::string text;
  TokenCategory category = TokenCategory::kStop;
  std::optional<int> class_id;  // present iff category == kContent

  friend bool operator==(const TokenEntry&, const TokenEntry&) = default;
};

/// A segmentation class. Id 0 is the implicit background label and can't be
/// declared; is_background marks detected out-of-vocabulary objects whose
/// scores feed the background score.
struct ClassEntry {
  int class_id = 0;
  std::string name;
  bool is_background = false;

  friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

struct CrossLayer {
  std::string name;
  std::size_t heads = 0;
  Extent grid;
  std::size_t token_count = 0;
  std::size_t d = 0;
  Tensor attn;      // [heads x pixels x token_count], rows post-softmax
  Tensor head_out;  // [heads x pixels x d], per-head output summands

  friend bool operator==(const CrossLayer&, const CrossLayer&) = default;
};

struct SelfLayer {
  std::string name;
  Extent grid;
  Tensor map;  // [pixels x pixels], head-averaged, row-stochastic

  friend bool operator==(const SelfLayer&, const SelfLayer&) = default;
};

struct DenseFeature {
  Extent grid;
  std::size_t channels = 0;
  Tensor values;  // [pixels x channels]

  friend bool operator==(const DenseFeature&, const DenseFeature&) = default;
};

struct ActivationBundle {
  int manifest_version = kManifestVersion;
  std::string model_id;
  std::int64_t timestep = 0;
  std::vector<TokenEntry> tokens;
  std::vector<ClassEntry> classes;
  std::vector<CrossLayer> cross_layers;
  std::vector<SelfLayer> self_layers;
  DenseFeature dense_feature;
  Extent image_size;

  friend bool operator==(const ActivationBundle&, const ActivationBundle&) = default;
};

/// Per-pixel class labels at image resolution; 0 is background.
struct SegmentationMask {
  Extent size;
  std::vector<std::int32_t> labels;

  std::int32_t at(std::size_t y, std::size_t x) const {
    return labels[y * size.width + x];
  }
  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

// ---------------------------------------------------------------------------
// Raw tensor files

inline std::vector<char> read_file_bytes(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kMissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const fs::path& path, const char* data,
                             std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

inline void write_tensor_file(const fs::path& path, const Tensor& t) {
  const auto values = t.values();
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline Tensor read_tensor_file(const fs::path& path, const Shape& shape) {
  const auto bytes = read_file_bytes(path);
  const std::size_t expected = 4 * shape_product(shape);
  if (bytes.size() != expected) {
    fail(ErrorCode::kShapeMismatch,
         path.filename().string() + " holds " + std::to_string(bytes.size()) +
             " bytes, shape " + to_string(shape) + " needs " +
             std::to_string(expected));
  }
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b]))
              << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
  try {
    return Tensor(shape, std::move(values));
  } catch (const Error& e) {
    fail(e.code(), path.filename().string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void check_stochastic_rows(std::span<const float> values,
                                  std::size_t row_len, const std::string& what) {
  const std::size_t rows = values.size() / row_len;
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < row_len; ++c) {
      const float v = values[r * row_len + c];
      if (v < 0.0f) {
        fail(ErrorCode::kNonStochasticRows,
             what + " row " + std::to_string(r) + " has a negative entry");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kStochasticTolerance) {
      fail(ErrorCode::kNonStochasticRows,
           what + " row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

inline void check_grid(Extent grid, const std::string& what) {
  if (grid.height == 0 || grid.width == 0) {
    fail(ErrorCode::kManifestSchema, what + " has a zero spatial dimension");
  }
}

inline void check_tensor_shape(const Tensor& t, const Shape& expected,
                               const std::string& what) {
  if (t.shape() != expected) {
    fail(ErrorCode::kShapeMismatch, what + " has shape " + to_string(t.shape()) +
                                        ", expected " + to_string(expected));
  }
}

}  // namespace detail

/// Enforces every bundle invariant; throws naming the first offending entry.
inline void validate_bundle(const ActivationBundle& b) {
  using detail::check_grid;
  using detail::check_tensor_shape;
  if (b.manifest_version != kManifestVersion) {
    fail(ErrorCode::kManifestSchema,
         "manifest_version " + std::to_string(b.manifest_version) +
             " is not supported (expected 1)");
  }
  check_grid(b.image_size, "image_size");

  std::set<int> class_ids;
  for (std::size_t i = 0; i < b.classes.size(); ++i) {
    const auto& c = b.classes[i];
    const std::string what = "classes[" + std::to_string(i) + "]";
    if (c.class_id <= 0) {
      fail(ErrorCode::kManifestSchema,
           what + " class_id must be positive (0 is reserved for background)");
    }
    if (!class_ids.insert(c.class_id).second) {
      fail(ErrorCode::kManifestSchema,
           what + " duplicates class_id " + std::to_string(c.class_id));
    }
  }

  for (std::size_t i = 0; i < b.tokens.size(); ++i) {
    const auto& t = b.tokens[i];
    const std::string what = "tokens[" + std::to_string(i) + "]";
    if (t.index != i) {
      fail(ErrorCode::kManifestSchema,
           what + " has index " + std::to_string(t.index));
    }
    const bool content = t.category == TokenCategory::kContent;
    if (content && !t.class_id) {
      fail(ErrorCode::kManifestSchema, what + " is content but has no class_id");
    }
    if (!content && t.class_id) {
      fail(ErrorCode::kManifestSchema,
           what + " is " + std::string(to_string(t.category)) +
               " but carries a class_id");
    }
    if (t.class_id && !class_ids.count(*t.class_id)) {
      fail(ErrorCode::kUnknownClassId, what + " (\"" + t.text +
                                           "\") refers to undeclared class_id " +
                                           std::to_string(*t.class_id));
    }
  }

  if (b.cross_layers.empty()) {
    fail(ErrorCode::kManifestSchema, "bundle needs at least one cross layer");
  }
  if (b.self_layers.empty()) {
    fail(ErrorCode::kManifestSchema, "bundle needs at least one self layer");
  }

  std::set<std::string> names;
  for (std::size_t i = 0; i < b.cross_layers.size(); ++i) {
    const auto& l = b.cross_layers[i];
    const std::string what = "cross layer '" + l.name + "'";
    if (l.name.empty() || !names.insert("cross/" + l.name).second) {
      fail(ErrorCode::kManifestSchema,
           "cross_layers[" + std::to_string(i) + "] name is empty or duplicated");
    }
    check_grid(l.grid, what);
    if (l.heads == 0 || l.d == 0) {
      fail(ErrorCode::kManifestSchema, what + " needs heads >= 1 and d >= 1");
    }
    if (l.token_count != b.tokens.size()) {
      fail(ErrorCode::kShapeMismatch,
           what + " token_count " + std::to_string(l.token_count) +
               " != " + std::to_string(b.tokens.size()) + " tokens");
    }
    check_tensor_shape(l.attn, {l.heads, l.grid.pixels(), l.token_count},
                       what + " attn");
    check_tensor_shape(l.head_out, {l.heads, l.grid.pixels(), l.d},
                       what + " head_out");
    detail::check_stochastic_rows(l.attn.values(), l.token_count, what + " attn");
  }
  for (std::size_t i = 0; i < b.self_layers.size(); ++i) {
    const auto& l = b.self_layers[i];
    const std::string what = "self layer '" + l.name + "'";
    if (l.name.empty() || !names.insert("self/" + l.name).second) {
      fail(ErrorCode::kManifestSchema,
           "self_layers[" + std::to_string(i) + "] name is empty or duplicated");
    }
    check_grid(l.grid, what);
    check_tensor_shape(l.map, {l.grid.pixels(), l.grid.pixels()}, what + " map");
    detail::check_stochastic_rows(l.map.values(), l.grid.pixels(), what + " map");
  }
  const auto& f = b.dense_feature;
  check_grid(f.grid, "dense_feature");
  if (f.channels == 0) fail(ErrorCode::kManifestSchema, "dense_feature channels is 0");
  check_tensor_shape(f.values, {f.grid.pixels(), f.channels}, "dense_feature");
}

// ---------------------------------------------------------------------------
// Manifest JSON

namespace detail {

using nlohmann::json;

class ManifestReader {
 public:
  static const json& field(const json& obj, const char* key, const std::string& ctx) {
    auto it = obj.find(key);
    if (it == obj.end()) {
      fail(ErrorCode::kManifestSchema, ctx + " is missing \"" + key + "\"");
    }
    return *it;
  }

  static std::int64_t integer(const json& obj, const char* key, const std::string& ctx) {
    const json& v = field(obj, key, ctx);
    if (!v.is_number_integer()) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be an integer");
    }
    return v.get<std::int64_t>();
  }

  static std::size_t dimension(const json& obj, const char* key, const std::string& ctx) {
    const auto v = integer(obj, key, ctx);
    if (v <= 0) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be positive");
    }
    return static_cast<std::size_t>(v);
  }

  static std::string string(const json& obj, const char* key, const std::string& ctx) {
    const json& v = field(obj, key, ctx);
    if (!v.is_string()) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be a string");
    }
    return v.get<std::string>();
  }

  static const json& array(const json& obj, const char* key, const std::string& ctx) {
    const json& v = field(obj, key, ctx);
    if (!v.is_array()) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be an array");
    }
    return v;
  }

  static const json& object(const json& obj, const char* key, const std::string& ctx) {
    const json& v = field(obj, key, ctx);
    if (!v.is_object()) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be an object");
    }
    return v;
  }

  static void only_keys(const json& obj, std::initializer_list<const char*> keys,
                        const std::string& ctx) {
    if (!obj.is_object()) fail(ErrorCode::kManifestSchema, ctx + " must be an object");
    for (const auto& [k, _] : obj.items()) {
      bool known = false;
      for (const char* key : keys) known = known || k == key;
      if (!known) fail(ErrorCode::kManifestSchema, ctx + " has unknown key \"" + k + "\"");
    }
  }

  static fs::path relative_file(const json& obj, const char* key, const std::string& ctx) {
    const fs::path p = string(obj, key, ctx);
    if (p.empty() || p.is_absolute() || p.has_root_path()) {
      fail(ErrorCode::kManifestSchema, ctx + "." + key + " must be a relative path");
    }
    for (const auto& part : p) {
      if (part == "..") {
        fail(ErrorCode::kManifestSchema, ctx + "." + key + " escapes the bundle directory");
      }
    }
    return p;
  }
};

inline json extent_json(Extent e) {
  return json{{"height", e.height}, {"width", e.width}};
}

}  // namespace detail

inline fs::path cross_attn_file(std::size_t i) {
  return "cross_" + std::to_string(i) + "_attn.f32";
}
inline fs::path cross_head_out_file(std::size_t i) {
  return "cross_" + std::to_string(i) + "_head_out.f32";
}
inline fs::path self_map_file(std::size_t i) {
  return "self_" + std::to_string(i) + "_map.f32";
}
inline fs::path dense_feature_file() { return "dense_feature.f32"; }

/// Manifest for b, referencing the canonical tensor file names.
inline nlohmann::json manifest_json(const ActivationBundle& b) {
  using nlohmann::json;
  json tokens = json::array();
  for (const auto& t : b.tokens) {
    json e{{"index", t.index}, {"text", t.text}, {"category", to_string(t.category)}};
    if (t.class_id) e["class_id"] = *t.class_id;
    tokens.push_back(std::move(e));
  }
  json classes = json::array();
  for (const auto& c : b.classes) {
    classes.push_back(
        {{"class_id", c.class_id}, {"name", c.name}, {"is_background", c.is_background}});
  }
  json cross = json::array();
  for (std::size_t i = 0; i < b.cross_layers.size(); ++i) {
    const auto& l = b.cross_layers[i];
    cross.push_back({{"name", l.name},
                     {"heads", l.heads},
                     {"height", l.grid.height},
                     {"width", l.grid.width},
                     {"token_count", l.token_count},
                     {"d", l.d},
                     {"attn_file", cross_attn_file(i).string()},
                     {"head_out_file", cross_head_out_file(i).string()}});
  }
  json self = json::array();
  for (std::size_t i = 0; i < b.self_layers.size(); ++i) {
    const auto& l = b.self_layers[i];
    self.push_back({{"name", l.name},
                    {"height", l.grid.height},
                    {"width", l.grid.width},
                    {"map_file", self_map_file(i).string()}});
  }
  const auto& f = b.dense_feature;
  return json{{"manifest_version", b.manifest_version},
              {"model_id", b.model_id},
              {"timestep", b.timestep},
              {"image_size", detail::extent_json(b.image_size)},
              {"tokens", std::move(tokens)},
              {"classes", std::move(classes)},
              {"cross_layers", std::move(cross)},
              {"self_layers", std::move(self)},
              {"dense_feature",
               {{"height", f.grid.height},
                {"width", f.grid.width},
                {"channels", f.channels},
                {"file", dense_feature_file().string()}}}};
}

/// Reads and fully validates the bundle stored in `dir`.
inline ActivationBundle load_bundle(const fs::path& dir) {
  using detail::ManifestReader;
  using nlohmann::json;
  const fs::path manifest_path = dir / kManifestName;
  if (!fs::exists(manifest_path)) {
    fail(ErrorCode::kMissingFile, manifest_path.string());
  }
  const auto bytes = read_file_bytes(manifest_path);
  json m;
  try {
    m = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kManifestSchema, std::string("manifest.json: ") + e.what());
  }

  const std::string top = "manifest";
  ManifestReader::only_keys(m,
                            {"manifest_version", "model_id", "timestep", "image_size",
                             "tokens", "classes", "cross_layers", "self_layers",
                             "dense_feature"},
                            top);
  ActivationBundle b;
  const auto version = ManifestReader::integer(m, "manifest_version", top);
  if (version != kManifestVersion) {
    fail(ErrorCode::kManifestSchema, "manifest_version " + std::to_string(version) +
                                         " is not supported (expected 1)");
  }
  b.manifest_version = static_cast<int>(version);
  b.model_id = ManifestReader::string(m, "model_id", top);
  b.timestep = ManifestReader::integer(m, "timestep", top);
  {
    const json& img = ManifestReader::object(m, "image_size", top);
    ManifestReader::only_keys(img, {"height", "width"}, "image_size");
    b.image_size = {ManifestReader::dimension(img, "height", "image_size"),
                    ManifestReader::dimension(img, "width", "image_size")};
  }

  const json& tokens = ManifestReader::array(m, "tokens", top);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string ctx = "tokens[" + std::to_string(i) + "]";
    const json& t = tokens[i];
    ManifestReader::only_keys(t, {"index", "text", "category", "class_id"}, ctx);
    TokenEntry e;
    const auto index = ManifestReader::integer(t, "index", ctx);
    if (index < 0) fail(ErrorCode::kManifestSchema, ctx + ".index is negative");
    e.index = static_cast<std::size_t>(index);
    e.text = ManifestReader::string(t, "text", ctx);
    const auto category = parse_token_category(ManifestReader::string(t, "category", ctx));
    if (!category) {
      fail(ErrorCode::kManifestSchema,
           ctx + ".category must be one of special, content, stop");
    }
    e.category = *category;
    if (t.contains("class_id")) {
      e.class_id = static_cast<int>(ManifestReader::integer(t, "class_id", ctx));
    }
    b.tokens.push_back(std::move(e));
  }

  const json& classes = ManifestReader::array(m, "classes", top);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string ctx = "classes[" + std::to_string(i) + "]";
    const json& c = classes[i];
    ManifestReader::only_keys(c, {"class_id", "name", "is_background"}, ctx);
    ClassEntry e;
    e.class_id = static_cast<int>(ManifestReader::integer(c, "class_id", ctx));
    e.name = ManifestReader::string(c, "name", ctx);
    const json& bg = ManifestReader::field(c, "is_background", ctx);
    if (!bg.is_boolean()) {
      fail(ErrorCode::kManifestSchema, ctx + ".is_background must be a boolean");
    }
    e.is_background = bg.get<bool>();
    b.classes.push_back(std::move(e));
  }

  const json& cross = ManifestReader::array(m, "cross_layers", top);
  for (std::size_t i = 0; i < cross.size(); ++i) {
    const std::string ctx = "cross_layers[" + std::to_string(i) + "]";
    const json& c = cross[i];
    ManifestReader::only_keys(c,
                              {"name", "heads", "height", "width", "token_count", "d",
                               "attn_file", "head_out_file"},
                              ctx);
    CrossLayer l;
    l.name = ManifestReader::string(c, "name", ctx);
    l.heads = ManifestReader::dimension(c, "heads", ctx);
    l.grid = {ManifestReader::dimension(c, "height", ctx),
              ManifestReader::dimension(c, "width", ctx)};
    l.token_count = ManifestReader::dimension(c, "token_count", ctx);
    l.d = ManifestReader::dimension(c, "d", ctx);
    if (l.token_count != b.tokens.size()) {
      fail(ErrorCode::kShapeMismatch,
           ctx + " ('" + l.name + "') token_count " + std::to_string(l.token_count) +
               " != " + std::to_string(b.tokens.size()) + " tokens");
    }
    l.attn = read_tensor_file(dir / ManifestReader::relative_file(c, "attn_file", ctx),
                              {l.heads, l.grid.pixels(), l.token_count});
    l.head_out =
        read_tensor_file(dir / ManifestReader::relative_file(c, "head_out_file", ctx),
                         {l.heads, l.grid.pixels(), l.d});
    b.cross_layers.push_back(std::move(l));
  }

  const json& self = ManifestReader::array(m, "self_layers", top);
  for (std::size_t i = 0; i < self.size(); ++i) {
    const std::string ctx = "self_layers[" + std::to_string(i) + "]";
    const json& s = self[i];
    if (s.is_object() && s.contains("per_head_map_file")) {
      fail(ErrorCode::kManifestSchema,
           ctx + ".per_head_map_file is reserved and not supported in version 1");
    }
    ManifestReader::only_keys(s, {"name", "height", "width", "map_file"}, ctx);
    SelfLayer l;
    l.name = ManifestReader::string(s, "name", ctx);
    l.grid = {ManifestReader::dimension(s, "height", ctx),
              ManifestReader::dimension(s, "width", ctx)};
    l.map = read_tensor_file(dir / ManifestReader::relative_file(s, "map_file", ctx),
                             {l.grid.pixels(), l.grid.pixels()});
    b.self_layers.push_back(std::move(l));
  }

  {
    const json& f = ManifestReader::object(m, "dense_feature", top);
    ManifestReader::only_keys(f, {"height", "width", "channels", "file"}, "dense_feature");
    b.dense_feature.grid = {ManifestReader::dimension(f, "height", "dense_feature"),
                            ManifestReader::dimension(f, "width", "dense_feature")};
    b.dense_feature.channels = ManifestReader::dimension(f, "channels", "dense_feature");
    b.dense_feature.values = read_tensor_file(
        dir / ManifestReader::relative_file(f, "file", "dense_feature"),
        {b.dense_feature.grid.pixels(), b.dense_feature.channels});
  }

  validate_bundle(b);
  return b;
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    fail(ErrorCode::kIo, "cannot create directory " + dir.string() +
                             (ec ? ": " + ec.message() : ""));
  }
}

/// Validates b and writes it to `dir` (created if needed) using canonical
/// file names, so two writes of the same bundle are byte-identical.
inline void write_bundle(const ActivationBundle& b, const fs::path& dir) {
  validate_bundle(b);
  ensure_directory(dir);
  for (std::size_t i = 0; i < b.cross_layers.size(); ++i) {
    write_tensor_file(dir / cross_attn_file(i), b.cross_layers[i].attn);
    write_tensor_file(dir / cross_head_out_file(i), b.cross_layers[i].head_out);
  }
  for (std::size_t i = 0; i < b.self_layers.size(); ++i) {
    write_tensor_file(dir / self_map_file(i), b.self_layers[i].map);
  }
  write_tensor_file(dir / dense_feature_file(), b.dense_feature.values);
  const std::string text = manifest_json(b).dump(2) + "\n";
  write_file_bytes(dir / kManifestName, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// Masks: 8-bit binary PGM plus a JSON sidecar naming the classes used.

inline fs::path mask_sidecar_path(const fs::path& mask_path) {
  fs::path p = mask_path;
  return p.replace_extension(".json");
}

inline void write_mask(const SegmentationMask& mask, const fs::path& path,
                       const std::vector<ClassEntry>& classes) {
  if (mask.labels.size() != mask.size.pixels() || mask.size.pixels() == 0) {
    fail(ErrorCode::kInvalidShape, "mask label count does not match its size");
  }
  std::set<int> used;
  for (auto label : mask.labels) {
    if (label < 0 || label > 255) {
      fail(ErrorCode::kUnsupported,
           "class index " + std::to_string(label) + " does not fit an 8-bit PGM");
    }
    used.insert(label);
  }
  std::string bytes = "P5\n" + std::to_string(mask.size.width) + " " +
                      std::to_string(mask.size.height) + "\n255\n";
  const std::size_t header = bytes.size();
  bytes.resize(header + mask.labels.size());
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    bytes[header + i] = static_cast<char>(static_cast<unsigned char>(mask.labels[i]));
  }
  if (path.has_parent_path()) ensure_directory(path.parent_path());
  write_file_bytes(path, bytes.data(), bytes.size());

  nlohmann::json names = nlohmann::json::object();
  for (int id : used) {
    std::string name = id == 0 ? "background" : "class_" + std::to_string(id);
    for (const auto& c : classes) {
      if (c.class_id == id) name = c.name;
    }
    names[std::to_string(id)] = name;
  }
  const std::string sidecar =
      nlohmann::json{{"width", mask.size.width},
                     {"height", mask.size.height},
                     {"classes", std::move(names)}}
          .dump(2) +
      "\n";
  write_file_bytes(mask_sidecar_path(path), sidecar.data(), sidecar.size());
}

inline SegmentationMask read_mask(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) fail(ErrorCode::kUnsupported, path.string() + ": malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    fail(ErrorCode::kUnsupported, path.string() + " is not a binary PGM (P5)");
  }
  pos = 2;
  const std::size_t width = read_number();
  const std::size_t height = read_number();
  const std::size_t maxval = read_number();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
    fail(ErrorCode::kUnsupported, path.string() + ": only 8-bit PGM masks are supported");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail(ErrorCode::kUnsupported, path.string() + ": malformed PGM header");
  }
  ++pos;
  if (bytes.size() - pos != width * height) {
    fail(ErrorCode::kShapeMismatch, path.string() + ": expected " +
                                        std::to_string(width * height) +
                                        " pixel bytes, found " +
                                        std::to_string(bytes.size() - pos));
  }
  SegmentationMask mask{{height, width}, std::vector<std::int32_t>(width * height)};
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    mask.labels[i] = static_cast<unsigned char>(bytes[pos + i]);
  }
  return mask;
}

}  // namespace attnseg
