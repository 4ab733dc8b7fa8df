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

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnseg {

enum class ErrorCode {
  kInvalidShape,
  kNonFinite,
  kMissingFile,
  kManifestSchema,
  kShapeMismatch,
  kNonStochasticRows,
  kUnknownClassId,
  kUnsupported,
  kNoContentTokens,
  kInvalidScores,
  kInvalidSpec,
  kInvalidConfig,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape: return "InvalidShape";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kManifestSchema: return "ManifestSchema";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonStochasticRows: return "NonStochasticRows";
    case ErrorCode::kUnknownClassId: return "UnknownClassId";
    case ErrorCode::kUnsupported: return "Unsupported";
    case ErrorCode::kNoContentTokens: return "NoContentTokens";
    case ErrorCode::kInvalidScores: return "InvalidScores";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library. The message names the offending
/// entry (file, layer, token, field) so it can be shown to a user verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace attnseg
