// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crashaccum {

enum class ErrorCode {
  kEmptyTrace,
  kParseError,
  kFingerprintMismatch,
  kAllFramesFiltered,
  kInvalidThreshold,
  kInvalidConfig,
  kNoCandidates,
  kInvalidStore,
  kOldClusterCollision,
  kEmptyBatch,
  kAlreadyExists,
  kNotAStore,
  kVersionMismatch,
  kStaleResult,
  kStoreLocked,
  kIoError,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kFingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::kAllFramesFiltered: return "AllFramesFiltered";
    case ErrorCode::kInvalidThreshold: return "InvalidThreshold";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kNoCandidates: return "NoCandidates";
    case ErrorCode::kInvalidStore: return "InvalidStore";
    case ErrorCode::kOldClusterCollision: return "OldClusterCollision";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kAlreadyExists: return "AlreadyExists";
    case ErrorCode::kNotAStore: return "NotAStore";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kStaleResult: return "StaleResult";
    case ErrorCode::kStoreLocked: return "StoreLocked";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

// All library failures are reported through this exception type; `code()`
// identifies the failure class so callers (the CLI in particular) can map it
// to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace crashaccum
