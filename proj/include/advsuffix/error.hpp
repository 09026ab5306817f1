// Copyright 2026 The advsuffix Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
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

namespace advsuffix {

enum class ErrorCode {
  kInvalidArgument,
  kUnencodableText,
  kUnknownToken,
  kEmptyText,
  kEmptyInput,
  kEmptySequence,
  kDegenerateProbability,
  kNotTrainable,
  kAllMasked,
  kAllMassBanned,
  kEmptySupport,
  kSearchDegenerate,
  kZeroVector,
  kDimensionMismatch,
  kUnknownConcept,
  kCountExceedsSet,
  kEmptyBuffer,
  kLabelMismatch,
  kMergeRefused,
  kVocabMismatch,
  kIoFailure,
  kParseFailure,
  kBackendFailure,
  kPromptRejected,
  kTimeout,
  kMalformedResponse,
  kDistributionInvalid,
  kInvalidConfig,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnencodableText: return "UnencodableText";
    case ErrorCode::kUnknownToken: return "UnknownToken";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kDegenerateProbability: return "DegenerateProbability";
    case ErrorCode::kNotTrainable: return "NotTrainable";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kAllMassBanned: return "AllMassBanned";
    case ErrorCode::kEmptySupport: return "EmptySupport";
    case ErrorCode::kSearchDegenerate: return "SearchDegenerate";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kUnknownConcept: return "UnknownConcept";
    case ErrorCode::kCountExceedsSet: return "CountExceedsSet";
    case ErrorCode::kEmptyBuffer: return "EmptyBuffer";
    case ErrorCode::kLabelMismatch: return "LabelMismatch";
    case ErrorCode::kMergeRefused: return "MergeRefused";
    case ErrorCode::kVocabMismatch: return "VocabMismatch";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kParseFailure: return "ParseFailure";
    case ErrorCode::kBackendFailure: return "BackendFailure";
    case ErrorCode::kPromptRejected: return "PromptRejected";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kDistributionInvalid: return "DistributionInvalid";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Errors raised by a remote or simulated backend rather than by bad input.
  bool is_backend() const noexcept {
    return code_ == ErrorCode::kBackendFailure ||
           code_ == ErrorCode::kPromptRejected ||
           code_ == ErrorCode::kTimeout ||
           code_ == ErrorCode::kMalformedResponse ||
           code_ == ErrorCode::kDistributionInvalid;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace advsuffix
