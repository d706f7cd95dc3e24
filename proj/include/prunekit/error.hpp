/*
 * Copyright 2026 The prunekit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PRUNEKIT_ERROR_HPP_
#define PRUNEKIT_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace prunekit {

// Error categories surfaced by every module. The CLI prints the category
// name verbatim, so renaming an enumerator changes the external interface.
enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kParse,
  kShapeMismatch,
  kZeroExtent,
  kMissingWeights,
  kNonPositiveVariance,
  kInvalidScore,
  kEmptyCalibration,
  kUnknownLayer,
  kRatioOutOfRange,
  kPlanSpecMismatch,
  kWouldEmptyLayer,
  kEmptyDataset,
  kDivergedLoss,
  kNoPositives,
  kAllClassesEmpty,
  kFingerprintMismatch,
  kCorruptBlob,
  kUnknownVersion,
  kInvalidSpec,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace prunekit

#endif  // PRUNEKIT_ERROR_HPP_
