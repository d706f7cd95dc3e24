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

#include "prunekit/error.hpp"

namespace prunekit {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kZeroExtent: return "ZeroExtent";
    case ErrorCode::kMissingWeights: return "MissingWeights";
    case ErrorCode::kNonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::kInvalidScore: return "InvalidScore";
    case ErrorCode::kEmptyCalibration: return "EmptyCalibration";
    case ErrorCode::kUnknownLayer: return "UnknownLayer";
    case ErrorCode::kRatioOutOfRange: return "RatioOutOfRange";
    case ErrorCode::kPlanSpecMismatch: return "PlanSpecMismatch";
    case ErrorCode::kWouldEmptyLayer: return "WouldEmptyLayer";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kNoPositives: return "NoPositives";
    case ErrorCode::kAllClassesEmpty: return "AllClassesEmpty";
    case ErrorCode::kFingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::kCorruptBlob: return "CorruptBlob";
    case ErrorCode::kUnknownVersion: return "UnknownVersion";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

}  // namespace prunekit
