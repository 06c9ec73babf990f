// Copyright 2026 The CPR Sandbox Authors
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

#include "cpr/error.h"

namespace cpr {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kOverAllocation: return "OverAllocation";
    case ErrorCode::kNegativeOffer: return "NegativeOffer";
    case ErrorCode::kContributionExceedsOffer: return "ContributionExceedsOffer";
    case ErrorCode::kNonIntegerContribution: return "NonIntegerContribution";
    case ErrorCode::kGameTerminated: return "GameTerminated";
    case ErrorCode::kWrongRoundPhase: return "WrongRoundPhase";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kSchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kNegativeValue: return "NegativeValue";
    case ErrorCode::kSingularDesign: return "SingularDesign";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kInvalidSeatCount: return "InvalidSeatCount";
    case ErrorCode::kSessionFull: return "SessionFull";
    case ErrorCode::kUnknownSession: return "UnknownSession";
    case ErrorCode::kUnknownToken: return "UnknownToken";
    case ErrorCode::kDuplicateToken: return "DuplicateToken";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kWrongPhase: return "WrongPhase";
    case ErrorCode::kExpired: return "Expired";
    case ErrorCode::kBadRating: return "BadRating";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

}  // namespace cpr
