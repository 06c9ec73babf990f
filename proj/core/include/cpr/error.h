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

#ifndef CPR_ERROR_H_
#define CPR_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace cpr {

enum class ErrorCode {
  kInvalidConfig,
  kOverAllocation,
  kNegativeOffer,
  kContributionExceedsOffer,
  kNonIntegerContribution,
  kGameTerminated,
  kWrongRoundPhase,
  kShapeMismatch,
  kNonFiniteGradient,
  kNonFiniteLoss,
  kSchemaVersionMismatch,
  kMalformedRecord,
  kNegativeValue,
  kSingularDesign,
  kDegenerateInput,
  kEmptyInput,
  kMissingArtifact,
  kIo,
  kInvalidSeatCount,
  kSessionFull,
  kUnknownSession,
  kUnknownToken,
  kDuplicateToken,
  kOutOfRange,
  kWrongPhase,
  kExpired,
  kBadRating,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (tests, the CLI, the session endpoints) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cpr

#endif  // CPR_ERROR_H_
