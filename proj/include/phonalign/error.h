// include/phonalign/error.h

// Copyright 2026  The phonalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PHONALIGN_ERROR_H_
#define PHONALIGN_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phonalign {

enum class ErrorCode {
  kIo,
  kParse,
  kDuplicateSymbol,
  kCollapseTargetMissing,
  kUnmappedSymbol,
  kUnknownSymbol,
  kInventoryMismatch,
  kInvalidInput,
  kDimensionMismatch,
  kInfeasible,
  kEmptyDecode,
  kInvalidNegatives,
  kEmptyInput,
  kEmptyTiers,
  kInvalidTier,
  kCorruptFile,
  kUnsupported,
  kTrainingDiverged,
};

const char *ErrorCodeName(ErrorCode code);

/// All engine failures are reported as phonalign::Error (or a subclass
/// carrying extra context). The code is stable and is what callers and the
/// CLI dispatch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string &message)
      : Error(ErrorCode::kParse,
              "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(long step)
      : Error(ErrorCode::kTrainingDiverged,
              "non-finite loss at step " + std::to_string(step)),
        step_(step) {}

  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace phonalign

#endif  // PHONALIGN_ERROR_H_
