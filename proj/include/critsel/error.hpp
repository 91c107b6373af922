/*
 * Copyright 2026 The critsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace critsel {

/// Machine-readable failure classes. The CLI prints these verbatim so
/// scripts can branch on them.
enum class ErrorClass {
  InvalidRatio,
  EmptyTrajectory,
  OutOfRange,
  SelectionMismatch,
  MalformedStep,
  MalformedRecord,
  ParseError,
  DuplicateId,
  UnparseableResponse,
  SelectorUnavailable,
  TransportError,
  EmptyStep,
  InvalidLogprob,
  AlignmentError,
  NoComplement,
  ReplayError,
  InvalidN,
  UnsupportedEnvironment,
  MissingSelection,
  IoError,
  VocabularyError,
  ConfigurationError,
  UsageError,
  GenerationError,
};

constexpr std::string_view to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::InvalidRatio: return "invalid-ratio";
    case ErrorClass::EmptyTrajectory: return "empty-trajectory";
    case ErrorClass::OutOfRange: return "out-of-range";
    case ErrorClass::SelectionMismatch: return "selection-mismatch";
    case ErrorClass::MalformedStep: return "malformed-step";
    case ErrorClass::MalformedRecord: return "malformed-record";
    case ErrorClass::ParseError: return "parse-error";
    case ErrorClass::DuplicateId: return "duplicate-id";
    case ErrorClass::UnparseableResponse: return "unparseable-response";
    case ErrorClass::SelectorUnavailable: return "selector-unavailable";
    case ErrorClass::TransportError: return "transport-error";
    case ErrorClass::EmptyStep: return "empty-step";
    case ErrorClass::InvalidLogprob: return "invalid-logprob";
    case ErrorClass::AlignmentError: return "alignment-error";
    case ErrorClass::NoComplement: return "no-complement";
    case ErrorClass::ReplayError: return "replay-error";
    case ErrorClass::InvalidN: return "invalid-n";
    case ErrorClass::UnsupportedEnvironment: return "unsupported-environment";
    case ErrorClass::MissingSelection: return "missing-selection";
    case ErrorClass::IoError: return "io-error";
    case ErrorClass::VocabularyError: return "vocabulary-error";
    case ErrorClass::ConfigurationError: return "configuration-error";
    case ErrorClass::UsageError: return "usage-error";
    case ErrorClass::GenerationError: return "generation-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& message)
      : std::runtime_error(message), class_(cls) {}

  ErrorClass error_class() const noexcept { return class_; }
  std::string_view class_name() const noexcept { return to_string(class_); }

 private:
  ErrorClass class_;
};

}  // namespace critsel
