// Copyright 2026 The biasprobe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
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

namespace biasprobe {

enum class ErrorKind {
  NonFinite,
  DimensionMismatch,
  NegativeInput,
  RankOutOfRange,
  ZeroVector,
  InvalidSpec,
  PatchTooLarge,
  Io,
  Format,
  Integrity,
  EmptyClass,
  DivergedLoss,
  InvalidClass,
  NoPredictedSamples,
  IncompatibleWidth,
  CountTooLarge,
  EmptyTestSet,
  EmptySample,
  NoSamples,
  MissingBiasLabels,
  Config,
  FileNotFound,
  SchemaMismatch,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NegativeInput: return "NegativeInput";
    case ErrorKind::RankOutOfRange: return "RankOutOfRange";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::PatchTooLarge: return "PatchTooLarge";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Integrity: return "IntegrityError";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::InvalidClass: return "InvalidClass";
    case ErrorKind::NoPredictedSamples: return "NoPredictedSamples";
    case ErrorKind::IncompatibleWidth: return "IncompatibleWidth";
    case ErrorKind::CountTooLarge: return "CountTooLarge";
    case ErrorKind::EmptyTestSet: return "EmptyTestSet";
    case ErrorKind::EmptySample: return "EmptySample";
    case ErrorKind::NoSamples: return "NoSamples";
    case ErrorKind::MissingBiasLabels: return "MissingBiasLabels";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace biasprobe
