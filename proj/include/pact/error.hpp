// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace pact {

enum class Errc {
  DuplicateParam,
  InvalidView,
  InvalidRatio,
  InvalidRate,
  NumericalFailure,
  ShapeMismatch,
  MaskMismatch,
  CorruptPayload,
  LinkError,
  UndefinedMetric,
  MissingFile,
  ParseError,
  UnknownKey,
  BadTopology,
  RunFailure,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::DuplicateParam: return "DuplicateParam";
    case Errc::InvalidView: return "InvalidView";
    case Errc::InvalidRatio: return "InvalidRatio";
    case Errc::InvalidRate: return "InvalidRate";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MaskMismatch: return "MaskMismatch";
    case Errc::CorruptPayload: return "CorruptPayload";
    case Errc::LinkError: return "LinkError";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::MissingFile: return "MissingFile";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::BadTopology: return "BadTopology";
    case Errc::RunFailure: return "RunFailure";
  }
  return "Error";
}

/// Single exception type for the whole library; carries a machine-checkable
/// code so tests can assert on the exact error contract.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace pact
