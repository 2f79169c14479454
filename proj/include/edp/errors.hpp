#pragma once

#include <stdexcept>
#include <string>

namespace edp {

/// Violation of an API precondition or a type invariant.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other numeric breakdowns detected at runtime.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File and format failures; `kind` distinguishes the failure modes.
struct IoError : std::runtime_error {
  enum class Kind {
    OpenFailed,
    WriteFailed,
    BadMagic,
    UnsupportedVersion,
    ChecksumMismatch,
    TruncatedPayload,
    ShapeMismatch,
    CountMismatch,
    ParseError,
  };

  IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}

  Kind kind;
};

}  // namespace edp
