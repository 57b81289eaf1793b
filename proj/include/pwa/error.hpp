#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pwa {

enum class ErrorKind {
  Io,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  TrailingData,
  InvalidShape,
  NonFinite,
  NegativeActivation,
  DimMismatch,
  NotNormalized,
  DuplicateId,
  Parse,
  InvalidGroundTruth,
  MissingQuery,
  InvalidArgument,
  Degenerate,
};

// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { Io, Usage, DataFormat, Numeric };

constexpr ErrorCategory category_of(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io:
      return ErrorCategory::Io;
    case ErrorKind::InvalidArgument:
      return ErrorCategory::Usage;
    case ErrorKind::Degenerate:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::DataFormat;
  }
}

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::UnsupportedVersion: return "unsupported-version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::TrailingData: return "trailing-data";
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::NegativeActivation: return "negative-activation";
    case ErrorKind::DimMismatch: return "dim-mismatch";
    case ErrorKind::NotNormalized: return "not-normalized";
    case ErrorKind::DuplicateId: return "duplicate-id";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::InvalidGroundTruth: return "invalid-ground-truth";
    case ErrorKind::MissingQuery: return "missing-query";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Degenerate: return "degenerate";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace pwa
