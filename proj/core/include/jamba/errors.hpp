#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jamba {

enum class ErrorKind {
  kShapeMismatch,
  kNonFinite,
  kDimensionMismatch,
  kDivisibilityViolation,
  kRangeViolation,
  kUnknownPreset,
  kCacheMismatch,
  kIoFailure,
  kFormatViolation,
  kBudgetTooSmall,
  kImpossibleSpec,
  kDivergence,
  kNumericOverflow,
  kVocabOverflow,
  kInvalidArgument,
  kInternal,
};

std::string_view to_string(ErrorKind kind);

// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationIssue {
  ErrorKind kind;
  std::string message;
};

// Raised by config validation; carries every violated invariant.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<ValidationIssue> issues);
  const std::vector<ValidationIssue>& issues() const noexcept { return issues_; }
  bool has(ErrorKind kind) const noexcept;

 private:
  std::vector<ValidationIssue> issues_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace jamba
