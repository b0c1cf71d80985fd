#include "jamba/errors.hpp"

#include <algorithm>

namespace jamba {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kDivisibilityViolation: return "divisibility-violation";
    case ErrorKind::kRangeViolation: return "range-violation";
    case ErrorKind::kUnknownPreset: return "unknown-preset";
    case ErrorKind::kCacheMismatch: return "cache-mismatch";
    case ErrorKind::kIoFailure: return "io-failure";
    case ErrorKind::kFormatViolation: return "format-violation";
    case ErrorKind::kBudgetTooSmall: return "budget-too-small";
    case ErrorKind::kImpossibleSpec: return "impossible-spec";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kNumericOverflow: return "numeric-overflow";
    case ErrorKind::kVocabOverflow: return "vocab-overflow";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

namespace {

std::string join_issues(const std::vector<ValidationIssue>& issues) {
  std::string out = "invalid configuration";
  for (const auto& issue : issues) {
    out += "\n  - ";
    out += to_string(issue.kind);
    out += ": ";
    out += issue.message;
  }
  return out;
}

ErrorKind first_kind(const std::vector<ValidationIssue>& issues) {
  return issues.empty() ? ErrorKind::kInternal : issues.front().kind;
}

}  // namespace

ValidationError::ValidationError(std::vector<ValidationIssue> issues)
    : Error(first_kind(issues), join_issues(issues)), issues_(std::move(issues)) {}

bool ValidationError::has(ErrorKind kind) const noexcept {
  return std::any_of(issues_.begin(), issues_.end(),
                     [kind](const ValidationIssue& i) { return i.kind == kind; });
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace jamba
