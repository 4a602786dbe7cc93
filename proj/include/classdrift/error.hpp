#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace classdrift {

enum class ErrorCode {
  NegativeEntry,
  SumNotOne,
  EmptyClass,
  DimensionMismatch,
  Malformed,
  NumericalFailure,
  SubsetOverflow,
  DegenerateRanks,
  AllZero,
  PlanInfeasible,
  BackendFailure,
  Parse,
};

std::string_view to_string(ErrorCode code) noexcept;

// All recoverable failures in the library surface as this exception type; the
// code distinguishes the cases callers are expected to branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace classdrift
