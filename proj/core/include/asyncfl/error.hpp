#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asyncfl {

enum class ErrorCode {
  InvalidConfig,
  InvalidRouting,
  InvalidState,
  NonFiniteResult,
  StateSpaceTooLarge,
  ScheduleInfeasible,
  InsufficientData,
  SpecParse,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every module of the library. Carries a stable
/// error code so callers (the CLI in particular) can map failures to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace asyncfl
