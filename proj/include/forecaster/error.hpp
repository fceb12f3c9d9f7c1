#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forecaster {

enum class ErrorKind {
    InsufficientData,
    Convergence,
    InvalidPrecision,
    Configuration,
    Dimension,
    StaleTape,
    NonfiniteGradient,
    NonfiniteLoss,
    Integrity,
    Parse,
    Cadence,
    Window,
    EmptyEvaluation,
    SingularDesign,
    InsufficientHistory,
    Dependency,
    Io,
};

std::string_view to_string(ErrorKind kind);

// Single error type for the library; `kind()` drives exit codes and the
// machine-readable error line printed by the CLI.
class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace forecaster
