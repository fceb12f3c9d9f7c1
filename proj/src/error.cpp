#include "forecaster/error.hpp"

namespace forecaster {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InsufficientData: return "insufficient_data";
        case ErrorKind::Convergence: return "convergence";
        case ErrorKind::InvalidPrecision: return "invalid_precision";
        case ErrorKind::Configuration: return "configuration";
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::StaleTape: return "stale_tape";
        case ErrorKind::NonfiniteGradient: return "nonfinite_gradient";
        case ErrorKind::NonfiniteLoss: return "nonfinite_loss";
        case ErrorKind::Integrity: return "integrity";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Cadence: return "cadence";
        case ErrorKind::Window: return "window";
        case ErrorKind::EmptyEvaluation: return "empty_evaluation";
        case ErrorKind::SingularDesign: return "singular_design";
        case ErrorKind::InsufficientHistory: return "insufficient_history";
        case ErrorKind::Dependency: return "dependency";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace forecaster
