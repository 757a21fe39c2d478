#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kmhe {

enum class ErrorCode {
    EmptySequence,
    DepthExceedsLength,
    IndexOutOfRange,
    DimensionMismatch,
    ShapeMismatch,
    UnsupportedPrimitive,
    NonFiniteInput,
    NonFiniteResult,
    NonFiniteLoss,
    DivergedLoss,
    NonFiniteState,
    TrajectoryTooShort,
    InsufficientData,
    UnstableParameters,
    SingularKkt,
    SolverFailed,
    ConfigInvalid,
    MissingArtifact,
    ParseError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
   public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

   private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::DepthExceedsLength: return "DepthExceedsLength";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::UnsupportedPrimitive: return "UnsupportedPrimitive";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::NonFiniteResult: return "NonFiniteResult";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::NonFiniteState: return "NonFiniteState";
        case ErrorCode::TrajectoryTooShort: return "TrajectoryTooShort";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::UnstableParameters: return "UnstableParameters";
        case ErrorCode::SingularKkt: return "SingularKkt";
        case ErrorCode::SolverFailed: return "SolverFailed";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::MissingArtifact: return "MissingArtifact";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

}  // namespace kmhe
