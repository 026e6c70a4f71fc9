#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mumlp {

enum class ErrorKind {
    ShapeMismatch,
    InvalidProbability,
    LabelOutOfRange,
    NonScalarLoss,
    ConfigError,
    HeaderMismatch,
    TruncatedFile,
    NonFiniteValue,
    NonDivisibleDimensions,
    EmptyClass,
    NonFiniteLoss,
    FormatVersionMismatch,
    CorruptManifest,
    EmptyMatrix,
    TooFewRuns,
    DataNotFound,
    ConfigMismatch,
    PaletteSizeMismatch,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::InvalidProbability: return "InvalidProbability";
        case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorKind::NonScalarLoss: return "NonScalarLoss";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::HeaderMismatch: return "HeaderMismatch";
        case ErrorKind::TruncatedFile: return "TruncatedFile";
        case ErrorKind::NonFiniteValue: return "NonFiniteValue";
        case ErrorKind::NonDivisibleDimensions: return "NonDivisibleDimensions";
        case ErrorKind::EmptyClass: return "EmptyClass";
        case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorKind::CorruptManifest: return "CorruptManifest";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::TooFewRuns: return "TooFewRuns";
        case ErrorKind::DataNotFound: return "DataNotFound";
        case ErrorKind::ConfigMismatch: return "ConfigMismatch";
        case ErrorKind::PaletteSizeMismatch: return "PaletteSizeMismatch";
    }
    return "Unknown";
}

/// Single exception type for the library; `kind()` carries the category.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mumlp
