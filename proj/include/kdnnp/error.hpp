#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kdnnp {

enum class ErrorKind {
    CutoffTooLarge,
    EmptySplit,
    EmptyDataset,
    OverlappingAtoms,
    UnknownSpecies,
    NonFiniteLoss,
    NonFiniteState,
    TooFewSamples,
    DegenerateFit,
    DegenerateVariance,
    KTooLarge,
    InvalidArgument,
    ParseError,
    UnknownKey,
    MissingRequired,
    UnitRangeError,
    Io,
    Format,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::CutoffTooLarge: return "CutoffTooLarge";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::OverlappingAtoms: return "OverlappingAtoms";
    case ErrorKind::UnknownSpecies: return "UnknownSpecies";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::DegenerateFit: return "DegenerateFit";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnknownKey: return "UnknownKey";
    case ErrorKind::MissingRequired: return "MissingRequired";
    case ErrorKind::UnitRangeError: return "UnitRangeError";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
    }
    return "Unknown";
}

/// Library-wide exception. `index` carries the step, frame, or line number
/// the error refers to when there is one.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index = std::nullopt)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind),
          message_(message),
          index_(index) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::int64_t> index() const noexcept { return index_; }
    /// The message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
    std::optional<std::int64_t> index_;
};

} // namespace kdnnp
