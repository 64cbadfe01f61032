#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace specqa {

enum class ErrorCode {
    InvalidArgument,
    EmptyInput,
    NoContent,
    EmptyDocument,
    UnknownChunk,
    EmptyCorpus,
    DuplicateChunkId,
    DuplicateDocument,
    ProviderUnreachable,
    DimensionMismatch,
    IndexMismatch,
    RerankUnavailable,
    BudgetTooSmall,
    LlmUnreachable,
    LlmProtocolError,
    SchemaViolation,
    UnitError,
    TierOrderError,
    HaatOutOfDomain,
    NoMatchingClass,
    InvalidQuery,
    ExtractionFailed,
    SnapshotError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NoContent: return "NoContent";
        case ErrorCode::EmptyDocument: return "EmptyDocument";
        case ErrorCode::UnknownChunk: return "UnknownChunk";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::DuplicateChunkId: return "DuplicateChunkId";
        case ErrorCode::DuplicateDocument: return "DuplicateDocument";
        case ErrorCode::ProviderUnreachable: return "ProviderUnreachable";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::IndexMismatch: return "IndexMismatch";
        case ErrorCode::RerankUnavailable: return "RerankUnavailable";
        case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
        case ErrorCode::LlmUnreachable: return "LlmUnreachable";
        case ErrorCode::LlmProtocolError: return "LlmProtocolError";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::UnitError: return "UnitError";
        case ErrorCode::TierOrderError: return "TierOrderError";
        case ErrorCode::HaatOutOfDomain: return "HaatOutOfDomain";
        case ErrorCode::NoMatchingClass: return "NoMatchingClass";
        case ErrorCode::InvalidQuery: return "InvalidQuery";
        case ErrorCode::ExtractionFailed: return "ExtractionFailed";
        case ErrorCode::SnapshotError: return "SnapshotError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library. `code()` is the stable, testable part;
/// `path()` locates the offending element for schema and window-level errors.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string path = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code),
          path_(std::move(path)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& path() const noexcept { return path_; }

private:
    ErrorCode code_;
    std::string path_;
};

}  // namespace specqa
