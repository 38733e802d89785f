#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace imagedx {

enum class ErrorKind {
    MalformedLabel,
    UnknownLabel,
    MissingSplitDirectory,
    EmptyDataset,
    DecodeError,
    UnsupportedChannelCount,
    DomainError,
    ShapeMismatch,
    ConfigError,
    IndexError,
    LengthMismatch,
    EmptyMatrix,
    NonFiniteLoss,
    DiskError,
    NotFound,
    MissingCredential,
    Timeout,
    RateLimited,
    RemoteError,
    EmptyCompletion,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base of every exception thrown by the library. `kind()` lets callers
/// (the CLI, the HTTP service) map failures onto exit codes and statuses
/// without a cascade of catch clauses.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define IMAGEDX_DECLARE_ERROR(Name)                                        \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& message)                          \
            : Error(ErrorKind::Name, message) {}                           \
    }

IMAGEDX_DECLARE_ERROR(MalformedLabel);
IMAGEDX_DECLARE_ERROR(UnknownLabel);
IMAGEDX_DECLARE_ERROR(MissingSplitDirectory);
IMAGEDX_DECLARE_ERROR(EmptyDataset);
IMAGEDX_DECLARE_ERROR(DecodeError);
IMAGEDX_DECLARE_ERROR(UnsupportedChannelCount);
IMAGEDX_DECLARE_ERROR(DomainError);
IMAGEDX_DECLARE_ERROR(ShapeMismatch);
IMAGEDX_DECLARE_ERROR(ConfigError);
IMAGEDX_DECLARE_ERROR(IndexError);
IMAGEDX_DECLARE_ERROR(LengthMismatch);
IMAGEDX_DECLARE_ERROR(EmptyMatrix);
IMAGEDX_DECLARE_ERROR(NonFiniteLoss);
IMAGEDX_DECLARE_ERROR(DiskError);
IMAGEDX_DECLARE_ERROR(NotFound);
IMAGEDX_DECLARE_ERROR(MissingCredential);
IMAGEDX_DECLARE_ERROR(Timeout);
IMAGEDX_DECLARE_ERROR(RateLimited);
IMAGEDX_DECLARE_ERROR(RemoteError);
IMAGEDX_DECLARE_ERROR(EmptyCompletion);

#undef IMAGEDX_DECLARE_ERROR

}  // namespace imagedx
