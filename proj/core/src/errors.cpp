#include "imagedx/errors.hpp"

namespace imagedx {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MalformedLabel: return "MalformedLabel";
        case ErrorKind::UnknownLabel: return "UnknownLabel";
        case ErrorKind::MissingSplitDirectory: return "MissingSplitDirectory";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::DecodeError: return "DecodeError";
        case ErrorKind::UnsupportedChannelCount: return "UnsupportedChannelCount";
        case ErrorKind::DomainError: return "DomainError";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IndexError: return "IndexError";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorKind::DiskError: return "DiskError";
        case ErrorKind::NotFound: return "NotFound";
        case ErrorKind::MissingCredential: return "MissingCredential";
        case ErrorKind::Timeout: return "Timeout";
        case ErrorKind::RateLimited: return "RateLimited";
        case ErrorKind::RemoteError: return "RemoteError";
        case ErrorKind::EmptyCompletion: return "EmptyCompletion";
    }
    return "Unknown";
}

}  // namespace imagedx
