#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace imagedx {

/// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Throws DiskError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

/// 32-bit FNV-1a, used for short non-cryptographic fingerprints.
std::uint32_t fnv1a32(std::string_view text) noexcept;

}  // namespace imagedx
