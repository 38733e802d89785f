#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace imagedx {

enum class ChannelPolicy { ReplicateGrayTo3, Keep3 };

struct PreprocessConfig {
    int target_height = 224;
    int target_width = 224;
    ChannelPolicy channel_policy = ChannelPolicy::ReplicateGrayTo3;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> std{0.5f, 0.5f, 0.5f};
    /// Drop the alpha plane of 4-channel inputs instead of rejecting them.
    bool strip_alpha = false;

    /// Throws ConfigError on non-positive dimensions or std components.
    void validate() const;

    bool operator==(const PreprocessConfig&) const = default;
};

void to_json(nlohmann::json& j, const PreprocessConfig& cfg);
void from_json(const nlohmann::json& j, PreprocessConfig& cfg);

/// Row-major H x W x C float image, already normalised.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;

    float at(int y, int x, int c) const {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Decodes PNG/JPEG/BMP/PNM/TIFF bytes and preprocesses them.
/// Throws DecodeError or UnsupportedChannelCount.
ImageTensor preprocess_bytes(std::span<const std::uint8_t> bytes, const PreprocessConfig& cfg);

/// Reads a file and preprocesses it. Throws DecodeError when unreadable.
ImageTensor preprocess_file(const std::filesystem::path& path, const PreprocessConfig& cfg);

/// Reads a whole file into memory; throws DiskError.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Encodes an 8-bit grayscale raster (row-major) as PNG.
std::vector<std::uint8_t> encode_png_gray(std::span<const std::uint8_t> pixels, int height, int width);
/// Encodes an 8-bit interleaved raster with 3 (RGB) or 4 (RGBA) channels as PNG.
std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> pixels, int height, int width,
                                     int channels);

}  // namespace imagedx
