#include "imagedx/image.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "imagedx/errors.hpp"

namespace imagedx {
namespace {

ImageTensor preprocess_mat(cv::Mat decoded, const PreprocessConfig& cfg) {
    cfg.validate();
    if (decoded.empty()) {
        throw DecodeError("image could not be decoded");
    }

    double scale = 1.0 / 255.0;
    if (decoded.depth() == CV_16U) {
        scale = 1.0 / 65535.0;
    } else if (decoded.depth() != CV_8U) {
        throw DecodeError(fmt::format("unsupported pixel depth {}", decoded.depth()));
    }

    cv::Mat rgb;
    switch (decoded.channels()) {
        case 1:
            if (cfg.channel_policy == ChannelPolicy::Keep3) {
                throw UnsupportedChannelCount("grayscale image but channel policy keeps 3 channels");
            }
            cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB);
            break;
        case 3:
            cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB);
            break;
        case 4:
            if (!cfg.strip_alpha) {
                throw UnsupportedChannelCount("4-channel image and alpha stripping is disabled");
            }
            cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB);
            break;
        default:
            throw UnsupportedChannelCount(fmt::format("{}-channel images are not supported", decoded.channels()));
    }

    cv::Mat as_float;
    rgb.convertTo(as_float, CV_32FC3, scale);
    cv::Mat resized;
    if (as_float.rows == cfg.target_height && as_float.cols == cfg.target_width) {
        resized = as_float;
    } else {
        cv::resize(as_float, resized, cv::Size(cfg.target_width, cfg.target_height), 0, 0,
                   cv::INTER_LINEAR);
    }

    ImageTensor out;
    out.height = cfg.target_height;
    out.width = cfg.target_width;
    out.channels = 3;
    out.values.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    for (int y = 0; y < out.height; ++y) {
        const auto* row = resized.ptr<cv::Vec3f>(y);
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = (row[x][c] - cfg.mean[c]) / cfg.std[c];
                out.values[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] = v;
            }
        }
    }
    return out;
}

std::string_view policy_name(ChannelPolicy p) {
    return p == ChannelPolicy::Keep3 ? "keep_3" : "replicate_gray_to_3";
}

}  // namespace

void PreprocessConfig::validate() const {
    if (target_height <= 0 || target_width <= 0) {
        throw ConfigError(fmt::format("preprocess target {}x{} must be positive", target_height, target_width));
    }
    for (int c = 0; c < 3; ++c) {
        if (!(std[c] > 0.0f) || !std::isfinite(std[c]) || !std::isfinite(mean[c])) {
            throw ConfigError(fmt::format("preprocess normalisation for channel {} is invalid", c));
        }
    }
}

void to_json(nlohmann::json& j, const PreprocessConfig& cfg) {
    j = nlohmann::json{{"target_height", cfg.target_height},
                       {"target_width", cfg.target_width},
                       {"channel_policy", policy_name(cfg.channel_policy)},
                       {"mean", cfg.mean},
                       {"std", cfg.std},
                       {"strip_alpha", cfg.strip_alpha}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& cfg) {
    cfg = PreprocessConfig{};
    cfg.target_height = j.value("target_height", cfg.target_height);
    cfg.target_width = j.value("target_width", cfg.target_width);
    const auto policy = j.value("channel_policy", std::string(policy_name(cfg.channel_policy)));
    if (policy == "keep_3") {
        cfg.channel_policy = ChannelPolicy::Keep3;
    } else if (policy == "replicate_gray_to_3") {
        cfg.channel_policy = ChannelPolicy::ReplicateGrayTo3;
    } else {
        throw ConfigError("unknown channel_policy '" + policy + "'");
    }
    if (j.contains("mean")) cfg.mean = j.at("mean").get<std::array<float, 3>>();
    if (j.contains("std")) cfg.std = j.at("std").get<std::array<float, 3>>();
    cfg.strip_alpha = j.value("strip_alpha", false);
    cfg.validate();
}

ImageTensor preprocess_bytes(std::span<const std::uint8_t> bytes, const PreprocessConfig& cfg) {
    if (bytes.empty()) {
        throw DecodeError("empty image buffer");
    }
    cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat decoded;
    try {
        decoded = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
    } catch (const cv::Exception& e) {
        throw DecodeError(std::string("image decoder failed: ") + e.what());
    }
    return preprocess_mat(std::move(decoded), cfg);
}

ImageTensor preprocess_file(const std::filesystem::path& path, const PreprocessConfig& cfg) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const DiskError& e) {
        throw DecodeError(e.what());
    }
    try {
        return preprocess_bytes(bytes, cfg);
    } catch (const DecodeError& e) {
        throw DecodeError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DiskError("cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::uint8_t> encode_png_gray(std::span<const std::uint8_t> pixels, int height, int width) {
    return encode_png(pixels, height, width, 1);
}

std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> pixels, int height, int width,
                                     int channels) {
    if (pixels.size() != static_cast<std::size_t>(height) * width * channels) {
        throw ShapeMismatch("pixel buffer does not match the requested raster shape");
    }
    cv::Mat src(height, width, CV_8UC(channels), const_cast<std::uint8_t*>(pixels.data()));
    cv::Mat bgr;
    if (channels == 3) {
        cv::cvtColor(src, bgr, cv::COLOR_RGB2BGR);
    } else if (channels == 4) {
        cv::cvtColor(src, bgr, cv::COLOR_RGBA2BGRA);
    } else {
        bgr = src;
    }
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", bgr, out)) {
        throw DecodeError("PNG encoding failed");
    }
    return out;
}

}  // namespace imagedx
