#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/image.hpp"

using namespace imagedx;

namespace {

PreprocessConfig raw_config(int h, int w) {
    PreprocessConfig c;
    c.target_height = h;
    c.target_width = w;
    c.mean = {0.0f, 0.0f, 0.0f};
    c.std = {1.0f, 1.0f, 1.0f};
    return c;
}

}  // namespace

TEST(Preprocess, GrayIsReplicated) {
    std::vector<std::uint8_t> px{0, 255, 51, 102};
    const auto png = encode_png_gray(px, 2, 2);
    const auto t = preprocess_bytes(png, raw_config(2, 2));
    ASSERT_EQ(t.channels, 3);
    for (int c = 0; c < 3; ++c) {
        EXPECT_FLOAT_EQ(t.at(0, 0, c), 0.0f);
        EXPECT_FLOAT_EQ(t.at(0, 1, c), 1.0f);
        EXPECT_FLOAT_EQ(t.at(1, 0, c), 0.2f);
        EXPECT_FLOAT_EQ(t.at(1, 1, c), 0.4f);
    }
}

TEST(Preprocess, ColourOrderIsRgb) {
    // one pixel: R=255, G=0, B=51
    std::vector<std::uint8_t> px{255, 0, 51};
    const auto png = encode_png(px, 1, 1, 3);
    const auto t = preprocess_bytes(png, raw_config(1, 1));
    EXPECT_FLOAT_EQ(t.at(0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(t.at(0, 0, 1), 0.0f);
    EXPECT_FLOAT_EQ(t.at(0, 0, 2), 0.2f);
}

TEST(Preprocess, BilinearUpscale) {
    // 1x2 -> 1x4 with half-pixel centres: samples at x = 0, 0.25, 0.75, 1
    std::vector<std::uint8_t> px{0, 255};
    const auto png = encode_png_gray(px, 1, 2);
    const auto t = preprocess_bytes(png, raw_config(1, 4));
    EXPECT_NEAR(t.at(0, 0, 0), 0.0f, 1e-6f);
    EXPECT_NEAR(t.at(0, 1, 0), 0.25f, 1e-6f);
    EXPECT_NEAR(t.at(0, 2, 0), 0.75f, 1e-6f);
    EXPECT_NEAR(t.at(0, 3, 0), 1.0f, 1e-6f);
}

TEST(Preprocess, Normalisation) {
    std::vector<std::uint8_t> px(16, 255);
    const auto png = encode_png_gray(px, 4, 4);
    PreprocessConfig cfg;
    cfg.target_height = 4;
    cfg.target_width = 4;
    const auto t = preprocess_bytes(png, cfg);  // (1 - 0.5) / 0.5
    for (float v : t.values) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(Preprocess, ShapeIndependentOfInputSize) {
    for (int side : {7, 64, 300}) {
        std::vector<std::uint8_t> px(static_cast<std::size_t>(side) * side, 90);
        const auto t = preprocess_bytes(encode_png_gray(px, side, side), PreprocessConfig{});
        EXPECT_EQ(t.height, 224);
        EXPECT_EQ(t.width, 224);
        EXPECT_EQ(t.values.size(), 224u * 224u * 3u);
        for (float v : t.values) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(Preprocess, SixteenBit) {
    cv::Mat m(1, 1, CV_16UC1, cv::Scalar(65535));
    std::vector<std::uint8_t> png;
    cv::imencode(".png", m, png);
    const auto t = preprocess_bytes(png, raw_config(1, 1));
    EXPECT_FLOAT_EQ(t.at(0, 0, 0), 1.0f);
}

TEST(Preprocess, AlphaPolicy) {
    std::vector<std::uint8_t> px{10, 20, 30, 255};
    const auto png = encode_png(px, 1, 1, 4);
    EXPECT_THROW(preprocess_bytes(png, raw_config(1, 1)), UnsupportedChannelCount);
    auto cfg = raw_config(1, 1);
    cfg.strip_alpha = true;
    const auto t = preprocess_bytes(png, cfg);
    EXPECT_NEAR(t.at(0, 0, 0), 10.0f / 255.0f, 1e-6f);
    EXPECT_NEAR(t.at(0, 0, 2), 30.0f / 255.0f, 1e-6f);
}

TEST(Preprocess, Keep3RejectsGray) {
    auto cfg = raw_config(1, 1);
    cfg.channel_policy = ChannelPolicy::Keep3;
    std::vector<std::uint8_t> px{1};
    EXPECT_THROW(preprocess_bytes(encode_png_gray(px, 1, 1), cfg), UnsupportedChannelCount);
}

TEST(Preprocess, GarbageBytes) {
    std::vector<std::uint8_t> junk{'n', 'o', 't', ' ', 'a', 'n', ' ', 'i', 'm', 'a', 'g', 'e'};
    EXPECT_THROW(preprocess_bytes(junk, PreprocessConfig{}), DecodeError);
    EXPECT_THROW(preprocess_bytes(std::span<const std::uint8_t>{}, PreprocessConfig{}), DecodeError);
}

TEST(PreprocessConfig, ValidateAndJson) {
    PreprocessConfig bad;
    bad.std[1] = 0.0f;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = PreprocessConfig{};
    bad.target_width = 0;
    EXPECT_THROW(bad.validate(), ConfigError);

    PreprocessConfig c;
    c.channel_policy = ChannelPolicy::Keep3;
    c.mean = {0.1f, 0.2f, 0.3f};
    c.strip_alpha = true;
    const nlohmann::json j = c;
    EXPECT_EQ(j.at("channel_policy"), "keep_3");
    EXPECT_EQ(j.get<PreprocessConfig>(), c);
    EXPECT_THROW((nlohmann::json{{"channel_policy", "rgb"}}.get<PreprocessConfig>()), ConfigError);
}
