#include "imagedx/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace fs = std::filesystem;

namespace imagedx {

ExpectedCounts uniform_counts(std::size_t per_class_train, std::size_t per_class_val) {
    ExpectedCounts out;
    for (const auto& row : reference_counts()) {
        out.push_back(ClassCount{row.label, per_class_train, per_class_val});
    }
    return out;
}

std::vector<std::uint8_t> render_class_image(std::size_t class_index, std::uint64_t variant, int size,
                                             float noise, std::uint64_t seed) {
    // 5 orientations x 5 spatial frequencies, plus a class-specific brightness.
    const double theta = static_cast<double>(class_index % 5) * std::numbers::pi / 5.0;
    const double cycles = 1.0 + static_cast<double>(class_index / 5);
    const double brightness = 0.3 + 0.4 * static_cast<double>((class_index * 7) % 25) / 24.0;
    const double c = std::cos(theta);
    const double s = std::sin(theta);

    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (class_index + 1)) ^ (variant * 0xbf58476d1ce4e5b9ULL));
    std::uniform_real_distribution<double> jitter(-noise, noise);

    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double u = (x * c + y * s) / size;
            const double wave = std::sin(2.0 * std::numbers::pi * cycles * u);
            const double v = std::clamp(brightness + 0.25 * wave + jitter(rng), 0.0, 1.0);
            pixels[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return pixels;
}

FixtureSummary generate_fixture(const fs::path& root, const FixtureOptions& options) {
    if (options.image_size <= 0 || options.variants_per_class <= 0) {
        throw ConfigError("fixture image size and variant count must be positive");
    }
    FixtureSummary summary;
    summary.root = root;
    summary.counts = options.counts ? *options.counts : scaled_reference_counts(options.scale);

    const auto& cat = catalog();
    std::uint64_t serial = 0;
    for (const auto& row : summary.counts) {
        const auto class_index = cat.find(row.label);
        if (!class_index) {
            throw UnknownLabel(fmt::format("fixture label '{}' is not in the catalog", row.label));
        }
        std::vector<std::vector<std::uint8_t>> encoded(static_cast<std::size_t>(options.variants_per_class));
        for (int v = 0; v < options.variants_per_class; ++v) {
            encoded[v] = encode_png_gray(
                render_class_image(*class_index, static_cast<std::uint64_t>(v), options.image_size, options.noise,
                                   options.seed),
                options.image_size, options.image_size);
        }

        for (const auto split : {Split::Train, Split::Val}) {
            const auto n = split == Split::Train ? row.train : row.val;
            const auto dir = root / std::string(to_string(split)) / std::string(row.label);
            std::error_code ec;
            fs::create_directories(dir, ec);
            if (ec) {
                throw DiskError("cannot create " + dir.string() + ": " + ec.message());
            }
            for (std::size_t i = 0; i < n; ++i) {
                // Train and val draw different variants first so val is not a copy of train.
                const auto variants = static_cast<std::size_t>(options.variants_per_class);
                const auto variant = (split == Split::Train ? i : i + variants / 2) % variants;
                const auto& bytes = encoded[variant];
                const auto file = dir / fmt::format("img_{:06d}.png", serial++);
                std::ofstream out(file, std::ios::binary | std::ios::trunc);
                out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
                if (!out) {
                    throw DiskError("cannot write " + file.string());
                }
            }
            (split == Split::Train ? summary.train_total : summary.val_total) += n;
        }
    }
    return summary;
}

}  // namespace imagedx
