#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "imagedx/dataset.hpp"

namespace imagedx {

/// Options for the synthetic placeholder corpus.
///
/// Each class gets a distinct oriented stripe texture and brightness with
/// per-image noise, so small networks can learn it. `counts` overrides the
/// scaled reference table.
struct FixtureOptions {
    double scale = 1.0;
    std::optional<ExpectedCounts> counts;
    int image_size = 32;
    float noise = 0.06f;
    std::uint64_t seed = 7;
    /// Distinct noise variants rendered per class; files cycle through them.
    int variants_per_class = 8;
};

struct FixtureSummary {
    std::filesystem::path root;
    ExpectedCounts counts;
    std::size_t train_total = 0;
    std::size_t val_total = 0;
};

/// Writes `root/{train,val}/<label>/img_NNNNNN.png`. Existing content under
/// the split directories is left untouched.
FixtureSummary generate_fixture(const std::filesystem::path& root, const FixtureOptions& options);

/// Counts with `per_class_train` / `per_class_val` images for every class.
ExpectedCounts uniform_counts(std::size_t per_class_train, std::size_t per_class_val);

/// 8-bit grayscale raster for one placeholder image.
std::vector<std::uint8_t> render_class_image(std::size_t class_index, std::uint64_t variant, int size,
                                             float noise, std::uint64_t seed);

}  // namespace imagedx
