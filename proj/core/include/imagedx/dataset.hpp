#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imagedx/image.hpp"
#include "imagedx/label.hpp"

namespace imagedx {

enum class Split { Train, Val };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);  // ConfigError

struct SampleEntry {
    std::filesystem::path image_path;
    HierarchicalLabel label;
    Split split = Split::Train;

    bool operator==(const SampleEntry&) const = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::chrono::system_clock::time_point created_at{};
    std::vector<SampleEntry> entries;

    std::vector<const SampleEntry*> select(Split split) const;
};

/// Walks `root/{train,val}/<label>/<image>` and returns entries sorted by path.
/// Throws MissingSplitDirectory, MalformedLabel (bad label directory) or
/// EmptyDataset.
DatasetManifest scan_directory(const std::filesystem::path& root);

/// Per-label train/val counts plus everything that makes a manifest unusable.
struct ValidationReport {
    struct Counts {
        std::size_t train = 0;
        std::size_t val = 0;
    };
    /// Keyed by label string; every catalog label is present.
    std::map<std::string, Counts> per_label;
    std::size_t train_total = 0;
    std::size_t val_total = 0;
    std::vector<std::string> unknown_labels;
    std::vector<std::filesystem::path> missing_files;
    std::vector<std::filesystem::path> duplicates;
    /// Mismatches against expected counts, when compared.
    std::vector<std::string> count_mismatches;

    bool passed() const noexcept {
        return unknown_labels.empty() && missing_files.empty() && duplicates.empty() &&
               count_mismatches.empty();
    }
};

ValidationReport validate_manifest(const DatasetManifest& manifest);

/// Expected per-label counts, in catalog order (train, val).
using ExpectedCounts = std::vector<ClassCount>;

/// Reference table counts scaled by `scale`: round(n * scale) with a floor of 1.
ExpectedCounts scaled_reference_counts(double scale);

/// Adds one mismatch line per label whose counts differ from `expected`.
void compare_counts(ValidationReport& report, const ExpectedCounts& expected);

/// Counts for every catalog label; labels absent from the split map to 0.
std::map<std::string, std::size_t> class_distribution(const DatasetManifest& manifest, Split split);

/// Decodes and preprocesses the entry's image.
ImageTensor load_sample(const SampleEntry& entry, const PreprocessConfig& cfg);

/// Manifest text file: `# key=value` header lines, then `path<TAB>label<TAB>split`
/// per record, paths relative to the root when possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);

bool is_image_file(const std::filesystem::path& path);

}  // namespace imagedx
