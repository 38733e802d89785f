#include "imagedx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace fs = std::filesystem;

namespace imagedx {
namespace {

std::string format_time(std::chrono::system_clock::time_point tp) {
    const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", secs);
}

std::chrono::system_clock::time_point parse_time(const std::string& text) {
    std::tm tm{};
    std::istringstream in(text);
    in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    if (in.fail()) {
        throw ConfigError("manifest created_at '" + text + "' is not an ISO-8601 UTC timestamp");
    }
    return std::chrono::system_clock::from_time_t(timegm(&tm));
}

void scan_split(const fs::path& split_dir, Split split, std::vector<SampleEntry>& out) {
    for (const auto& label_dir : fs::directory_iterator(split_dir)) {
        if (!label_dir.is_directory()) {
            continue;
        }
        const auto label = parse_label(label_dir.path().filename().string());
        for (const auto& file : fs::directory_iterator(label_dir.path())) {
            if (file.is_regular_file() && is_image_file(file.path())) {
                out.push_back(SampleEntry{file.path(), label, split});
            }
        }
    }
}

}  // namespace

std::string_view to_string(Split split) noexcept { return split == Split::Train ? "train" : "val"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    throw ConfigError(fmt::format("unknown split '{}' (expected train or val)", text));
}

std::vector<const SampleEntry*> DatasetManifest::select(Split split) const {
    std::vector<const SampleEntry*> out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(&e);
    }
    return out;
}

bool is_image_file(const fs::path& path) {
    static const std::set<std::string> kExtensions{".png", ".jpg", ".jpeg", ".bmp", ".pgm",
                                                   ".ppm", ".pnm", ".tif", ".tiff"};
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return kExtensions.contains(ext);
}

DatasetManifest scan_directory(const fs::path& root) {
    DatasetManifest manifest;
    manifest.root = root;
    manifest.created_at = std::chrono::system_clock::now();

    for (const auto split : {Split::Train, Split::Val}) {
        const auto dir = root / std::string(to_string(split));
        std::error_code ec;
        if (!fs::is_directory(dir, ec)) {
            throw MissingSplitDirectory("missing split directory " + dir.string());
        }
        scan_split(dir, split, manifest.entries);
    }
    if (manifest.entries.empty()) {
        throw EmptyDataset("no image files under " + root.string());
    }
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const SampleEntry& a, const SampleEntry& b) { return a.image_path < b.image_path; });
    return manifest;
}

ValidationReport validate_manifest(const DatasetManifest& manifest) {
    ValidationReport report;
    const auto& cat = catalog();
    for (const auto& label : cat.strings()) {
        report.per_label.emplace(label, ValidationReport::Counts{});
    }

    std::unordered_set<std::string> seen_paths;
    std::set<std::string> unknown;
    seen_paths.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        const auto key = entry.image_path.lexically_normal().string();
        if (!seen_paths.insert(key).second) {
            report.duplicates.push_back(entry.image_path);
        }
        std::error_code ec;
        if (!fs::is_regular_file(entry.image_path, ec)) {
            report.missing_files.push_back(entry.image_path);
        }
        const auto label = format_label(entry.label);
        auto it = report.per_label.find(label);
        if (it == report.per_label.end()) {
            unknown.insert(label);
            continue;
        }
        if (entry.split == Split::Train) {
            ++it->second.train;
            ++report.train_total;
        } else {
            ++it->second.val;
            ++report.val_total;
        }
    }
    report.unknown_labels.assign(unknown.begin(), unknown.end());
    return report;
}

ExpectedCounts scaled_reference_counts(double scale) {
    if (!(scale > 0.0)) {
        throw ConfigError("fixture scale must be positive");
    }
    ExpectedCounts out;
    for (const auto& row : reference_counts()) {
        auto scaled = [scale](std::size_t n) {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale)));
        };
        out.push_back(ClassCount{row.label, scaled(row.train), scaled(row.val)});
    }
    return out;
}

void compare_counts(ValidationReport& report, const ExpectedCounts& expected) {
    for (const auto& row : expected) {
        const auto it = report.per_label.find(std::string(row.label));
        const ValidationReport::Counts got = it == report.per_label.end() ? ValidationReport::Counts{} : it->second;
        if (got.train != row.train || got.val != row.val) {
            report.count_mismatches.push_back(fmt::format("{}: expected train {} / val {}, found {} / {}", row.label,
                                                          row.train, row.val, got.train, got.val));
        }
    }
}

std::map<std::string, std::size_t> class_distribution(const DatasetManifest& manifest, Split split) {
    std::map<std::string, std::size_t> counts;
    for (const auto& label : catalog().strings()) {
        counts.emplace(label, 0);
    }
    for (const auto& entry : manifest.entries) {
        if (entry.split != split) continue;
        if (auto it = counts.find(format_label(entry.label)); it != counts.end()) {
            ++it->second;
        }
    }
    return counts;
}

ImageTensor load_sample(const SampleEntry& entry, const PreprocessConfig& cfg) {
    return preprocess_file(entry.image_path, cfg);
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DiskError("cannot write manifest " + file.string());
    }
    out << "# imagedx-manifest v1\n";
    out << "# root=" << manifest.root.string() << '\n';
    out << "# created_at=" << format_time(manifest.created_at) << '\n';
    for (const auto& e : manifest.entries) {
        auto rel = e.image_path.lexically_relative(manifest.root);
        const bool inside = !manifest.root.empty() && !rel.empty() && *rel.begin() != "..";
        out << (inside ? rel : e.image_path).generic_string() << '\t' << format_label(e.label) << '\t'
            << to_string(e.split) << '\n';
    }
    if (!out.flush()) {
        throw DiskError("failed writing manifest " + file.string());
    }
}

DatasetManifest read_manifest(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw DiskError("cannot open manifest " + file.string());
    }
    DatasetManifest manifest;
    manifest.root = file.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const auto key = line.substr(2, eq - 2);
            const auto value = line.substr(eq + 1);
            if (key == "root") manifest.root = value;
            if (key == "created_at") manifest.created_at = parse_time(value);
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw ConfigError(fmt::format("{}:{}: expected path<TAB>label<TAB>split", file.string(), line_no));
        }
        fs::path path = line.substr(0, t1);
        if (path.is_relative()) path = manifest.root / path;
        manifest.entries.push_back(
            SampleEntry{path, parse_label(line.substr(t1 + 1, t2 - t1 - 1)), parse_split(line.substr(t2 + 1))});
    }
    return manifest;
}

}  // namespace imagedx
