#include "imagedx/label.hpp"


#include <fmt/format.h>

#include "imagedx/errors.hpp"

namespace imagedx {
namespace {

constexpr std::array<ClassCount, kNumClasses> kReference{{
    {"ct-scan.chest.cancer-test.adenocarcinoma", 1093, 274},
    {"ct-scan.chest.cancer-test.benign", 96, 24},
    {"ct-scan.chest.cancer-test.large-cell-carcinoma", 628, 158},
    {"ct-scan.chest.cancer-test.malignant", 448, 113},
    {"ct-scan.chest.cancer-test.normal", 1011, 253},
    {"ct-scan.chest.cancer-test.squamous-cell-carcinoma", 881, 221},
    {"mri.brain.alzheimer-test.mild-demented", 7884, 1972},
    {"mri.brain.alzheimer-test.moderate-demented", 5222, 1306},
    {"mri.brain.alzheimer-test.non-demented", 10242, 2560},
    {"mri.brain.alzheimer-test.very-mild-demented", 8960, 2240},
    {"mri.brain.tumor-test.glioma-tumor", 1881, 471},
    {"mri.brain.tumor-test.meningioma-tumor", 1316, 329},
    {"mri.brain.tumor-test.no-tumor", 400, 100},
    {"mri.brain.tumor-test.pituitary-tumor", 1464, 367},
    {"oct-scan.rential.rential-oct-test.choroidal-neovascularization", 29964, 7491},
    {"oct-scan.rential.rential-oct-test.diabetic-macular-edema", 9278, 2320},
    {"oct-scan.rential.rential-oct-test.multiple-drusen", 7092, 1780},
    {"oct-scan.rential.rential-oct-test.normal", 21254, 5331},
    {"ultrasound.breast.cancer-test.benign", 3780, 945},
    {"ultrasound.breast.cancer-test.malignant", 3553, 889},
    {"ultrasound.breast.cancer-test.normal", 106, 27},
    {"xray.chest.pneumonia-test.covid19", 460, 116},
    {"xray.chest.pneumonia-test.normal", 1266, 317},
    {"xray.chest.pneumonia-test.pneumonia", 3418, 855},
    {"xray.chest.pneumonia-test.turberculosis", 560, 140},
}};

bool is_alnum_lower(char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

void require_token(std::string_view token, std::string_view raw, std::size_t position) {
    if (!is_valid_token(token)) {
        throw MalformedLabel(fmt::format("label '{}': segment {} ('{}') does not match [a-z0-9]+(-[a-z0-9]+)*",
                                         raw, position, token));
    }
}

}  // namespace

bool is_valid_token(std::string_view token) noexcept {
    if (token.empty() || token.front() == '-' || token.back() == '-') {
        return false;
    }
    char prev = '\0';
    for (char c : token) {
        if (c == '-') {
            if (prev == '-') return false;
        } else if (!is_alnum_lower(c)) {
            return false;
        }
        prev = c;
    }
    return true;
}

HierarchicalLabel parse_label(std::string_view raw) {
    std::array<std::string_view, 4> parts;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
        const auto dot = raw.find('.', start);
        const auto piece = raw.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
        if (count < parts.size()) {
            parts[count] = piece;
        }
        ++count;
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    if (count != 4) {
        throw MalformedLabel(fmt::format("label '{}' has {} segments, expected 4", raw, count));
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        require_token(parts[i], raw, i);
    }
    return HierarchicalLabel{std::string(parts[0]), std::string(parts[1]), std::string(parts[2]),
                             std::string(parts[3])};
}

HierarchicalLabel make_label(std::string scan, std::string body_part, std::string test,
                             std::string result) {
    HierarchicalLabel label{std::move(scan), std::move(body_part), std::move(test), std::move(result)};
    const auto raw = format_label(label);
    require_token(label.scan_name, raw, 0);
    require_token(label.body_part, raw, 1);
    require_token(label.test_name, raw, 2);
    require_token(label.result, raw, 3);
    return label;
}

std::string format_label(const HierarchicalLabel& label) {
    std::string out;
    out.reserve(label.scan_name.size() + label.body_part.size() + label.test_name.size() +
                label.result.size() + 3);
    out.append(label.scan_name).push_back('.');
    out.append(label.body_part).push_back('.');
    out.append(label.test_name).push_back('.');
    out.append(label.result);
    return out;
}

const std::string& field_of(const HierarchicalLabel& label, LabelField field) noexcept {
    switch (field) {
        case LabelField::Scan: return label.scan_name;
        case LabelField::BodyPart: return label.body_part;
        case LabelField::Test: return label.test_name;
        case LabelField::Result: break;
    }
    return label.result;
}

LabelCatalog::LabelCatalog(std::vector<HierarchicalLabel> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto [it, inserted] = by_string_.emplace(format_label(entries_[i]), i);
        if (!inserted) {
            throw ConfigError("duplicate catalog entry '" + it->first + "'");
        }
    }
}

const HierarchicalLabel& LabelCatalog::label_at(std::size_t index) const {
    if (index >= entries_.size()) {
        throw IndexError(fmt::format("class index {} out of range [0, {})", index, entries_.size()));
    }
    return entries_[index];
}

std::optional<std::size_t> LabelCatalog::find(const HierarchicalLabel& label) const {
    return find(format_label(label));
}

std::optional<std::size_t> LabelCatalog::find(std::string_view label_string) const {
    if (auto it = by_string_.find(std::string(label_string)); it != by_string_.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::size_t LabelCatalog::index(const HierarchicalLabel& label) const {
    if (auto idx = find(label)) {
        return *idx;
    }
    throw UnknownLabel("label '" + format_label(label) + "' is not in the catalog");
}

std::vector<std::string> LabelCatalog::strings() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(format_label(e));
    return out;
}

const LabelCatalog& catalog() {
    static const LabelCatalog instance = [] {
        std::vector<HierarchicalLabel> entries;
        entries.reserve(kReference.size());
        for (const auto& row : kReference) {
            entries.push_back(parse_label(row.label));
        }
        return LabelCatalog(std::move(entries));
    }();
    return instance;
}

const std::array<ClassCount, kNumClasses>& reference_counts() noexcept { return kReference; }

}  // namespace imagedx
