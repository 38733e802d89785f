#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace imagedx {

/// Four-part image label: `scan.body_part.test.result`.
///
/// Each field is a lowercase token matching `[a-z0-9]+(-[a-z0-9]+)*`.
/// Construct through parse_label() or make_label() so the grammar holds.
struct HierarchicalLabel {
    std::string scan_name;
    std::string body_part;
    std::string test_name;
    std::string result;

    auto operator<=>(const HierarchicalLabel&) const = default;
};

enum class LabelField { Scan, BodyPart, Test, Result };

/// True when `token` is a non-empty grammar-conforming label token.
bool is_valid_token(std::string_view token) noexcept;

/// Splits on "." into exactly four tokens. Throws MalformedLabel naming the
/// offending segment otherwise.
HierarchicalLabel parse_label(std::string_view raw);

/// Validates all four fields; throws MalformedLabel.
HierarchicalLabel make_label(std::string scan, std::string body_part, std::string test,
                             std::string result);

std::string format_label(const HierarchicalLabel& label);

const std::string& field_of(const HierarchicalLabel& label, LabelField field) noexcept;

/// The fixed 25-class catalog. Class index is the row order of the source
/// dataset table and defines the classifier output ordering.
class LabelCatalog {
public:
    explicit LabelCatalog(std::vector<HierarchicalLabel> entries);

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<HierarchicalLabel>& entries() const noexcept { return entries_; }

    const HierarchicalLabel& label_at(std::size_t index) const;  // IndexError
    std::optional<std::size_t> find(const HierarchicalLabel& label) const;
    std::optional<std::size_t> find(std::string_view label_string) const;
    std::size_t index(const HierarchicalLabel& label) const;  // UnknownLabel
    bool contains(const HierarchicalLabel& label) const { return find(label).has_value(); }

    std::vector<std::string> strings() const;

private:
    std::vector<HierarchicalLabel> entries_;
    std::unordered_map<std::string, std::size_t> by_string_;
};

inline constexpr std::size_t kNumClasses = 25;

const LabelCatalog& catalog();

/// Train/val image counts per catalog entry, in catalog order.
struct ClassCount {
    std::string_view label;
    std::size_t train;
    std::size_t val;
};
const std::array<ClassCount, kNumClasses>& reference_counts() noexcept;

}  // namespace imagedx
