#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imagedx/label.hpp"
#include "imagedx/llm.hpp"
#include "imagedx/prompt.hpp"

namespace imagedx {

extern const std::string_view kReportDisclaimer;

enum class ReportStatus { Ok, Degraded };

std::string_view to_string(ReportStatus status) noexcept;

struct DiagnosisReport {
    std::string report_id;
    std::string created_at;  // UTC, YYYY-MM-DDTHH:MM:SSZ
    std::string image_ref;
    HierarchicalLabel predicted_label;
    double confidence = 0.0;
    std::vector<double> class_probabilities;
    std::string prompt_text;
    std::string template_version;
    std::string completion_text;
    /// Keyed by section_key(); all four keys always present.
    std::map<std::string, std::string> sections;
    std::vector<std::string> parse_warnings;
    std::string model_artifact_id;
    std::string llm_model_name;
    LlmBackend backend = LlmBackend::Mock;
    std::string disclaimer{kReportDisclaimer};
    ReportStatus status = ReportStatus::Ok;
    /// Gateway failure message for degraded reports.
    std::string error;

    bool operator==(const DiagnosisReport&) const = default;
};

void to_json(nlohmann::json& j, const DiagnosisReport& r);
void from_json(const nlohmann::json& j, DiagnosisReport& r);

/// Throws ConfigError naming the first violated invariant.
void check_report(const DiagnosisReport& report);

struct SectionSplit {
    std::map<std::string, std::string> sections;
    std::vector<std::string> warnings;
};

/// Splits a completion on the mandated headings. Matching ignores case,
/// surrounding whitespace, leading '#'/'*' markers and a trailing ':'.
SectionSplit split_sections(std::string_view completion,
                            std::span<const ReportSection> required = kRequiredSections);

std::string utc_timestamp_now();

/// One JSON document per report under `objects/`, addressed by content
/// hash, plus an append-only `index.tsv` of `report_id<TAB>relative path`.
/// Safe for concurrent use within one process.
class ReportStore {
public:
    explicit ReportStore(std::filesystem::path root);  // DiskError

    const std::filesystem::path& root() const noexcept { return root_; }

    /// Assigns report_id when empty and returns it. Throws DiskError.
    std::string persist(DiagnosisReport& report);
    /// Throws NotFound or DiskError.
    DiagnosisReport get(const std::string& report_id);
    bool contains(const std::string& report_id);
    std::size_t size();

private:
    void reload_index_locked();
    std::string fresh_id_locked();

    std::filesystem::path root_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::string> index_;
};

enum class RenderFormat { Text, Markdown };

RenderFormat parse_render_format(std::string_view text);  // ConfigError
std::string render_report(const DiagnosisReport& report, RenderFormat format);

}  // namespace imagedx
