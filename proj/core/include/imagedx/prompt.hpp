#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "imagedx/label.hpp"

namespace imagedx {

enum class ReportSection { FindingsSummary, PossibleCauses, PrescriptionsTreatment, FollowUp };

inline constexpr std::array<ReportSection, 4> kRequiredSections{
    ReportSection::FindingsSummary, ReportSection::PossibleCauses, ReportSection::PrescriptionsTreatment,
    ReportSection::FollowUp};

/// Storage key, e.g. "findings_summary".
std::string_view section_key(ReportSection section) noexcept;
/// Heading text the prompt mandates, e.g. "Findings Summary".
std::string_view section_heading(ReportSection section) noexcept;

/// Prompt template with `{scan}`, `{body_part}`, `{test}` and `{result}`
/// placeholders. An optional first line `#version NAME` names it; the
/// effective version is NAME plus a fingerprint of the body, so any wording
/// change yields a new version.
struct PromptTemplate {
    std::string version;
    std::string body;

    static const PromptTemplate& builtin();
    /// Throws ConfigError when a placeholder is missing.
    static PromptTemplate from_text(std::string_view text);
    static PromptTemplate from_file(const std::filesystem::path& file);
};

struct DiagnosisPrompt {
    std::string text;
    HierarchicalLabel source_label;
    std::string template_version;
    std::vector<ReportSection> required_sections;
};

/// Display form of a label token: curated entries first, otherwise hyphens
/// become spaces. The raw label is never altered.
std::string humanize_token(std::string_view token, LabelField field);

/// Throws UnknownLabel for labels outside the catalog.
DiagnosisPrompt generate_prompt(const HierarchicalLabel& label,
                                const PromptTemplate& tmpl = PromptTemplate::builtin());

}  // namespace imagedx
