#include "imagedx/prompt.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "imagedx/errors.hpp"
#include "imagedx/hash.hpp"

namespace imagedx {
namespace detail {
extern const char* const kBuiltinPromptTemplate;
}

namespace {

constexpr std::array<std::string_view, 4> kPlaceholders{"{scan}", "{body_part}", "{test}", "{result}"};

// Display names for every token in the catalog that the generic rule would
// render poorly. Keyed by field because a token may read differently per role.
const std::map<std::pair<LabelField, std::string_view>, std::string_view>& curated() {
    static const std::map<std::pair<LabelField, std::string_view>, std::string_view> table{
        {{LabelField::Scan, "ct-scan"}, "CT scan"},
        {{LabelField::Scan, "mri"}, "MRI scan"},
        {{LabelField::Scan, "oct-scan"}, "OCT scan"},
        {{LabelField::Scan, "ultrasound"}, "ultrasound scan"},
        {{LabelField::Scan, "xray"}, "X-ray"},
        {{LabelField::BodyPart, "rential"}, "retinal"},
        {{LabelField::Test, "alzheimer-test"}, "Alzheimer's disease test"},
        {{LabelField::Test, "rential-oct-test"}, "retinal OCT test"},
        {{LabelField::Result, "covid19"}, "COVID-19"},
        {{LabelField::Result, "turberculosis"}, "tuberculosis"},
        {{LabelField::Result, "no-tumor"}, "no tumor"},
    };
    return table;
}

void replace_all(std::string& text, std::string_view from, std::string_view to) {
    for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
        text.replace(pos, from.size(), to);
    }
}

}  // namespace

std::string_view section_key(ReportSection section) noexcept {
    switch (section) {
        case ReportSection::FindingsSummary: return "findings_summary";
        case ReportSection::PossibleCauses: return "possible_causes";
        case ReportSection::PrescriptionsTreatment: return "prescriptions_treatment";
        case ReportSection::FollowUp: break;
    }
    return "follow_up";
}

std::string_view section_heading(ReportSection section) noexcept {
    switch (section) {
        case ReportSection::FindingsSummary: return "Findings Summary";
        case ReportSection::PossibleCauses: return "Possible Causes";
        case ReportSection::PrescriptionsTreatment: return "Prescriptions and Treatment";
        case ReportSection::FollowUp: break;
    }
    return "Follow-up";
}

const PromptTemplate& PromptTemplate::builtin() {
    static const PromptTemplate tmpl = from_text(detail::kBuiltinPromptTemplate);
    return tmpl;
}

PromptTemplate PromptTemplate::from_text(std::string_view text) {
    std::string name = "custom";
    std::string body(text);
    if (body.starts_with("#version ")) {
        const auto eol = body.find('\n');
        name = body.substr(9, eol == std::string::npos ? std::string::npos : eol - 9);
        while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
        body = eol == std::string::npos ? std::string{} : body.substr(eol + 1);
    }
    for (auto placeholder : kPlaceholders) {
        if (body.find(placeholder) == std::string::npos) {
            throw ConfigError(fmt::format("prompt template lacks the {} placeholder", placeholder));
        }
    }
    return PromptTemplate{fmt::format("{}+{:08x}", name, fnv1a32(body)), std::move(body)};
}

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DiskError("cannot open prompt template " + file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

std::string humanize_token(std::string_view token, LabelField field) {
    if (auto it = curated().find({field, token}); it != curated().end()) {
        return std::string(it->second);
    }
    std::string out(token);
    for (auto& c : out) {
        if (c == '-') c = ' ';
    }
    return out;
}

DiagnosisPrompt generate_prompt(const HierarchicalLabel& label, const PromptTemplate& tmpl) {
    if (!catalog().contains(label)) {
        throw UnknownLabel("cannot build a prompt for '" + format_label(label) + "': not in the catalog");
    }
    std::string text = tmpl.body;
    replace_all(text, "{scan}", humanize_token(label.scan_name, LabelField::Scan));
    replace_all(text, "{body_part}", humanize_token(label.body_part, LabelField::BodyPart));
    replace_all(text, "{test}", humanize_token(label.test_name, LabelField::Test));
    replace_all(text, "{result}", humanize_token(label.result, LabelField::Result));

    bool all_headings = true;
    for (auto s : kRequiredSections) {
        all_headings = all_headings && text.find(fmt::format("## {}", section_heading(s))) != std::string::npos;
    }
    if (!all_headings) {
        if (!text.empty() && text.back() != '\n') text.push_back('\n');
        text += "\nStructure the report with exactly these headings, each on its own line:\n";
        for (auto s : kRequiredSections) text += fmt::format("## {}\n", section_heading(s));
    }

    return DiagnosisPrompt{std::move(text), label, tmpl.version,
                           std::vector<ReportSection>(kRequiredSections.begin(), kRequiredSections.end())};
}

}  // namespace imagedx
