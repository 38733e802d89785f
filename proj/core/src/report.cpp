#include "imagedx/report.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/hash.hpp"
#include "imagedx/log.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace imagedx {

const std::string_view kReportDisclaimer =
    "This report was generated automatically from an image classifier and a language model. It is decision "
    "support for a qualified clinician and is not a diagnosis. Do not act on it without professional review.";

std::string_view to_string(ReportStatus status) noexcept { return status == ReportStatus::Ok ? "ok" : "degraded"; }

namespace {

ReportStatus parse_status(std::string_view text) {
    if (text == "ok") return ReportStatus::Ok;
    if (text == "degraded") return ReportStatus::Degraded;
    throw ConfigError(fmt::format("unknown report status '{}'", text));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// Normalised heading text, or empty when the line is not heading-like.
std::string heading_key(std::string_view line) {
    auto s = trim(line);
    while (!s.empty() && (s.front() == '#' || s.front() == '*')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == '*' || s.back() == ':')) s.remove_suffix(1);
    return lower(trim(s));
}

std::string join_trimmed(const std::vector<std::string_view>& lines) {
    std::string out;
    for (auto l : lines) {
        out.append(l);
        out.push_back('\n');
    }
    return std::string(trim(out));
}

void write_all(int fd, const std::string& data, const fs::path& path) {
    std::size_t done = 0;
    while (done < data.size()) {
        const auto n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) throw DiskError("write failed: " + path.string());
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

void to_json(json& j, const DiagnosisReport& r) {
    j = json{{"report_id", r.report_id},
             {"created_at", r.created_at},
             {"image_ref", r.image_ref},
             {"predicted_label", format_label(r.predicted_label)},
             {"confidence", r.confidence},
             {"class_probabilities", r.class_probabilities},
             {"prompt_text", r.prompt_text},
             {"template_version", r.template_version},
             {"completion_text", r.completion_text},
             {"sections", r.sections},
             {"parse_warnings", r.parse_warnings},
             {"model_artifact_id", r.model_artifact_id},
             {"llm_model_name", r.llm_model_name},
             {"backend", to_string(r.backend)},
             {"disclaimer", r.disclaimer},
             {"status", to_string(r.status)},
             {"error", r.error}};
}

void from_json(const json& j, DiagnosisReport& r) {
    r.report_id = j.at("report_id").get<std::string>();
    r.created_at = j.at("created_at").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    r.predicted_label = parse_label(j.at("predicted_label").get<std::string>());
    r.confidence = j.at("confidence").get<double>();
    r.class_probabilities = j.at("class_probabilities").get<std::vector<double>>();
    r.prompt_text = j.at("prompt_text").get<std::string>();
    r.template_version = j.at("template_version").get<std::string>();
    r.completion_text = j.at("completion_text").get<std::string>();
    r.sections = j.at("sections").get<std::map<std::string, std::string>>();
    r.parse_warnings = j.value("parse_warnings", std::vector<std::string>{});
    r.model_artifact_id = j.at("model_artifact_id").get<std::string>();
    r.llm_model_name = j.at("llm_model_name").get<std::string>();
    r.backend = parse_backend(j.at("backend").get<std::string>());
    r.disclaimer = j.at("disclaimer").get<std::string>();
    r.status = parse_status(j.at("status").get<std::string>());
    r.error = j.value("error", std::string{});
}

void check_report(const DiagnosisReport& r) {
    if (!catalog().contains(r.predicted_label)) {
        throw ConfigError("predicted_label not in catalog: " + format_label(r.predicted_label));
    }
    if (r.class_probabilities.size() != catalog().size()) {
        throw ConfigError(fmt::format("class_probabilities has {} entries, expected {}", r.class_probabilities.size(),
                                      catalog().size()));
    }
    if (r.confidence < 0.0 || r.confidence > 1.0) throw ConfigError("confidence outside [0, 1]");
    const auto max_p = *std::max_element(r.class_probabilities.begin(), r.class_probabilities.end());
    if (r.confidence != max_p) throw ConfigError("confidence differs from the largest class probability");
    for (auto s : kRequiredSections) {
        if (!r.sections.contains(std::string(section_key(s)))) {
            throw ConfigError(fmt::format("section '{}' missing", section_key(s)));
        }
    }
    if (r.disclaimer.empty()) throw ConfigError("disclaimer is empty");
}

SectionSplit split_sections(std::string_view completion, std::span<const ReportSection> required) {
    std::map<std::string, ReportSection> by_heading;
    for (auto s : required) by_heading.emplace(lower(section_heading(s)), s);

    std::vector<std::string_view> preamble;
    std::map<ReportSection, std::vector<std::string_view>> bodies;
    std::optional<ReportSection> current;
    std::size_t pos = 0;
    while (pos <= completion.size()) {
        auto end = completion.find('\n', pos);
        if (end == std::string_view::npos) end = completion.size();
        const auto line = completion.substr(pos, end - pos);
        pos = end + 1;
        if (auto it = by_heading.find(heading_key(line)); it != by_heading.end()) {
            current = it->second;
            bodies[*current];  // a heading with an empty body still counts as present
            continue;
        }
        if (current) {
            bodies[*current].push_back(line);
        } else {
            preamble.push_back(line);
        }
    }

    SectionSplit out;
    for (auto s : required) {
        const std::string key(section_key(s));
        auto it = bodies.find(s);
        if (it == bodies.end()) {
            out.sections[key] = "";
            out.warnings.push_back(fmt::format("heading '{}' not found", section_heading(s)));
        } else {
            out.sections[key] = join_trimmed(it->second);
        }
    }
    const auto findings = std::string(section_key(ReportSection::FindingsSummary));
    const auto pre = join_trimmed(preamble);
    if (!pre.empty() && out.sections.contains(findings) && out.sections[findings].empty()) {
        out.sections[findings] = pre;
        out.warnings.push_back("text before the first heading used as findings summary");
    }
    return out;
}

std::string utc_timestamp_now() {
    const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

ReportStore::ReportStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "objects", ec);
    if (ec) throw DiskError(fmt::format("cannot create report store at {}: {}", root_.string(), ec.message()));
    std::lock_guard lock(mutex_);
    reload_index_locked();
}

void ReportStore::reload_index_locked() {
    std::ifstream in(root_ / "index.tsv");
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;  // torn final line from a crash
        index_[line.substr(0, tab)] = line.substr(tab + 1);
    }
}

std::string ReportStore::fresh_id_locked() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    for (;;) {
        auto id = fmt::format("{:016x}{:016x}", rng(), rng());
        if (!index_.contains(id)) return id;
    }
}

std::string ReportStore::persist(DiagnosisReport& report) {
    std::lock_guard lock(mutex_);
    if (report.report_id.empty()) report.report_id = fresh_id_locked();
    if (index_.contains(report.report_id)) throw DiskError("report id already stored: " + report.report_id);

    const auto doc = json(report).dump(2) + "\n";
    const auto digest = sha256_hex(doc);
    const auto rel = fs::path("objects") / digest.substr(0, 2) / (digest + ".json");
    const auto target = root_ / rel;

    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw DiskError("cannot create " + target.parent_path().string() + ": " + ec.message());

    const auto tmp = target.string() + ".tmp";
    {
        const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd < 0) throw DiskError("cannot open " + tmp);
        try {
            write_all(fd, doc, tmp);
        } catch (...) {
            ::close(fd);
            throw;
        }
        ::fsync(fd);
        ::close(fd);
    }
    fs::rename(tmp, target, ec);
    if (ec) throw DiskError("cannot rename into " + target.string() + ": " + ec.message());

    const auto index_path = root_ / "index.tsv";
    const int fd = ::open(index_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw DiskError("cannot open " + index_path.string());
    try {
        write_all(fd, report.report_id + "\t" + rel.generic_string() + "\n", index_path);
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::fsync(fd);
    ::close(fd);

    index_[report.report_id] = rel.generic_string();
    logger()->debug("stored report {} at {}", report.report_id, rel.generic_string());
    return report.report_id;
}

DiagnosisReport ReportStore::get(const std::string& report_id) {
    fs::path file;
    {
        std::lock_guard lock(mutex_);
        auto it = index_.find(report_id);
        if (it == index_.end()) {
            reload_index_locked();
            it = index_.find(report_id);
            if (it == index_.end()) throw NotFound("no report with id '" + report_id + "'");
        }
        file = root_ / it->second;
    }
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DiskError("report file missing: " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str()).get<DiagnosisReport>();
    } catch (const json::exception& e) {
        throw DiskError(fmt::format("report file {} is corrupt: {}", file.string(), e.what()));
    }
}

bool ReportStore::contains(const std::string& report_id) {
    std::lock_guard lock(mutex_);
    if (!index_.contains(report_id)) reload_index_locked();
    return index_.contains(report_id);
}

std::size_t ReportStore::size() {
    std::lock_guard lock(mutex_);
    return index_.size();
}

RenderFormat parse_render_format(std::string_view text) {
    if (text == "text") return RenderFormat::Text;
    if (text == "markdown" || text == "md") return RenderFormat::Markdown;
    throw ConfigError(fmt::format("unknown render format '{}' (expected text or markdown)", text));
}

std::string render_report(const DiagnosisReport& r, RenderFormat format) {
    const auto& l = r.predicted_label;
    const auto scan = humanize_token(l.scan_name, LabelField::Scan);
    const auto part = humanize_token(l.body_part, LabelField::BodyPart);
    const auto test = humanize_token(l.test_name, LabelField::Test);
    const auto result = humanize_token(l.result, LabelField::Result);
    const bool md = format == RenderFormat::Markdown;
    const bool degraded = r.status == ReportStatus::Degraded;

    std::string out;
    auto line = [&out](std::string_view s) {
        out.append(s);
        out.push_back('\n');
    };
    auto section_text = [&](ReportSection s) -> std::string {
        auto it = r.sections.find(std::string(section_key(s)));
        if (it == r.sections.end() || it->second.empty()) {
            return degraded ? "(not available: report generation failed)" : "(section missing from completion)";
        }
        return it->second;
    };

    if (md) {
        line("# Diagnosis Report");
        line("");
        if (degraded) {
            line("> **WARNING: DEGRADED REPORT.** The language model completion is missing. Only the classifier "
                 "result below is available.");
            if (!r.error.empty()) line("> Cause: " + r.error);
            line("");
        }
        line("| Field | Value |");
        line("|---|---|");
        line("| Scan | " + scan + " |");
        line("| Body part | " + part + " |");
        line("| Test | " + test + " |");
        line("| Result | " + result + " |");
        line(fmt::format("| Confidence | {:.2f}% |", r.confidence * 100.0));
        line("| Label | `" + format_label(l) + "` |");
        line("");
        for (auto s : kRequiredSections) {
            line(fmt::format("## {}", section_heading(s)));
            line("");
            line(section_text(s));
            line("");
        }
        line("## Provenance");
        line("");
        line("- Report ID: `" + r.report_id + "`");
        line("- Created: " + r.created_at);
        line("- Image: " + r.image_ref);
        line("- Model artifact: `" + r.model_artifact_id + "`");
        line(fmt::format("- Language model: {} ({})", r.llm_model_name, to_string(r.backend)));
        line("- Prompt template: " + r.template_version);
        line(fmt::format("- Status: {}", to_string(r.status)));
        line("");
        line("---");
        line("");
        line("*" + r.disclaimer + "*");
    } else {
        line("DIAGNOSIS REPORT");
        if (degraded) {
            line("");
            line("!!! DEGRADED REPORT: language model completion missing; classifier result only !!!");
            if (!r.error.empty()) line("Cause: " + r.error);
        }
        line("");
        line("Scan:       " + scan);
        line("Body part:  " + part);
        line("Test:       " + test);
        line("Result:     " + result);
        line(fmt::format("Confidence: {:.2f}%", r.confidence * 100.0));
        line("Label:      " + format_label(l));
        for (auto s : kRequiredSections) {
            line("");
            std::string heading(section_heading(s));
            line(heading);
            line(std::string(heading.size(), '-'));
            line(section_text(s));
        }
        line("");
        line("Report ID:      " + r.report_id);
        line("Created:        " + r.created_at);
        line("Image:          " + r.image_ref);
        line("Model artifact: " + r.model_artifact_id);
        line(fmt::format("Language model: {} ({})", r.llm_model_name, to_string(r.backend)));
        line("Prompt:         " + r.template_version);
        line(fmt::format("Status:         {}", to_string(r.status)));
        line("");
        line(r.disclaimer);
    }
    return out;
}

}  // namespace imagedx
