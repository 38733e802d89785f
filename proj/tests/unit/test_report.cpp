#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/report.hpp"
#include "support.hpp"

using namespace imagedx;
using imagedx::testing::TempDir;

namespace {

const std::string kFindings = "findings_summary";
const std::string kCauses = "possible_causes";
const std::string kTreatment = "prescriptions_treatment";
const std::string kFollowUp = "follow_up";

DiagnosisReport alzheimer_report() {
    const auto label = parse_label("mri.brain.alzheimer-test.mild-demented");
    const auto prompt = generate_prompt(label);
    DiagnosisReport r;
    r.report_id = "0123456789abcdef0123456789abcdef";
    r.created_at = "2026-01-02T03:04:05Z";
    r.image_ref = "scans/patient-17.png";
    r.predicted_label = label;
    r.class_probabilities.assign(kNumClasses, 0.0);
    const auto idx = catalog().index(label);
    r.class_probabilities[idx] = 0.8125;
    r.class_probabilities[idx + 1] = 0.1875;
    r.confidence = 0.8125;
    r.prompt_text = prompt.text;
    r.template_version = prompt.template_version;
    r.completion_text = mock_completion(prompt, "mock");
    const auto split = split_sections(r.completion_text);
    r.sections = split.sections;
    r.parse_warnings = split.warnings;
    r.model_artifact_id = "a1b2c3d4e5f60718";
    r.llm_model_name = "mock";
    r.backend = LlmBackend::Mock;
    return r;
}

}  // namespace

TEST(SplitSections, WellFormed) {
    const auto s = split_sections(
        "## Findings Summary\nA.\nA2.\n\n## Possible Causes\nB.\n## Prescriptions and Treatment\nC.\n"
        "## Follow-up\nD.\n");
    EXPECT_TRUE(s.warnings.empty());
    EXPECT_EQ(s.sections.at(kFindings), "A.\nA2.");
    EXPECT_EQ(s.sections.at(kCauses), "B.");
    EXPECT_EQ(s.sections.at(kTreatment), "C.");
    EXPECT_EQ(s.sections.at(kFollowUp), "D.");
}

TEST(SplitSections, NoHeadingsAtAll) {
    const auto s = split_sections("The patient looks fine.\nNothing else.");
    ASSERT_EQ(s.sections.size(), 4u);
    EXPECT_EQ(s.sections.at(kFindings), "The patient looks fine.\nNothing else.");
    EXPECT_EQ(s.sections.at(kCauses), "");
    EXPECT_EQ(s.sections.at(kFollowUp), "");
    EXPECT_EQ(s.warnings.size(), 5u);
}

TEST(SplitSections, EmptyCompletion) {
    const auto s = split_sections("");
    ASSERT_EQ(s.sections.size(), 4u);
    for (const auto& [k, v] : s.sections) EXPECT_EQ(v, "") << k;
    EXPECT_EQ(s.warnings.size(), 4u);
}

TEST(SplitSections, AnyOrder) {
    std::array<int, 4> order{0, 1, 2, 3};
    const std::array<const char*, 4> headings{"Findings Summary", "Possible Causes", "Prescriptions and Treatment",
                                              "Follow-up"};
    const std::array<const std::string*, 4> keys{&kFindings, &kCauses, &kTreatment, &kFollowUp};
    int permutations = 0;
    do {
        std::string text;
        for (int i : order) text += fmt::format("## {}\nbody {}\n", headings[i], i);
        const auto s = split_sections(text);
        EXPECT_TRUE(s.warnings.empty()) << text;
        for (int i = 0; i < 4; ++i) EXPECT_EQ(s.sections.at(*keys[i]), fmt::format("body {}", i)) << text;
        ++permutations;
    } while (std::next_permutation(order.begin(), order.end()));
    EXPECT_EQ(permutations, 24);
}

TEST(SplitSections, DecoratedHeadings) {
    const auto s = split_sections(
        "Intro line\n**Findings Summary:**\nA\n# POSSIBLE CAUSES\nB\n  ### prescriptions and treatment :  \nC\n"
        "*Follow-Up*\nD");
    EXPECT_TRUE(s.warnings.empty());
    EXPECT_EQ(s.sections.at(kFindings), "A");
    EXPECT_EQ(s.sections.at(kCauses), "B");
    EXPECT_EQ(s.sections.at(kTreatment), "C");
    EXPECT_EQ(s.sections.at(kFollowUp), "D");
}

TEST(SplitSections, MissingSectionAndPreamble) {
    const auto s = split_sections("Opening remarks.\n## Possible Causes\nB\n## Follow-up\nD\n");
    EXPECT_EQ(s.sections.at(kFindings), "Opening remarks.");
    EXPECT_EQ(s.sections.at(kTreatment), "");
    EXPECT_EQ(s.warnings.size(), 3u);
    // a heading mentioned inside prose is not a heading
    const auto prose = split_sections("## Findings Summary\nSee the Possible Causes section.\n");
    EXPECT_EQ(prose.sections.at(kFindings), "See the Possible Causes section.");
    EXPECT_EQ(prose.sections.at(kCauses), "");
}

TEST(SplitSections, MockCompletionsSplitCleanly) {
    for (const auto& label : catalog().entries()) {
        const auto s = split_sections(mock_completion(generate_prompt(label), "mock"));
        EXPECT_TRUE(s.warnings.empty()) << format_label(label);
        for (const auto& [k, v] : s.sections) EXPECT_FALSE(v.empty()) << format_label(label) << " " << k;
    }
}

TEST(DiagnosisReport, JsonRoundTrip) {
    auto r = alzheimer_report();
    r.parse_warnings = {"w1"};
    const nlohmann::json j = r;
    EXPECT_EQ(j.at("predicted_label"), "mri.brain.alzheimer-test.mild-demented");
    EXPECT_EQ(j.at("status"), "ok");
    EXPECT_EQ(j.at("backend"), "mock");
    EXPECT_EQ(j.at("class_probabilities").size(), kNumClasses);
    EXPECT_EQ(j.get<DiagnosisReport>(), r);

    r.status = ReportStatus::Degraded;
    r.error = "LLM endpoint unreachable";
    const nlohmann::json d = r;
    EXPECT_EQ(d.at("status"), "degraded");
    EXPECT_EQ(d.get<DiagnosisReport>(), r);
}

TEST(DiagnosisReport, Invariants) {
    EXPECT_NO_THROW(check_report(alzheimer_report()));
    auto r = alzheimer_report();
    r.confidence = 0.5;
    EXPECT_THROW(check_report(r), ConfigError);
    r = alzheimer_report();
    r.class_probabilities.pop_back();
    EXPECT_THROW(check_report(r), ConfigError);
    r = alzheimer_report();
    r.sections.erase(kCauses);
    EXPECT_THROW(check_report(r), ConfigError);
    r = alzheimer_report();
    r.disclaimer.clear();
    EXPECT_THROW(check_report(r), ConfigError);
    r = alzheimer_report();
    r.predicted_label.result = "severe-demented";
    EXPECT_THROW(check_report(r), ConfigError);
    EXPECT_FALSE(std::string(kReportDisclaimer).empty());
}

TEST(ReportStore, PersistAndGet) {
    TempDir dir;
    ReportStore store(dir.path());
    auto r = alzheimer_report();
    r.report_id.clear();
    const auto id = store.persist(r);
    EXPECT_EQ(id.size(), 32u);
    EXPECT_TRUE(std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(c) && !std::isupper(c); }));
    EXPECT_EQ(r.report_id, id);
    EXPECT_EQ(store.get(id), r);
    EXPECT_TRUE(store.contains(id));
    EXPECT_EQ(store.size(), 1u);
    EXPECT_THROW(store.get("ffffffffffffffffffffffffffffffff"), NotFound);
    EXPECT_THROW(store.persist(r), DiskError);

    // a second store instance over the same directory sees it
    ReportStore reopened(dir.path());
    EXPECT_EQ(reopened.get(id), r);

    const auto index = imagedx::testing::read_text(dir / "index.tsv");
    EXPECT_TRUE(index.starts_with(id + "\tobjects/"));
    std::size_t tmp_files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
        tmp_files += e.path().extension() == ".tmp";
    }
    EXPECT_EQ(tmp_files, 0u);
}

TEST(ReportStore, DetectsCorruption) {
    TempDir dir;
    ReportStore store(dir.path());
    auto r = alzheimer_report();
    const auto id = store.persist(r);
    const auto index = imagedx::testing::read_text(dir / "index.tsv");
    const auto rel = index.substr(index.find('\t') + 1, index.find('\n') - index.find('\t') - 1);
    imagedx::testing::write_text(dir.path() / rel, "{ truncated");
    EXPECT_THROW(store.get(id), DiskError);
    std::filesystem::remove(dir.path() / rel);
    EXPECT_THROW(store.get(id), DiskError);
}

TEST(ReportStore, ConcurrentWritersGetDistinctIds) {
    TempDir dir;
    ReportStore store(dir.path());
    constexpr int kThreads = 8;
    constexpr int kPerThread = 40;
    std::vector<std::vector<std::string>> ids(kThreads);
    std::vector<std::thread> threads;
    for (int t = 0; t < kThreads; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < kPerThread; ++i) {
                auto r = alzheimer_report();
                r.report_id.clear();
                r.image_ref = fmt::format("img-{}-{}", t, i);
                ids[t].push_back(store.persist(r));
            }
        });
    }
    for (auto& th : threads) th.join();
    std::set<std::string> all;
    for (const auto& v : ids) all.insert(v.begin(), v.end());
    EXPECT_EQ(all.size(), static_cast<std::size_t>(kThreads * kPerThread));
    EXPECT_EQ(store.size(), all.size());
    ReportStore reopened(dir.path());
    EXPECT_EQ(reopened.size(), all.size());
    for (int t = 0; t < kThreads; ++t) {
        EXPECT_EQ(reopened.get(ids[t][5]).image_ref, fmt::format("img-{}-5", t));
    }
}

TEST(Render, MarkdownMatchesGolden) {
    const auto md = render_report(alzheimer_report(), RenderFormat::Markdown);
    EXPECT_EQ(md, imagedx::testing::read_text(imagedx::testing::golden_path("report_alzheimer.md")));
}

TEST(Render, HumanizedFieldsAndDisclaimer) {
    const auto r = alzheimer_report();
    for (auto fmt_kind : {RenderFormat::Text, RenderFormat::Markdown}) {
        const auto out = render_report(r, fmt_kind);
        EXPECT_NE(out.find("MRI scan"), std::string::npos);
        EXPECT_NE(out.find("Alzheimer's disease test"), std::string::npos);
        EXPECT_NE(out.find("mild demented"), std::string::npos);
        EXPECT_NE(out.find("81.25%"), std::string::npos);
        EXPECT_NE(out.find(kReportDisclaimer), std::string::npos);
        EXPECT_NE(out.find(r.sections.at(kCauses)), std::string::npos);
        EXPECT_EQ(out.find("DEGRADED"), std::string::npos);
    }
    EXPECT_EQ(parse_render_format("md"), RenderFormat::Markdown);
    EXPECT_THROW(parse_render_format("html"), ConfigError);
}

TEST(Render, DegradedReportsAreFlagged) {
    auto r = alzheimer_report();
    r.status = ReportStatus::Degraded;
    r.error = "LLM request timed out";
    r.completion_text.clear();
    for (auto& [k, v] : r.sections) v.clear();
    for (auto fmt_kind : {RenderFormat::Text, RenderFormat::Markdown}) {
        const auto out = render_report(r, fmt_kind);
        EXPECT_NE(out.find("DEGRADED REPORT"), std::string::npos);
        EXPECT_NE(out.find("LLM request timed out"), std::string::npos);
        EXPECT_NE(out.find("mild demented"), std::string::npos);
        EXPECT_NE(out.find(kReportDisclaimer), std::string::npos);
        EXPECT_NE(out.find("(not available: report generation failed)"), std::string::npos);
    }
}
