#include <fstream>

#include <gtest/gtest.h>

#include "imagedx/dataset.hpp"
#include "imagedx/errors.hpp"
#include "imagedx/fixture.hpp"
#include "imagedx/image.hpp"
#include "support.hpp"

using namespace imagedx;
using imagedx::testing::TempDir;
namespace fs = std::filesystem;

namespace {

void write_png(const fs::path& file, int side = 8, std::uint8_t value = 128) {
    fs::create_directories(file.parent_path());
    std::vector<std::uint8_t> px(static_cast<std::size_t>(side) * side, value);
    const auto bytes = encode_png_gray(px, side, side);
    std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(ScanDirectory, SingleFile) {
    TempDir d;
    write_png(d / "train/mri.brain.tumor-test.no-tumor/img1.png");
    fs::create_directories(d / "val");
    const auto m = scan_directory(d.path());
    ASSERT_EQ(m.entries.size(), 1u);
    EXPECT_EQ(m.entries[0].split, Split::Train);
    EXPECT_EQ(format_label(m.entries[0].label), "mri.brain.tumor-test.no-tumor");
    EXPECT_EQ(m.entries[0].image_path, d / "train/mri.brain.tumor-test.no-tumor/img1.png");
}

TEST(ScanDirectory, Errors) {
    {
        TempDir d;
        fs::create_directories(d / "train");
        EXPECT_THROW(scan_directory(d.path()), MissingSplitDirectory);
    }
    {
        TempDir d;
        write_png(d / "train/mri.brain/img.png");
        fs::create_directories(d / "val");
        EXPECT_THROW(scan_directory(d.path()), MalformedLabel);
    }
    {
        TempDir d;
        fs::create_directories(d / "train");
        fs::create_directories(d / "val");
        EXPECT_THROW(scan_directory(d.path()), EmptyDataset);
    }
}

TEST(ScanDirectory, SortedAndDeterministic) {
    TempDir d;
    write_png(d / "val/xray.chest.pneumonia-test.normal/b.png");
    write_png(d / "train/xray.chest.pneumonia-test.normal/z.png");
    write_png(d / "train/xray.chest.pneumonia-test.normal/a.png");
    write_png(d / "train/ct-scan.chest.cancer-test.benign/q.png");
    const auto m1 = scan_directory(d.path());
    const auto m2 = scan_directory(d.path());
    ASSERT_EQ(m1.entries, m2.entries);
    for (std::size_t i = 1; i < m1.entries.size(); ++i) {
        EXPECT_LT(m1.entries[i - 1].image_path, m1.entries[i].image_path);
    }
}

TEST(ValidateManifest, ReportsProblems) {
    TempDir d;
    write_png(d / "train/xray.chest.pneumonia-test.normal/a.png");
    write_png(d / "val/xray.chest.pneumonia-test.normal/b.png");
    auto m = scan_directory(d.path());
    EXPECT_TRUE(validate_manifest(m).passed());

    m.entries.push_back({d / "train/xray.chest.pneumonia-test.normal/missing.png",
                         parse_label("xray.chest.pneumonia-test.normal"), Split::Train});
    m.entries.push_back(m.entries[0]);
    m.entries.push_back({d / "train/x.png", parse_label("mri.brain.tumor-test.unknown-thing"), Split::Train});
    const auto r = validate_manifest(m);
    EXPECT_FALSE(r.passed());
    ASSERT_GE(r.missing_files.size(), 1u);
    EXPECT_EQ(r.missing_files[0].filename(), "missing.png");
    EXPECT_EQ(r.duplicates.size(), 1u);
    EXPECT_EQ(r.unknown_labels.size(), 1u);
    EXPECT_EQ(r.per_label.size(), 25u);
}

TEST(ClassDistribution, EmptyManifestIsAllZero) {
    DatasetManifest m;
    const auto dist = class_distribution(m, Split::Val);
    ASSERT_EQ(dist.size(), 25u);
    for (const auto& [label, n] : dist) EXPECT_EQ(n, 0u) << label;
}

TEST(ScaledCounts, RoundsWithFloorOfOne) {
    const auto one = scaled_reference_counts(0.01);
    ASSERT_EQ(one.size(), 25u);
    // ct-scan.chest.cancer-test.benign: 96 / 24 -> round(0.96)=1, round(0.24)=0 -> floor 1
    EXPECT_EQ(one[1].train, 1u);
    EXPECT_EQ(one[1].val, 1u);
    // choroidal-neovascularization: 29,964 -> 300
    EXPECT_EQ(one[14].label, "oct-scan.rential.rential-oct-test.choroidal-neovascularization");
    EXPECT_EQ(one[14].train, 300u);
    const auto full = scaled_reference_counts(1.0);
    for (std::size_t i = 0; i < 25; ++i) {
        EXPECT_EQ(full[i].train, reference_counts()[i].train);
        EXPECT_EQ(full[i].val, reference_counts()[i].val);
    }
}

TEST(Fixture, ScaledFixtureValidatesAgainstScaledCounts) {
    TempDir d;
    FixtureOptions o;
    o.scale = 0.005;
    o.image_size = 16;
    const auto summary = generate_fixture(d.path(), o);
    const auto m = scan_directory(d.path());
    auto r = validate_manifest(m);
    compare_counts(r, scaled_reference_counts(0.005));
    EXPECT_TRUE(r.passed()) << (r.count_mismatches.empty() ? "" : r.count_mismatches.front());
    EXPECT_EQ(r.train_total, summary.train_total);
    EXPECT_EQ(r.val_total, summary.val_total);

    auto wrong = validate_manifest(m);
    compare_counts(wrong, scaled_reference_counts(0.01));
    EXPECT_FALSE(wrong.passed());

    const auto val = class_distribution(m, Split::Val);
    EXPECT_EQ(val.at("ultrasound.breast.cancer-test.normal"), scaled_reference_counts(0.005)[20].val);
}

TEST(Fixture, ClassesLookDifferent) {
    const auto a = render_class_image(0, 0, 32, 0.0f, 1);
    const auto b = render_class_image(1, 0, 32, 0.0f, 1);
    EXPECT_EQ(a.size(), 32u * 32u);
    EXPECT_NE(a, b);
    EXPECT_EQ(render_class_image(3, 2, 32, 0.05f, 9), render_class_image(3, 2, 32, 0.05f, 9));
}

TEST(Manifest, FileRoundTrip) {
    TempDir d;
    FixtureOptions o;
    o.counts = uniform_counts(2, 1);
    o.image_size = 8;
    generate_fixture(d / "data", o);
    const auto m = scan_directory(d / "data");
    write_manifest(m, d / "manifest.tsv");
    const auto back = read_manifest(d / "manifest.tsv");
    EXPECT_EQ(back.entries, m.entries);
    EXPECT_EQ(back.root, m.root);
    EXPECT_EQ(std::chrono::floor<std::chrono::seconds>(back.created_at),
              std::chrono::floor<std::chrono::seconds>(m.created_at));

    // Records are path<TAB>label<TAB>split with paths relative to the root.
    std::ifstream in(d / "manifest.tsv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# imagedx-manifest v1");
    while (std::getline(in, line) && line.starts_with("#")) {
    }
    EXPECT_EQ(line, "train/ct-scan.chest.cancer-test.adenocarcinoma/img_000000.png\t"
                    "ct-scan.chest.cancer-test.adenocarcinoma\ttrain");
}

TEST(Manifest, RejectsBadRecord) {
    TempDir d;
    imagedx::testing::write_text(d / "m.tsv", "# imagedx-manifest v1\nonly-two\tfields\n");
    EXPECT_THROW(read_manifest(d / "m.tsv"), ConfigError);
    imagedx::testing::write_text(d / "m2.tsv", "a.png\tmri.brain\ttrain\n");
    EXPECT_THROW(read_manifest(d / "m2.tsv"), MalformedLabel);
}

TEST(LoadSample, ShapeAndNormalisation) {
    TempDir d;
    write_png(d / "train/mri.brain.tumor-test.no-tumor/a.png", 64, 51);
    const SampleEntry e{d / "train/mri.brain.tumor-test.no-tumor/a.png",
                        parse_label("mri.brain.tumor-test.no-tumor"), Split::Train};
    const auto t = load_sample(e, PreprocessConfig{});
    EXPECT_EQ(t.height, 224);
    EXPECT_EQ(t.width, 224);
    EXPECT_EQ(t.channels, 3);

    PreprocessConfig identity;
    identity.mean = {0.2f, 0.2f, 0.2f};
    identity.std = {1.0f, 1.0f, 1.0f};
    const auto z = load_sample(e, identity);
    for (float v : z.values) ASSERT_NEAR(v, 0.0f, 1e-6f);
}
