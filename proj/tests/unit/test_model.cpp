#include <fstream>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/fixture.hpp"
#include "imagedx/image.hpp"
#include "imagedx/model.hpp"
#include "support.hpp"

using namespace imagedx;
using imagedx::testing::TempDir;
using nlohmann::json;

namespace {

std::vector<ImageTensor> probe_images(int count, int side) {
    std::vector<ImageTensor> out;
    PreprocessConfig pre = imagedx::testing::tiny_preprocess(side);
    for (int i = 0; i < count; ++i) {
        const auto px = render_class_image(static_cast<std::size_t>(i) % kNumClasses, static_cast<std::uint64_t>(i),
                                           side, 0.05f, 3);
        out.push_back(preprocess_bytes(encode_png_gray(px, side, side), pre));
    }
    return out;
}

std::vector<const ImageTensor*> pointers(const std::vector<ImageTensor>& v) {
    std::vector<const ImageTensor*> p;
    for (const auto& t : v) p.push_back(&t);
    return p;
}

}  // namespace

TEST(TrainedModel, RejectsInconsistentConfig) {
    auto cfg = imagedx::testing::tiny_config();
    cfg.num_classes = 2;
    EXPECT_THROW(TrainedModel(cfg, imagedx::testing::tiny_preprocess(), 1), ConfigError);
    EXPECT_THROW(TrainedModel(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(64), 1), ConfigError);
}

TEST(Predict, ProbabilityContract) {
    TrainedModel model(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 5);
    const auto images = probe_images(3, 32);
    for (const auto& img : images) {
        const auto p = predict(model, img);
        ASSERT_EQ(p.probs.size(), 25u);
        EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-5);
        for (double q : p.probs) EXPECT_GE(q, 0.0);
        EXPECT_EQ(predict(model, img).probs, p.probs);
        const auto l = predict_label(model, img);
        EXPECT_EQ(l.confidence, *std::max_element(p.probs.begin(), p.probs.end()));
        EXPECT_EQ(l.label, catalog().label_at(l.class_index));
    }
    ImageTensor wrong;
    wrong.height = 16;
    wrong.width = 16;
    wrong.channels = 3;
    wrong.values.assign(16 * 16 * 3, 0.0f);
    EXPECT_THROW(predict(model, wrong), ShapeMismatch);
}

TEST(Predict, ArgmaxAndTieBreak) {
    std::vector<double> p(25, 0.01);
    p[12] = 0.5;
    EXPECT_EQ(argmax(p), 12u);
    p[12] = 0.01;
    p[3] = 0.3;
    p[7] = 0.3;
    EXPECT_EQ(argmax(p), 3u);

    TrainedModel model(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 5);
    std::vector<double> q(25, 0.0);
    q[12] = 1.0;
    const auto l = label_from_probabilities(model, ClassProbabilities{q});
    EXPECT_EQ(format_label(l.label), format_label(catalog().label_at(12)));
    EXPECT_EQ(l.confidence, 1.0);
}

TEST(ModelArtifact, RoundTripGivesIdenticalPredictions) {
    TempDir d;
    TrainedModel model(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 21);
    model.metadata().epochs_completed = 3;
    save_model(model, d / "m");
    EXPECT_EQ(model.artifact_id().size(), 16u);
    EXPECT_TRUE(std::filesystem::exists(d / "m/model.json"));
    EXPECT_TRUE(std::filesystem::exists(d / "m/params.bin"));

    const auto loaded = load_model(d / "m");
    EXPECT_EQ(loaded.artifact_id(), model.artifact_id());
    EXPECT_EQ(loaded.spec(), model.spec());
    EXPECT_EQ(loaded.preprocess(), model.preprocess());
    EXPECT_EQ(loaded.catalog_snapshot(), catalog().strings());
    EXPECT_EQ(loaded.metadata().epochs_completed, 3);

    const auto images = probe_images(16, 32);
    const auto ptrs = pointers(images);
    const auto a = predict_batch(model, ptrs);
    const auto b = predict_batch(loaded, ptrs);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < 25; ++k) max_diff = std::max(max_diff, std::abs(a[i].probs[k] - b[i].probs[k]));
    EXPECT_LE(max_diff, 1e-6);

    // saving the same weights twice yields the same id
    save_model(model, d / "m2");
    EXPECT_EQ(load_model(d / "m2").artifact_id(), model.artifact_id());
}

TEST(ModelArtifact, MetadataDocument) {
    TempDir d;
    TrainedModel model(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 21);
    save_model(model, d.path());
    const auto doc = read_model_metadata(d.path());
    EXPECT_EQ(doc.at("format"), "imagedx-model");
    EXPECT_EQ(doc.at("schema_version"), 1);
    EXPECT_EQ(doc.at("catalog").size(), 25u);
    EXPECT_EQ(doc.at("artifact_id"), model.artifact_id());
    EXPECT_EQ(doc.at("training").at("optimizer"), "Adam");
    EXPECT_EQ(doc.at("training").at("batch_size"), 16);
    EXPECT_EQ(doc.at("layer_plan").at("layers").back().at("out_channels"), 25);
}

TEST(ModelArtifact, DetectsTamperingAndMixing) {
    TempDir d;
    TrainedModel a(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 1);
    TrainedModel b(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 2);
    save_model(a, d / "a");
    save_model(b, d / "b");

    // params from another artifact
    std::filesystem::copy_file(d / "b/params.bin", d / "a/params.bin",
                               std::filesystem::copy_options::overwrite_existing);
    EXPECT_THROW(load_model(d / "a"), ConfigError);

    // edited metadata
    auto doc = imagedx::testing::read_json(d / "b/model.json");
    doc["training"]["epochs"] = 7;
    imagedx::testing::write_text(d / "b/model.json", doc.dump());
    EXPECT_THROW(load_model(d / "b"), ConfigError);

    doc["schema_version"] = 99;
    imagedx::testing::write_text(d / "b/model.json", doc.dump());
    EXPECT_THROW(load_model(d / "b"), ConfigError);

    EXPECT_THROW(load_model(d / "missing"), DiskError);
}

TEST(ModelArtifact, PretrainedTrunkSkipsClassifier) {
    TempDir d;
    TrainedModel src(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 1);
    save_model(src, d.path());
    TrainedModel dst(imagedx::testing::tiny_config(), imagedx::testing::tiny_preprocess(), 2);
    std::map<std::string, std::vector<float>> before;
    dst.network().visit([&](const std::string& n, const nn::Parameter& p) { before[n] = p.value; });
    const auto copied = load_pretrained_trunk(dst, d.path());

    std::size_t total = 0;
    std::map<std::string, std::vector<float>> source;
    src.network().visit([&](const std::string& n, const nn::Parameter& p) {
        source[n] = p.value;
        ++total;
    });
    EXPECT_EQ(copied, total - 2);
    dst.network().visit([&](const std::string& n, const nn::Parameter& p) {
        if (n.starts_with("classifier.")) {
            EXPECT_EQ(p.value, before[n]) << n;
        } else {
            EXPECT_EQ(p.value, source[n]) << n;
        }
    });
    EXPECT_EQ(dst.metadata().initialization, "pretrained:" + src.artifact_id());
}
