#include <atomic>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/image.hpp"
#include "imagedx/metrics.hpp"
#include "imagedx/service.hpp"
#include "support.hpp"

using namespace imagedx;
using imagedx::testing::ScopedEnv;
using imagedx::testing::StubLlm;
using imagedx::testing::StubReply;
using imagedx::testing::TempDir;
using nlohmann::json;

namespace {

const std::string kPneumonia = "xray.chest.pneumonia-test.pneumonia";

struct Running {
    TempDir dir;
    std::shared_ptr<ReportStore> store;
    std::unique_ptr<DiagnosisService> service;
    std::thread thread;
    int port = 0;

    Running(std::shared_ptr<const TrainedModel> model, std::optional<std::filesystem::path> model_dir,
            LlmConfig llm = {}, bool allow_degraded = true) {
        store = std::make_shared<ReportStore>(dir / "reports");
        ServiceOptions opts;
        opts.port = 0;
        opts.allow_degraded = allow_degraded;
        service = std::make_unique<DiagnosisService>(std::move(model), std::move(model_dir),
                                                     std::make_shared<LlmGateway>(llm, [](auto) {}), store, opts);
        port = service->bind();
        thread = std::thread([this] { service->run(); });
        service->wait_until_ready();
    }
    ~Running() {
        service->stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30, 0);
        return c;
    }
};

std::shared_ptr<const TrainedModel> shared_model() {
    static auto model = std::shared_ptr<const TrainedModel>(
        std::make_shared<TrainedModel>(load_model(imagedx::testing::overfit_bundle().model_dir)));
    return model;
}

std::string pneumonia_body() {
    const auto bytes = read_file_bytes(imagedx::testing::fixture_image(kPneumonia));
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace

TEST(HttpStatus, Mapping) {
    EXPECT_EQ(http_status_for(ErrorKind::DecodeError), 400);
    EXPECT_EQ(http_status_for(ErrorKind::UnsupportedChannelCount), 400);
    EXPECT_EQ(http_status_for(ErrorKind::ShapeMismatch), 400);
    EXPECT_EQ(http_status_for(ErrorKind::NotFound), 404);
    EXPECT_EQ(http_status_for(ErrorKind::RemoteError), 502);
    EXPECT_EQ(http_status_for(ErrorKind::Timeout), 502);
    EXPECT_EQ(http_status_for(ErrorKind::MissingCredential), 502);
    EXPECT_EQ(http_status_for(ErrorKind::DiskError), 500);
}

TEST(Service, DiagnoseRawBodyThenFetchReport) {
    Running srv(shared_model(), imagedx::testing::overfit_bundle().model_dir);
    auto cli = srv.client();
    auto res = cli.Post("/v1/diagnose", pneumonia_body(), "image/png");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto report = json::parse(res->body).get<DiagnosisReport>();
    EXPECT_EQ(format_label(report.predicted_label), kPneumonia);
    EXPECT_EQ(report.status, ReportStatus::Ok);
    EXPECT_EQ(report.disclaimer, kReportDisclaimer);
    EXPECT_TRUE(report.image_ref.starts_with("sha256:"));

    auto fetched = cli.Get("/v1/reports/" + report.report_id);
    ASSERT_TRUE(fetched);
    ASSERT_EQ(fetched->status, 200);
    EXPECT_EQ(json::parse(fetched->body).get<DiagnosisReport>(), report);

    auto missing = cli.Get("/v1/reports/00000000000000000000000000000000");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body)["error"]["kind"], "NotFound");
}

TEST(Service, MultipartUpload) {
    Running srv(shared_model(), std::nullopt);
    auto cli = srv.client();
    httplib::MultipartFormDataItems items{{"image", pneumonia_body(), "scan.png", "image/png"}};
    auto res = cli.Post("/v1/diagnose", items);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(json::parse(res->body)["predicted_label"], kPneumonia);

    httplib::MultipartFormDataItems wrong{{"file", pneumonia_body(), "scan.png", "image/png"}};
    auto bad = cli.Post("/v1/diagnose", wrong);
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
}

TEST(Service, BadImagesAre400) {
    Running srv(shared_model(), std::nullopt);
    auto cli = srv.client();
    auto junk = cli.Post("/v1/diagnose", "definitely not an image", "application/octet-stream");
    ASSERT_TRUE(junk);
    EXPECT_EQ(junk->status, 400);
    EXPECT_EQ(json::parse(junk->body)["error"]["kind"], "DecodeError");
    auto empty = cli.Post("/v1/diagnose", "", "image/png");
    ASSERT_TRUE(empty);
    EXPECT_EQ(empty->status, 400);

    std::vector<std::uint8_t> rgba(8 * 8 * 4, 200);
    const auto png = encode_png(rgba, 8, 8, 4);
    auto alpha = cli.Post("/v1/diagnose", std::string(png.begin(), png.end()), "image/png");
    ASSERT_TRUE(alpha);
    EXPECT_EQ(alpha->status, 400);
    EXPECT_EQ(json::parse(alpha->body)["error"]["kind"], "UnsupportedChannelCount");
    EXPECT_EQ(srv.store->size(), 0u);
}

TEST(Service, NoModelLoaded) {
    Running srv(nullptr, std::nullopt);
    auto cli = srv.client();
    auto res = cli.Post("/v1/diagnose", pneumonia_body(), "image/png");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
    auto health = cli.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 503);
    EXPECT_FALSE(json::parse(health->body)["model_loaded"].get<bool>());
    auto model = cli.Get("/v1/model");
    ASSERT_TRUE(model);
    EXPECT_EQ(model->status, 503);
}

TEST(Service, GatewayFailureStrictIs502DegradedIs200) {
    ScopedEnv env(kApiKeyEnv, "sk-service");
    StubLlm stub({StubReply::error(500)});
    {
        Running strict(shared_model(), std::nullopt, imagedx::testing::stub_llm_config(stub.url()), false);
        auto cli = strict.client();
        auto res = cli.Post("/v1/diagnose", pneumonia_body(), "image/png");
        ASSERT_TRUE(res);
        EXPECT_EQ(res->status, 502);
        EXPECT_EQ(json::parse(res->body)["error"]["kind"], "RemoteError");
        EXPECT_EQ(strict.store->size(), 0u);
    }
    {
        Running lenient(shared_model(), std::nullopt, imagedx::testing::stub_llm_config(stub.url()), true);
        auto cli = lenient.client();
        auto res = cli.Post("/v1/diagnose", pneumonia_body(), "image/png");
        ASSERT_TRUE(res);
        EXPECT_EQ(res->status, 200);
        const auto body = json::parse(res->body);
        EXPECT_EQ(body["status"], "degraded");
        EXPECT_EQ(body["predicted_label"], kPneumonia);
        EXPECT_EQ(body["disclaimer"], kReportDisclaimer);
    }
}

TEST(Service, HealthAndModelEndpoints) {
    const auto& bundle = imagedx::testing::overfit_bundle();
    TempDir copy;
    std::filesystem::copy(bundle.model_dir, copy / "model");
    const auto eval_cm = [&] {
        ConfusionMatrix cm;
        for (std::size_t c = 0; c < kNumClasses; ++c) cm.add(c, c);
        return cm;
    }();
    write_metrics_file(metrics_from_confusion(eval_cm), eval_cm, "val", copy / "model" / "metrics.txt");

    Running srv(shared_model(), copy / "model");
    auto cli = srv.client();
    auto health = cli.Get("/v1/health?deep=1");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    const auto h = json::parse(health->body);
    EXPECT_EQ(h["model_artifact_id"], bundle.model->artifact_id());
    EXPECT_TRUE(h["llm"]["healthy"].get<bool>());

    auto model = cli.Get("/v1/model");
    ASSERT_TRUE(model);
    ASSERT_EQ(model->status, 200);
    const auto m = json::parse(model->body);
    EXPECT_EQ(m["metadata"]["artifact_id"], bundle.model->artifact_id());
    EXPECT_EQ(m["metrics"]["values"]["accuracy"], "1.000000");
    EXPECT_EQ(m["metrics"]["confusion_matrix"].size(), kNumClasses);
}

TEST(Service, ConcurrentRequests) {
    Running srv(shared_model(), std::nullopt);
    const auto body = pneumonia_body();
    std::vector<std::thread> threads;
    std::vector<std::string> ids(12);
    std::atomic<int> ok{0};
    for (int i = 0; i < 12; ++i) {
        threads.emplace_back([&, i] {
            auto cli = srv.client();
            auto res = cli.Post("/v1/diagnose", body, "image/png");
            if (res && res->status == 200) {
                const auto j = json::parse(res->body);
                if (j["predicted_label"] == kPneumonia) ++ok;
                ids[i] = j["report_id"].get<std::string>();
            }
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok.load(), 12);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 12u);
    EXPECT_EQ(srv.store->size(), 12u);
}
