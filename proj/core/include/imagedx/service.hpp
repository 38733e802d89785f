#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "imagedx/errors.hpp"
#include "imagedx/llm.hpp"
#include "imagedx/model.hpp"
#include "imagedx/pipeline.hpp"
#include "imagedx/report.hpp"

namespace imagedx {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    bool allow_degraded = true;
    PromptTemplate prompt_template = PromptTemplate::builtin();
    /// Upper bound on accepted upload size.
    std::size_t max_upload_bytes = 32u << 20;
};

/// HTTP front end:
///   POST /v1/diagnose       raw image body or multipart field "image"
///   GET  /v1/reports/{id}
///   GET  /v1/health         ?deep=1 also probes the language model
///   GET  /v1/model          artifact metadata plus attached metrics
class DiagnosisService {
public:
    /// `model` may be null; diagnosis and model requests then answer 503.
    DiagnosisService(std::shared_ptr<const TrainedModel> model, std::optional<std::filesystem::path> model_dir,
                     std::shared_ptr<LlmGateway> gateway, std::shared_ptr<ReportStore> store,
                     ServiceOptions options = {});
    ~DiagnosisService();

    DiagnosisService(const DiagnosisService&) = delete;
    DiagnosisService& operator=(const DiagnosisService&) = delete;

    /// Binds the listening socket; returns the bound port. Throws ConfigError.
    int bind();
    /// Serves until stop(); call after bind().
    void run();
    void stop();
    /// Blocks until the server accepts connections.
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// HTTP status for a library error raised while serving a request.
int http_status_for(ErrorKind kind) noexcept;

}  // namespace imagedx
