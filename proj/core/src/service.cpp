#include "imagedx/service.hpp"

#include <httplib.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/log.hpp"
#include "imagedx/metrics.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace imagedx {

int http_status_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::DecodeError:
        case ErrorKind::UnsupportedChannelCount:
        case ErrorKind::ShapeMismatch:
        case ErrorKind::ConfigError:
        case ErrorKind::MalformedLabel:
        case ErrorKind::UnknownLabel:
            return 400;
        case ErrorKind::NotFound:
            return 404;
        case ErrorKind::MissingCredential:
        case ErrorKind::Timeout:
        case ErrorKind::RateLimited:
        case ErrorKind::RemoteError:
        case ErrorKind::EmptyCompletion:
            return 502;
        default:
            return 500;
    }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
    send_json(res, status, json{{"error", {{"kind", kind}, {"message", message}}}});
}

json metrics_json(const MetricsFile& mf) {
    json values = json::object();
    for (const auto& [k, v] : mf.values) {
        if (k.starts_with("confusion_matrix.")) continue;
        values[k] = v;
    }
    json rows = json::array();
    for (std::size_t i = 0; i < mf.matrix.num_classes(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < mf.matrix.num_classes(); ++j) row.push_back(mf.matrix.at(i, j));
        rows.push_back(std::move(row));
    }
    return json{{"values", std::move(values)}, {"confusion_matrix", std::move(rows)}};
}

}  // namespace

struct DiagnosisService::Impl {
    std::shared_ptr<const TrainedModel> model;
    std::optional<fs::path> model_dir;
    std::shared_ptr<LlmGateway> gateway;
    std::shared_ptr<ReportStore> store;
    ServiceOptions options;
    httplib::Server server;

    void install_routes();
    void handle_diagnose(const httplib::Request& req, httplib::Response& res);
    void handle_report(const httplib::Request& req, httplib::Response& res);
    void handle_health(const httplib::Request& req, httplib::Response& res);
    void handle_model(httplib::Response& res);
};

void DiagnosisService::Impl::install_routes() {
    server.set_payload_max_length(options.max_upload_bytes);
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, http_status_for(e.kind()), to_string(e.kind()), e.what());
        } catch (const std::exception& e) {
            logger()->error("unhandled exception: {}", e.what());
            send_error(res, 500, "Internal", "internal error");
        }
    });
    server.Post("/v1/diagnose", [this](const httplib::Request& req, httplib::Response& res) {
        handle_diagnose(req, res);
    });
    server.Get(R"(/v1/reports/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
        handle_report(req, res);
    });
    server.Get("/v1/health", [this](const httplib::Request& req, httplib::Response& res) { handle_health(req, res); });
    server.Get("/v1/model", [this](const httplib::Request&, httplib::Response& res) { handle_model(res); });
}

void DiagnosisService::Impl::handle_diagnose(const httplib::Request& req, httplib::Response& res) {
    if (!model) {
        send_error(res, 503, "ModelNotLoaded", "no model is loaded");
        return;
    }
    std::string bytes;
    std::string image_ref;
    if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) {
            send_error(res, 400, "ConfigError", "multipart upload needs a field named 'image'");
            return;
        }
        const auto file = req.get_file_value("image");
        bytes = file.content;
    } else {
        bytes = req.body;
    }
    if (bytes.empty()) {
        send_error(res, 400, "DecodeError", "request carries no image bytes");
        return;
    }
    const std::span<const std::uint8_t> view(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
    DiagnoseOptions opts{options.allow_degraded, options.prompt_template};
    const auto report = diagnose(view, upload_ref(view), *model, *gateway, *store, opts);
    send_json(res, 200, report);
}

void DiagnosisService::Impl::handle_report(const httplib::Request& req, httplib::Response& res) {
    const auto report = store->get(req.matches[1].str());
    check_report(report);
    send_json(res, 200, report);
}

void DiagnosisService::Impl::handle_health(const httplib::Request& req, httplib::Response& res) {
    json body{{"status", model ? "ok" : "no_model"},
              {"model_loaded", static_cast<bool>(model)},
              {"model_artifact_id", model ? model->artifact_id() : ""},
              {"llm", {{"backend", to_string(gateway->config().backend)}, {"model", gateway->config().model_name}}},
              {"reports_stored", store->size()}};
    if (req.has_param("deep") && req.get_param_value("deep") != "0") {
        try {
            const auto h = gateway->healthcheck();
            body["llm"]["healthy"] = h.healthy;
            body["llm"]["detail"] = h.detail;
        } catch (const Error& e) {
            body["llm"]["healthy"] = false;
            body["llm"]["detail"] = fmt::format("{}: {}", to_string(e.kind()), e.what());
        }
    }
    send_json(res, model ? 200 : 503, body);
}

void DiagnosisService::Impl::handle_model(httplib::Response& res) {
    if (!model) {
        send_error(res, 503, "ModelNotLoaded", "no model is loaded");
        return;
    }
    json body;
    if (model_dir) {
        body["metadata"] = read_model_metadata(*model_dir);
        const auto metrics_path = *model_dir / "metrics.txt";
        if (fs::exists(metrics_path)) body["metrics"] = metrics_json(read_metrics_file(metrics_path));
    } else {
        body["metadata"] = json{{"artifact_id", model->artifact_id()}, {"training", model->metadata()}};
    }
    send_json(res, 200, body);
}

DiagnosisService::DiagnosisService(std::shared_ptr<const TrainedModel> model, std::optional<fs::path> model_dir,
                                   std::shared_ptr<LlmGateway> gateway, std::shared_ptr<ReportStore> store,
                                   ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
    if (!gateway || !store) throw ConfigError("service needs a gateway and a report store");
    impl_->model = std::move(model);
    impl_->model_dir = std::move(model_dir);
    impl_->gateway = std::move(gateway);
    impl_->store = std::move(store);
    impl_->options = std::move(options);
    impl_->install_routes();
}

DiagnosisService::~DiagnosisService() { stop(); }

int DiagnosisService::bind() {
    auto& o = impl_->options;
    int port = 0;
    if (o.port == 0) {
        port = impl_->server.bind_to_any_port(o.host);
    } else {
        port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
    }
    if (port < 0) throw ConfigError(fmt::format("cannot bind {}:{}", o.host, o.port));
    o.port = port;
    return port;
}

void DiagnosisService::run() {
    logger()->info("serving on http://{}:{}", impl_->options.host, impl_->options.port);
    impl_->server.listen_after_bind();
}

void DiagnosisService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void DiagnosisService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace imagedx
