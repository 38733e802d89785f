// imagedx command-line front end.

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "imagedx/dataset.hpp"
#include "imagedx/errors.hpp"
#include "imagedx/fixture.hpp"
#include "imagedx/image.hpp"
#include "imagedx/log.hpp"
#include "imagedx/model.hpp"
#include "imagedx/pipeline.hpp"
#include "imagedx/report.hpp"
#include "imagedx/service.hpp"
#include "imagedx/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace imagedx;

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigError:
        case ErrorKind::MalformedLabel:
        case ErrorKind::UnknownLabel:
            return 2;
        case ErrorKind::DiskError:
        case ErrorKind::NotFound:
        case ErrorKind::MissingSplitDirectory:
        case ErrorKind::EmptyDataset:
        case ErrorKind::DecodeError:
        case ErrorKind::UnsupportedChannelCount:
            return 3;
        case ErrorKind::MissingCredential:
        case ErrorKind::Timeout:
        case ErrorKind::RateLimited:
        case ErrorKind::RemoteError:
        case ErrorKind::EmptyCompletion:
            return 4;
        default:
            return 1;
    }
}

json read_json_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DiskError("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", file.string(), e.what()));
    }
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DiskError("cannot write " + file.string());
    out << text;
    if (!out) throw DiskError("write failed: " + file.string());
}

struct LlmArgs {
    std::string backend = "mock";
    std::string model;
    std::string endpoint;
    double timeout = 0.0;
    int retries = -1;
    int max_in_flight = 0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--llm", backend, "Language model backend")->check(CLI::IsMember({"mock", "remote"}));
        cmd->add_option("--llm-model", model, "Remote model name");
        cmd->add_option("--llm-endpoint", endpoint, "Chat-completions URL");
        cmd->add_option("--llm-timeout", timeout, "Per-request timeout in seconds");
        cmd->add_option("--llm-retries", retries, "Retries on timeout, 429 and 5xx");
        cmd->add_option("--llm-max-in-flight", max_in_flight, "Concurrent request bound");
    }

    LlmConfig config() const {
        LlmConfig cfg;
        cfg.backend = parse_backend(backend);
        if (!model.empty()) cfg.model_name = model;
        if (cfg.backend == LlmBackend::Mock && model.empty()) cfg.model_name = "mock";
        if (!endpoint.empty()) cfg.endpoint_url = endpoint;
        if (timeout > 0.0) cfg.timeout_seconds = timeout;
        if (retries >= 0) cfg.max_retries = retries;
        if (max_in_flight > 0) cfg.max_in_flight = max_in_flight;
        cfg.validate();
        return cfg;
    }
};

PromptTemplate load_template(const std::string& path) {
    return path.empty() ? PromptTemplate::builtin() : PromptTemplate::from_file(path);
}

int print_validation(const ValidationReport& report) {
    fmt::print("{:<66} {:>7} {:>7}\n", "label", "train", "val");
    for (const auto& [label, c] : report.per_label) fmt::print("{:<66} {:>7} {:>7}\n", label, c.train, c.val);
    fmt::print("{:<66} {:>7} {:>7}\n", "total", report.train_total, report.val_total);
    for (const auto& l : report.unknown_labels) fmt::print("unknown label: {}\n", l);
    for (const auto& p : report.missing_files) fmt::print("missing file: {}\n", p.string());
    for (const auto& p : report.duplicates) fmt::print("duplicate: {}\n", p.string());
    for (const auto& m : report.count_mismatches) fmt::print("count mismatch: {}\n", m);
    fmt::print("{}\n", report.passed() ? "PASSED" : "FAILED");
    return report.passed() ? 0 : 1;
}

DiagnosisService* g_service = nullptr;

extern "C" void on_signal(int) {
    if (g_service != nullptr) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imagedx: medical image classification and diagnosis reports"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // dataset
    auto* dataset = app.add_subcommand("dataset", "Dataset manifests and fixtures");
    dataset->require_subcommand(1);

    std::string scan_root, scan_out;
    auto* scan = dataset->add_subcommand("scan", "Build a manifest from root/{train,val}/<label>/");
    scan->add_option("--root", scan_root, "Dataset root")->required();
    scan->add_option("--out", scan_out, "Manifest file")->required();

    std::string validate_manifest_path;
    std::optional<double> validate_scale;
    std::size_t uniform_train = 0, uniform_val = 0;
    auto* validate = dataset->add_subcommand("validate", "Check a manifest and print per-label counts");
    validate->add_option("--manifest", validate_manifest_path, "Manifest file")->required();
    validate->add_option("--expect-scale", validate_scale, "Compare against the reference table scaled by S");
    auto* uniform_opt = validate->add_option("--expect-uniform", uniform_train, "Expect N train images per class");
    validate->add_option("--expect-uniform-val", uniform_val, "Expect N val images per class")->needs(uniform_opt);

    std::string fixture_root;
    FixtureOptions fixture_opts;
    std::optional<std::size_t> fixture_train, fixture_val;
    auto* fixture = dataset->add_subcommand("fixture", "Write a synthetic placeholder dataset");
    fixture->add_option("--root", fixture_root, "Output root")->required();
    fixture->add_option("--scale", fixture_opts.scale, "Scale of the reference per-label counts");
    fixture->add_option("--per-class-train", fixture_train, "Uniform train count per class");
    fixture->add_option("--per-class-val", fixture_val, "Uniform val count per class");
    fixture->add_option("--size", fixture_opts.image_size, "Image side in pixels");
    fixture->add_option("--seed", fixture_opts.seed, "Noise seed");

    // train
    std::string train_manifest, train_config, train_out;
    std::optional<std::uint64_t> train_seed;
    auto* train_cmd = app.add_subcommand("train", "Train a classifier");
    train_cmd->add_option("--manifest", train_manifest, "Manifest file")->required();
    train_cmd->add_option("--config", train_config, "JSON with architecture/preprocess/training sections");
    train_cmd->add_option("--out", train_out, "Model artifact directory")->required();
    train_cmd->add_option("--seed", train_seed, "Overrides training.seed");

    // eval
    std::string eval_manifest, eval_model, eval_out, eval_split = "val", eval_avg = "weighted";
    bool eval_attach = false;
    std::size_t eval_workers = 1;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on one split");
    eval_cmd->add_option("--manifest", eval_manifest, "Manifest file")->required();
    eval_cmd->add_option("--model", eval_model, "Model artifact directory")->required();
    eval_cmd->add_option("--out", eval_out, "Metrics file")->required();
    eval_cmd->add_option("--split", eval_split, "train or val")->check(CLI::IsMember({"train", "val"}));
    eval_cmd->add_option("--averaging", eval_avg, "Headline averaging")->check(CLI::IsMember({"weighted", "macro"}));
    eval_cmd->add_option("--workers", eval_workers, "Inference threads");
    eval_cmd->add_flag("--attach", eval_attach, "Also copy the metrics into the model directory");

    // diagnose
    std::string diag_image, diag_model, diag_out, diag_store = "reports", diag_template, diag_format = "json";
    bool diag_strict = false;
    LlmArgs diag_llm;
    auto* diag_cmd = app.add_subcommand("diagnose", "Classify an image and write a diagnosis report");
    diag_cmd->add_option("--image", diag_image, "Image file")->required();
    diag_cmd->add_option("--model", diag_model, "Model artifact directory")->required();
    diag_cmd->add_option("--out", diag_out, "Also write the report here");
    diag_cmd->add_option("--store", diag_store, "Report store directory");
    diag_cmd->add_option("--prompt-template", diag_template, "Prompt template file");
    diag_cmd->add_option("--format", diag_format, "Output format")
        ->check(CLI::IsMember({"json", "text", "markdown"}));
    diag_cmd->add_flag("--no-degraded", diag_strict, "Fail instead of storing a degraded report");
    diag_llm.add_to(diag_cmd);

    // serve
    std::string serve_model, serve_store = "reports", serve_host = "127.0.0.1", serve_template;
    int serve_port = 8080;
    bool serve_strict = false;
    LlmArgs serve_llm;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    serve_cmd->add_option("--model", serve_model, "Model artifact directory");
    serve_cmd->add_option("--port", serve_port, "Listen port");
    serve_cmd->add_option("--host", serve_host, "Listen address");
    serve_cmd->add_option("--store", serve_store, "Report store directory");
    serve_cmd->add_option("--prompt-template", serve_template, "Prompt template file");
    serve_cmd->add_flag("--no-degraded", serve_strict, "Answer 502 instead of storing degraded reports");
    serve_llm.add_to(serve_cmd);

    // report get
    auto* report_cmd = app.add_subcommand("report", "Stored reports");
    report_cmd->require_subcommand(1);
    std::string get_id, get_format = "text", get_store = "reports";
    auto* get_cmd = report_cmd->add_subcommand("get", "Print a stored report");
    get_cmd->add_option("id", get_id, "Report id")->required();
    get_cmd->add_option("--format", get_format, "Rendering")->check(CLI::IsMember({"text", "markdown", "json"}));
    get_cmd->add_option("--store", get_store, "Report store directory");

    CLI11_PARSE(app, argc, argv);
    logger()->set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (scan->parsed()) {
            const auto manifest = scan_directory(fs::absolute(scan_root));
            write_manifest(manifest, scan_out);
            fmt::print("{} entries written to {}\n", manifest.entries.size(), scan_out);
            return 0;
        }
        if (validate->parsed()) {
            const auto manifest = read_manifest(validate_manifest_path);
            auto report = validate_manifest(manifest);
            if (validate_scale) compare_counts(report, scaled_reference_counts(*validate_scale));
            if (*uniform_opt) compare_counts(report, uniform_counts(uniform_train, uniform_val));
            return print_validation(report);
        }
        if (fixture->parsed()) {
            if (fixture_train || fixture_val) {
                fixture_opts.counts = uniform_counts(fixture_train.value_or(1), fixture_val.value_or(1));
            }
            const auto summary = generate_fixture(fixture_root, fixture_opts);
            fmt::print("fixture at {}: {} train / {} val images\n", summary.root.string(), summary.train_total,
                       summary.val_total);
            return 0;
        }
        if (train_cmd->parsed()) {
            json cfg = train_config.empty() ? json::object() : read_json_file(train_config);
            const auto arch = cfg.value("architecture", json::object()).get<DenseNetConfig>();
            const auto pre = cfg.value("preprocess", json::object()).get<PreprocessConfig>();
            auto tcfg = cfg.value("training", json::object()).get<TrainingConfig>();
            if (train_seed) tcfg.seed = *train_seed;
            const auto manifest = read_manifest(train_manifest);
            auto result = train(arch, pre, manifest, tcfg);
            save_model(result.model, train_out);
            write_text(fs::path(train_out) / "history.json", json(result.history).dump(2) + "\n");
            fmt::print("model {} saved to {}\n", result.model.artifact_id(), train_out);
            return 0;
        }
        if (eval_cmd->parsed()) {
            const auto model = load_model(eval_model);
            const auto manifest = read_manifest(eval_manifest);
            const auto averaging = eval_avg == "macro" ? Averaging::Macro : Averaging::Weighted;
            const auto result = evaluate(model, manifest, parse_split(eval_split), averaging, 16, eval_workers);
            write_metrics_file(result.metrics, result.confusion, eval_split, eval_out);
            if (eval_attach) write_metrics_file(result.metrics, result.confusion, eval_split,
                                                fs::path(eval_model) / "metrics.txt");
            fmt::print("{} samples  loss {:.4f}  accuracy {:.4f}  precision {:.4f}  recall {:.4f}  f1 {:.4f}\n",
                       result.metrics.samples, result.metrics.loss, result.metrics.accuracy,
                       result.metrics.precision, result.metrics.recall, result.metrics.f1);
            return 0;
        }
        if (diag_cmd->parsed()) {
            const auto model = load_model(diag_model);
            LlmGateway gateway(diag_llm.config());
            ReportStore store(diag_store);
            const auto bytes = read_file_bytes(diag_image);
            DiagnoseOptions opts{!diag_strict, load_template(diag_template)};
            const auto report = diagnose(bytes, diag_image, model, gateway, store, opts);
            std::string rendered = diag_format == "json"
                                       ? json(report).dump(2) + "\n"
                                       : render_report(report, parse_render_format(diag_format));
            if (!diag_out.empty()) write_text(diag_out, rendered);
            std::cout << rendered;
            return report.status == ReportStatus::Ok ? 0 : 5;
        }
        if (serve_cmd->parsed()) {
            std::shared_ptr<const TrainedModel> model;
            std::optional<fs::path> model_dir;
            if (!serve_model.empty()) {
                model = std::make_shared<TrainedModel>(load_model(serve_model));
                model_dir = serve_model;
            }
            auto gateway = std::make_shared<LlmGateway>(serve_llm.config());
            auto store = std::make_shared<ReportStore>(serve_store);
            ServiceOptions opts;
            opts.host = serve_host;
            opts.port = serve_port;
            opts.allow_degraded = !serve_strict;
            opts.prompt_template = load_template(serve_template);
            DiagnosisService service(model, model_dir, gateway, store, opts);
            const int port = service.bind();
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            fmt::print("listening on http://{}:{}\n", serve_host, port);
            std::fflush(stdout);
            service.run();
            g_service = nullptr;
            return 0;
        }
        if (get_cmd->parsed()) {
            ReportStore store(get_store);
            const auto report = store.get(get_id);
            if (get_format == "json") {
                std::cout << json(report).dump(2) << '\n';
            } else {
                std::cout << render_report(report, parse_render_format(get_format));
            }
            return 0;
        }
    } catch (const Error& e) {
        logger()->error("{}: {}", to_string(e.kind()), e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        logger()->error("{}", e.what());
        return 1;
    }
    return 0;
}
