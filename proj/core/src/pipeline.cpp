#include "imagedx/pipeline.hpp"

#include "imagedx/errors.hpp"
#include "imagedx/hash.hpp"
#include "imagedx/log.hpp"

namespace imagedx {
namespace {

bool is_gateway_error(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingCredential:
        case ErrorKind::Timeout:
        case ErrorKind::RateLimited:
        case ErrorKind::RemoteError:
        case ErrorKind::EmptyCompletion:
            return true;
        default:
            return false;
    }
}

}  // namespace

std::string upload_ref(std::span<const std::uint8_t> image_bytes) { return "sha256:" + sha256_hex(image_bytes); }

DiagnosisReport diagnose(std::span<const std::uint8_t> image_bytes, const std::string& image_ref,
                         const TrainedModel& model, LlmGateway& gateway, ReportStore& store,
                         const DiagnoseOptions& options) {
    const auto image = preprocess_bytes(image_bytes, model.preprocess());
    const auto prediction = predict_label(model, image);
    const auto prompt = generate_prompt(prediction.label, options.prompt_template);

    DiagnosisReport report;
    report.created_at = utc_timestamp_now();
    report.image_ref = image_ref.empty() ? upload_ref(image_bytes) : image_ref;
    report.predicted_label = prediction.label;
    report.confidence = prediction.confidence;
    report.class_probabilities = prediction.probabilities.probs;
    report.prompt_text = prompt.text;
    report.template_version = prompt.template_version;
    report.model_artifact_id = model.artifact_id();
    report.llm_model_name = gateway.config().model_name;
    report.backend = gateway.config().backend;

    try {
        const auto completion = gateway.complete(prompt);
        report.completion_text = completion.text;
        report.llm_model_name = completion.model_name;
        auto split = split_sections(completion.text, prompt.required_sections);
        report.sections = std::move(split.sections);
        report.parse_warnings = std::move(split.warnings);
    } catch (const Error& e) {
        if (!options.allow_degraded || !is_gateway_error(e.kind())) throw;
        logger()->warn("language model failed ({}); storing degraded report", to_string(e.kind()));
        report.status = ReportStatus::Degraded;
        report.error = std::string(to_string(e.kind())) + ": " + e.what();
        report.completion_text.clear();
        report.sections.clear();
        for (auto s : kRequiredSections) report.sections[std::string(section_key(s))] = "";
        report.parse_warnings.push_back("completion unavailable");
    }

    check_report(report);
    store.persist(report);
    return report;
}

}  // namespace imagedx
