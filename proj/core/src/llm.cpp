#include "imagedx/llm.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "imagedx/errors.hpp"
#include "imagedx/log.hpp"

using nlohmann::json;

namespace imagedx {
namespace {

struct FamilyText {
    std::string_view causes;
    std::string_view treatment;
    std::string_view follow_up;
};

struct NormalText {
    std::string_view causes;
    std::string_view treatment;
    std::string_view follow_up;
};

// Keyed by test name.
const std::map<std::string_view, FamilyText>& family_text() {
    static const std::map<std::string_view, FamilyText> table{
        {"cancer-test",
         {"Common contributing factors include smoking or second-hand smoke exposure, genetic predisposition and "
          "family history, hormonal factors, prior radiation exposure, and occupational carcinogens.",
          "Refer to an oncology team for staging. Depending on type and stage, options include surgical excision, "
          "chemotherapy, radiotherapy, targeted therapy or immunotherapy. Tissue biopsy is required to confirm the "
          "diagnosis before treatment.",
          "Schedule a specialist consultation promptly, complete staging imaging, and agree a surveillance plan "
          "with repeat imaging at intervals set by the treating team."}},
        {"alzheimer-test",
         {"Recognised contributors include age, genetic factors such as APOE e4, prior brain injury, and "
          "cardiovascular risk factors including smoking, high blood pressure and high cholesterol.",
          "Consult a neurologist. Cholinesterase inhibitors or memantine may be considered, together with good "
          "nutrition, regular exercise, cognitive therapy and management of vascular risk factors.",
          "Arrange regular follow-up sessions to monitor cognition and daily function, adjust medication, and "
          "support the patient's family and carers."}},
        {"tumor-test",
         {"Most primary brain tumours arise without a clear cause. Known risk factors include prior ionising "
          "radiation to the head, inherited syndromes such as neurofibromatosis, and age.",
          "Refer to neurosurgery and neuro-oncology. Management ranges from observation for small slow-growing "
          "lesions to surgical resection, radiotherapy, chemotherapy or hormonal therapy. Corticosteroids may "
          "reduce surrounding oedema.",
          "Obtain contrast-enhanced MRI as directed by the specialist team and schedule interval imaging to "
          "assess growth or treatment response."}},
        {"rential-oct-test",
         {"Retinal disease of this kind is associated with diabetes and poor blood sugar control, high blood "
          "pressure, high cholesterol, smoking and ageing of the retina.",
          "Consult an ophthalmologist. Anti-VEGF injections, laser photocoagulation or other retinal therapies may "
          "be indicated, together with control of blood sugar, blood pressure and cholesterol.",
          "Repeat OCT imaging and visual acuity testing at intervals set by the ophthalmologist; involve an "
          "endocrinologist where diabetes is present."}},
        {"pneumonia-test",
         {"Lung infection is caused by bacterial, viral or mycobacterial pathogens. Risk factors include "
          "smoking, weakened immunity, chronic lung disease, advanced age and close contact with infected people.",
          "Confirm the pathogen with laboratory testing. Treatment may include antibiotics, antivirals or a full "
          "anti-tuberculosis regimen as appropriate, with oxygen support, fluids and rest for symptomatic care.",
          "Review clinically within days, repeat chest imaging after treatment to confirm resolution, and follow "
          "local public health guidance for infectious conditions."}},
    };
    return table;
}

const NormalText& normal_text() {
    static const NormalText text{
        "No disease-specific cause applies because no abnormality was detected.",
        "No treatment is indicated on the basis of this image. Maintain a healthy lifestyle and continue any "
        "existing care plans.",
        "Continue routine screening at the interval recommended for the patient's age and risk profile, and seek "
        "review if new symptoms develop."};
    return text;
}

// One finding sentence per catalog label.
const std::map<std::string_view, std::string_view>& findings_text() {
    static const std::map<std::string_view, std::string_view> table{
        {"ct-scan.chest.cancer-test.adenocarcinoma",
         "Appearances are consistent with adenocarcinoma of the lung, a non-small cell lung cancer that usually "
         "arises in the peripheral airways."},
        {"ct-scan.chest.cancer-test.benign", "The chest lesion shows features of a benign process."},
        {"ct-scan.chest.cancer-test.large-cell-carcinoma",
         "Appearances are consistent with large cell carcinoma, an undifferentiated non-small cell lung cancer."},
        {"ct-scan.chest.cancer-test.malignant", "The chest lesion shows features suggesting malignancy."},
        {"ct-scan.chest.cancer-test.normal", "No suspicious pulmonary lesion is identified."},
        {"ct-scan.chest.cancer-test.squamous-cell-carcinoma",
         "Appearances are consistent with squamous cell carcinoma, a non-small cell lung cancer often arising in "
         "the central airways."},
        {"mri.brain.alzheimer-test.mild-demented",
         "Findings are consistent with mild dementia due to Alzheimer's disease, with early cognitive decline."},
        {"mri.brain.alzheimer-test.moderate-demented",
         "Findings are consistent with a moderate stage of Alzheimer's disease, suggesting considerable cognitive "
         "decline and functional disability."},
        {"mri.brain.alzheimer-test.non-demented", "No imaging features of Alzheimer's-type dementia are identified."},
        {"mri.brain.alzheimer-test.very-mild-demented",
         "Findings suggest very mild dementia, an early stage of Alzheimer's disease."},
        {"mri.brain.tumor-test.glioma-tumor",
         "Appearances are consistent with a glioma, a tumour arising from the glial cells of the brain."},
        {"mri.brain.tumor-test.meningioma-tumor",
         "Appearances are consistent with a meningioma, a usually slow-growing tumour of the meninges."},
        {"mri.brain.tumor-test.no-tumor", "No intracranial tumour is identified."},
        {"mri.brain.tumor-test.pituitary-tumor",
         "Appearances are consistent with a pituitary tumour, which may affect hormone production and vision."},
        {"oct-scan.rential.rential-oct-test.choroidal-neovascularization",
         "The OCT scan of the retina shows choroidal neovascularization, abnormal vessel growth beneath the retina."},
        {"oct-scan.rential.rential-oct-test.diabetic-macular-edema",
         "The OCT scan of the retina shows diabetic macular edema: fluid has accumulated in the macula, which can "
         "cause blurred vision or vision loss."},
        {"oct-scan.rential.rential-oct-test.multiple-drusen",
         "The OCT scan of the retina shows multiple drusen, deposits under the retina linked to macular "
         "degeneration."},
        {"oct-scan.rential.rential-oct-test.normal", "The OCT scan of the retina shows no abnormality."},
        {"ultrasound.breast.cancer-test.benign", "The breast ultrasound shows a lesion with benign features."},
        {"ultrasound.breast.cancer-test.malignant",
         "The breast ultrasound shows a lesion with features suspicious for malignancy."},
        {"ultrasound.breast.cancer-test.normal", "The breast ultrasound shows no suspicious lesion."},
        {"xray.chest.pneumonia-test.covid19",
         "The chest X-ray shows changes consistent with COVID-19 pneumonia."},
        {"xray.chest.pneumonia-test.normal", "The chest X-ray shows clear lung fields."},
        {"xray.chest.pneumonia-test.pneumonia", "The chest X-ray shows consolidation consistent with pneumonia."},
        {"xray.chest.pneumonia-test.turberculosis",
         "The chest X-ray shows changes consistent with pulmonary tuberculosis."},
    };
    return table;
}

bool is_normal_result(const HierarchicalLabel& label) {
    return label.result == "normal" || label.result == "non-demented" || label.result == "no-tumor";
}

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint_url must include a scheme: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported endpoint scheme '" + scheme + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string excerpt(const std::string& body, std::string_view secret) {
    auto text = redact(body, secret);
    if (text.size() > 300) text = text.substr(0, 300) + "...";
    return text;
}

std::unique_ptr<httplib::Client> make_client(const Endpoint& ep, const LlmConfig& cfg) {
    auto client = std::make_unique<httplib::Client>(ep.base);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg.timeout_seconds));
    const auto sec = static_cast<time_t>(timeout.count() / 1000000);
    const auto usec = static_cast<time_t>(timeout.count() % 1000000);
    client->set_connection_timeout(sec, usec);
    client->set_read_timeout(sec, usec);
    client->set_write_timeout(sec, usec);
    return client;
}

bool is_timeout(httplib::Error err) {
    return err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read || err == httplib::Error::Write;
}

}  // namespace

std::string_view to_string(LlmBackend backend) noexcept { return backend == LlmBackend::Mock ? "mock" : "remote"; }

LlmBackend parse_backend(std::string_view text) {
    if (text == "mock") return LlmBackend::Mock;
    if (text == "remote") return LlmBackend::Remote;
    throw ConfigError(fmt::format("unknown LLM backend '{}' (expected mock or remote)", text));
}

void LlmConfig::validate() const {
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (max_output_tokens < 1) throw ConfigError("max_output_tokens must be >= 1");
    if (!(timeout_seconds > 0.0)) throw ConfigError("timeout must be positive");
    if (backoff_base_seconds < 0.0 || backoff_max_seconds < backoff_base_seconds) {
        throw ConfigError("backoff bounds are inconsistent");
    }
    if (model_name.empty()) throw ConfigError("model_name must not be empty");
    if (backend == LlmBackend::Remote) {
        if (endpoint_url.empty()) throw ConfigError("remote backend requires endpoint_url");
        split_url(endpoint_url);
    }
}

void to_json(json& j, const LlmConfig& cfg) {
    j = json{{"backend", to_string(cfg.backend)},
             {"model_name", cfg.model_name},
             {"endpoint_url", cfg.endpoint_url},
             {"temperature", cfg.temperature},
             {"max_output_tokens", cfg.max_output_tokens},
             {"timeout_seconds", cfg.timeout_seconds},
             {"max_retries", cfg.max_retries},
             {"max_in_flight", cfg.max_in_flight}};
}

std::string mock_completion(const DiagnosisPrompt& prompt, std::string_view model_name) {
    const auto& label = prompt.source_label;
    const auto key = format_label(label);
    const auto finding = findings_text().find(key);
    const auto family = family_text().find(label.test_name);
    if (finding == findings_text().end() || family == family_text().end()) {
        throw UnknownLabel("mock backend has no text for '" + key + "'");
    }
    const bool normal = is_normal_result(label);
    const auto& causes = normal ? normal_text().causes : family->second.causes;
    const auto& treatment = normal ? normal_text().treatment : family->second.treatment;
    const auto& follow_up = normal ? normal_text().follow_up : family->second.follow_up;

    return fmt::format(
        "## {}\n"
        "Imaging study: {} of the {} region, {}. Result: {}.\n"
        "{}\n\n"
        "## {}\n{}\n\n"
        "## {}\n{}\n\n"
        "## {}\n{}\n"
        "These findings must be confirmed by a specialist. Offline reference text for {}.\n",
        section_heading(ReportSection::FindingsSummary), humanize_token(label.scan_name, LabelField::Scan),
        humanize_token(label.body_part, LabelField::BodyPart), humanize_token(label.test_name, LabelField::Test),
        humanize_token(label.result, LabelField::Result), finding->second,
        section_heading(ReportSection::PossibleCauses), causes,
        section_heading(ReportSection::PrescriptionsTreatment), treatment, section_heading(ReportSection::FollowUp),
        follow_up, model_name);
}

std::string redact(std::string_view text, std::string_view secret) {
    std::string out(text);
    if (secret.empty()) return out;
    constexpr std::string_view kMask = "[REDACTED]";
    for (auto pos = out.find(secret); pos != std::string::npos; pos = out.find(secret, pos + kMask.size())) {
        out.replace(pos, secret.size(), kMask);
    }
    return out;
}

class LlmGateway::Slot {
public:
    explicit Slot(LlmGateway& g) : g_(g) {
        std::unique_lock lock(g_.mutex_);
        g_.slot_freed_.wait(lock, [this] { return g_.in_flight_ < g_.config_.max_in_flight; });
        ++g_.in_flight_;
        g_.peak_in_flight_ = std::max(g_.peak_in_flight_, g_.in_flight_);
    }
    ~Slot() {
        {
            std::lock_guard lock(g_.mutex_);
            --g_.in_flight_;
        }
        g_.slot_freed_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

private:
    LlmGateway& g_;
};

LlmGateway::LlmGateway(LlmConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)), jitter_rng_(std::random_device{}()) {
    config_.validate();
    if (!sleeper_) {
        sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
    }
}

int LlmGateway::peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_in_flight_;
}

std::string LlmGateway::credential() const {
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') {
        throw MissingCredential(fmt::format("remote LLM backend requires the {} environment variable", kApiKeyEnv));
    }
    return key;
}

double LlmGateway::next_delay(int retry, double previous, std::optional<double> retry_after) {
    // base * 2^(retry-1) * (1 + U[0, 0.25)), capped
    double jitter = 0.0;
    {
        std::lock_guard lock(mutex_);
        jitter = std::uniform_real_distribution<double>(0.0, 0.25)(jitter_rng_);
    }
    double delay = config_.backoff_base_seconds * std::ldexp(1.0, retry - 1) * (1.0 + jitter);
    if (retry_after) delay = std::max(delay, *retry_after);
    delay = std::min(delay, config_.backoff_max_seconds);
    return std::max(delay, previous);
}

Completion LlmGateway::complete(const DiagnosisPrompt& prompt) {
    const auto started = std::chrono::steady_clock::now();
    if (config_.backend == LlmBackend::Mock) {
        Completion c;
        c.text = mock_completion(prompt, config_.model_name);
        c.model_name = config_.model_name;
        c.latency_seconds = 0.0;
        return c;
    }

    const auto key = credential();
    const auto endpoint = split_url(config_.endpoint_url);
    const json request{{"model", config_.model_name},
                       {"messages",
                        json::array({json{{"role", "system"}, {"content", config_.system_message}},
                                     json{{"role", "user"}, {"content", prompt.text}}})},
                       {"temperature", config_.temperature},
                       {"max_tokens", config_.max_output_tokens}};
    const auto body = request.dump();
    const httplib::Headers headers{{"Authorization", "Bearer " + key}};

    Completion result;
    double previous_delay = 0.0;
    for (int attempt = 1;; ++attempt) {
        result.attempt_count = attempt;
        const bool last = attempt > config_.max_retries;
        std::optional<double> retry_after;
        std::string failure;
        ErrorKind failure_kind = ErrorKind::RemoteError;
        {
            Slot slot(*this);
            auto client = make_client(endpoint, config_);
            logger()->debug("llm request attempt {} to {}{}", attempt, endpoint.base, endpoint.path);
            auto res = client->Post(endpoint.path, headers, body, "application/json");
            if (!res) {
                const auto err = res.error();
                if (!is_timeout(err)) {
                    throw RemoteError(fmt::format("LLM endpoint {} unreachable: {}", endpoint.base,
                                                  httplib::to_string(err)));
                }
                failure_kind = ErrorKind::Timeout;
                failure = fmt::format("LLM request timed out ({})", httplib::to_string(err));
            } else if (res->status == 200) {
                json doc;
                try {
                    doc = json::parse(res->body);
                } catch (const json::exception&) {
                    throw RemoteError("LLM response is not JSON: " + excerpt(res->body, key));
                }
                std::string text;
                if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
                    const auto& msg = doc["choices"][0].value("message", json::object());
                    if (msg.contains("content") && msg["content"].is_string()) text = msg["content"].get<std::string>();
                }
                if (text.empty()) throw EmptyCompletion("LLM returned no completion text");
                result.text = std::move(text);
                result.model_name = doc.value("model", config_.model_name);
                if (doc.contains("usage") && doc["usage"].is_object()) {
                    const auto& u = doc["usage"];
                    result.usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0),
                                              u.value("total_tokens", 0)};
                }
                result.latency_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
                return result;
            } else if (res->status == 429 || res->status >= 500) {
                failure_kind = res->status == 429 ? ErrorKind::RateLimited : ErrorKind::RemoteError;
                failure = fmt::format("LLM endpoint returned HTTP {}: {}", res->status, excerpt(res->body, key));
                if (res->has_header("Retry-After")) {
                    try {
                        retry_after = std::stod(res->get_header_value("Retry-After"));
                    } catch (const std::exception&) {
                    }
                }
            } else {
                throw RemoteError(
                    fmt::format("LLM endpoint returned HTTP {}: {}", res->status, excerpt(res->body, key)));
            }
        }

        logger()->warn("{} (attempt {} of {})", redact(failure, key), attempt, config_.max_retries + 1);
        if (last) {
            if (failure_kind == ErrorKind::Timeout) throw Timeout(failure);
            if (failure_kind == ErrorKind::RateLimited) throw RateLimited(failure + " (retries exhausted)");
            throw RemoteError(failure + " (retries exhausted)");
        }
        previous_delay = next_delay(attempt, previous_delay, retry_after);
        result.backoff_delays.push_back(previous_delay);
        sleeper_(std::chrono::duration<double>(previous_delay));
    }
}

HealthStatus LlmGateway::healthcheck() {
    if (config_.backend == LlmBackend::Mock) {
        return {true, "mock backend"};
    }
    const auto key = credential();
    auto endpoint = split_url(config_.endpoint_url);
    auto path = endpoint.path;
    if (const auto pos = path.rfind("/chat/completions"); pos != std::string::npos) {
        path = path.substr(0, pos) + "/models";
    }
    Slot slot(*this);
    auto client = make_client(endpoint, config_);
    auto res = client->Get(path, httplib::Headers{{"Authorization", "Bearer " + key}});
    if (!res) {
        const auto err = res.error();
        if (is_timeout(err)) throw Timeout("LLM healthcheck timed out");
        throw RemoteError(fmt::format("LLM endpoint {} unreachable: {}", endpoint.base, httplib::to_string(err)));
    }
    if (res->status == 429) throw RateLimited("LLM healthcheck rate limited");
    if (res->status != 200) {
        throw RemoteError(fmt::format("LLM healthcheck returned HTTP {}: {}", res->status, excerpt(res->body, key)));
    }
    return {true, fmt::format("{} reachable", endpoint.base)};
}

Completion complete(const DiagnosisPrompt& prompt, const LlmConfig& config) {
    LlmGateway gateway(config);
    return gateway.complete(prompt);
}

}  // namespace imagedx
