#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "imagedx/prompt.hpp"

namespace imagedx {

enum class LlmBackend { Mock, Remote };

std::string_view to_string(LlmBackend backend) noexcept;
LlmBackend parse_backend(std::string_view text);  // ConfigError

inline constexpr const char* kApiKeyEnv = "IMAGEDX_LLM_API_KEY";

struct LlmConfig {
    LlmBackend backend = LlmBackend::Mock;
    std::string model_name = "gpt-3.5-turbo";
    /// Full chat-completions URL of an OpenAI-compatible service.
    std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
    double temperature = 0.2;
    int max_output_tokens = 800;
    double timeout_seconds = 30.0;
    int max_retries = 3;
    int max_in_flight = 4;
    double backoff_base_seconds = 0.5;
    double backoff_max_seconds = 8.0;
    std::string system_message =
        "You are a careful clinical reporting assistant. You write structured diagnosis reports from "
        "imaging classifier results to support, not replace, a qualified clinician.";

    void validate() const;  // ConfigError
};

void to_json(nlohmann::json& j, const LlmConfig& cfg);

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int total_tokens = 0;
};

struct Completion {
    std::string text;
    std::string model_name;
    double latency_seconds = 0.0;
    std::optional<TokenUsage> usage;
    int attempt_count = 1;
    /// Delay slept before each retry, in seconds.
    std::vector<double> backoff_delays;
};

struct HealthStatus {
    bool healthy = false;
    std::string detail;
};

/// Deterministic offline completion: canned clinical text keyed by the
/// prompt's label, carrying every required section heading.
std::string mock_completion(const DiagnosisPrompt& prompt, std::string_view model_name);

/// Replaces every occurrence of `secret` with "[REDACTED]".
std::string redact(std::string_view text, std::string_view secret);

/// Submits prompts to the configured backend. Thread-safe; at most
/// `max_in_flight` remote requests run at once.
class LlmGateway {
public:
    using Sleeper = std::function<void(std::chrono::duration<double>)>;

    explicit LlmGateway(LlmConfig config, Sleeper sleeper = {});

    const LlmConfig& config() const noexcept { return config_; }

    /// Throws MissingCredential, Timeout, RateLimited, RemoteError,
    /// EmptyCompletion.
    Completion complete(const DiagnosisPrompt& prompt);

    /// Mock: always healthy. Remote: lists models to check credential and
    /// reachability; throws like complete().
    HealthStatus healthcheck();

    /// Largest number of concurrent remote requests observed.
    int peak_in_flight() const;

private:
    class Slot;

    std::string credential() const;
    double next_delay(int retry, double previous, std::optional<double> retry_after);

    LlmConfig config_;
    Sleeper sleeper_;
    mutable std::mutex mutex_;
    std::condition_variable slot_freed_;
    int in_flight_ = 0;
    int peak_in_flight_ = 0;
    std::mt19937_64 jitter_rng_;
};

/// One-shot convenience wrapper.
Completion complete(const DiagnosisPrompt& prompt, const LlmConfig& config);

}  // namespace imagedx
