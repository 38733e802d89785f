#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "imagedx/llm.hpp"
#include "imagedx/model.hpp"
#include "imagedx/prompt.hpp"
#include "imagedx/report.hpp"

namespace imagedx {

struct DiagnoseOptions {
    /// On gateway failure, persist and return a degraded report instead of
    /// rethrowing.
    bool allow_degraded = true;
    PromptTemplate prompt_template = PromptTemplate::builtin();
};

/// Image bytes to persisted report. Throws DecodeError,
/// UnsupportedChannelCount and ShapeMismatch before anything is stored;
/// gateway errors propagate only when degraded reports are disabled.
DiagnosisReport diagnose(std::span<const std::uint8_t> image_bytes, const std::string& image_ref,
                         const TrainedModel& model, LlmGateway& gateway, ReportStore& store,
                         const DiagnoseOptions& options = {});

/// Reference for uploads without a path: "sha256:<digest>".
std::string upload_ref(std::span<const std::uint8_t> image_bytes);

}  // namespace imagedx
