#pragma once

#include <memory>

#include <spdlog/logger.h>

namespace imagedx {

/// Library-wide logger ("imagedx"). Created lazily with a stderr sink.
std::shared_ptr<spdlog::logger> logger();

/// Replaces the library logger, e.g. to capture output in tests.
void set_logger(std::shared_ptr<spdlog::logger> replacement);

}  // namespace imagedx
