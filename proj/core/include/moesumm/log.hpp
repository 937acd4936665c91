#pragma once

// Thin logging front end. Level comes from MOESUMM_LOG (error|info|debug),
// default info. Output goes to stderr.

#include <spdlog/spdlog.h>

namespace moesumm {

/// Reads MOESUMM_LOG once; safe to call repeatedly.
void init_logging();

template <typename... Args>
void log_info(fmt::format_string<Args...> fmt, Args&&... args) {
  init_logging();
  spdlog::info(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void log_debug(fmt::format_string<Args...> fmt, Args&&... args) {
  init_logging();
  spdlog::debug(fmt, std::forward<Args>(args)...);
}

template <typename... Args>
void log_warn(fmt::format_string<Args...> fmt, Args&&... args) {
  init_logging();
  spdlog::warn(fmt, std::forward<Args>(args)...);
}

}  // namespace moesumm
