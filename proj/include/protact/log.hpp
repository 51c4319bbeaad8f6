#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace protact {

enum class LogLevel : int { quiet = 0, warn = 1, info = 2 };

inline std::atomic<int>& log_level() {
  static std::atomic<int> level{static_cast<int>(LogLevel::warn)};
  return level;
}

inline void set_log_level(LogLevel level) { log_level() = static_cast<int>(level); }

inline void log_warn(std::string_view msg) {
  if (log_level() >= static_cast<int>(LogLevel::warn)) std::cerr << "[warn] " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (log_level() >= static_cast<int>(LogLevel::info)) std::cerr << "[info] " << msg << '\n';
}

}  // namespace protact
