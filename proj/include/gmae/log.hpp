#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>

namespace gmae::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warn};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

template <typename... Args>
void write(Level level, const Args&... args) {
  if (level < threshold().load()) return;
  static std::mutex mutex;
  static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
  std::ostringstream oss;
  oss << "[gmae " << tags[static_cast<int>(level)] << "] ";
  (oss << ... << args);
  oss << '\n';
  std::lock_guard lock(mutex);
  std::clog << oss.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, args...); }

}  // namespace gmae::log
