#pragma once

#include <string>

namespace bao::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold parsed once from BAO_LOG_LEVEL (error|warn|info|debug or 0..3);
// default warn. Messages at or below the threshold go to stderr.
Level threshold();

void emit(Level level, const std::string& msg);

inline void error(const std::string& msg) { emit(Level::error, msg); }
inline void warn(const std::string& msg) { emit(Level::warn, msg); }
inline void info(const std::string& msg) { emit(Level::info, msg); }
inline void debug(const std::string& msg) { emit(Level::debug, msg); }

}  // namespace bao::log
