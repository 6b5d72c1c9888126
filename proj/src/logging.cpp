#include "bao/logging.hpp"

#include <cstdlib>
#include <iostream>

namespace bao::log {

namespace {
Level parse_level() {
    const char* env = std::getenv("BAO_LOG_LEVEL");
    if (!env) return Level::warn;
    const std::string v(env);
    if (v == "error" || v == "0") return Level::error;
    if (v == "warn" || v == "1") return Level::warn;
    if (v == "info" || v == "2") return Level::info;
    if (v == "debug" || v == "3") return Level::debug;
    return Level::warn;
}
}  // namespace

Level threshold() {
    static const Level level = parse_level();
    return level;
}

void emit(Level level, const std::string& msg) {
    if (level > threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[bao:" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace bao::log
