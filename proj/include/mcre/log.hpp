#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace mcre {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* v = std::getenv("MCRE_LOG_LEVEL");
        if (!v) return LogLevel::warn;
        std::string s(v);
        if (s == "error") return LogLevel::error;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) <= static_cast<int>(log_level())) {
        static const char* names[] = {"error", "warn", "info", "debug"};
        std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
    }
}

}  // namespace mcre
