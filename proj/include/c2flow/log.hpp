#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace c2flow {

// Logger writing to stderr; level from C2FLOW_LOG (error|warn|info|debug),
// default warn.
inline spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> logger = [] {
        auto l = std::make_shared<spdlog::logger>("c2flow", std::make_shared<spdlog::sinks::stderr_sink_mt>());
        l->set_pattern("[%l] %v");
        auto level = spdlog::level::warn;
        if (const char* env = std::getenv("C2FLOW_LOG")) {
            const std::string v(env);
            if (v == "error") level = spdlog::level::err;
            else if (v == "warn") level = spdlog::level::warn;
            else if (v == "info") level = spdlog::level::info;
            else if (v == "debug") level = spdlog::level::debug;
        }
        l->set_level(level);
        return l;
    }();
    return *logger;
}

}  // namespace c2flow
