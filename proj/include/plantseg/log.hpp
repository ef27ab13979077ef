#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace plantseg {

/// Library-wide logger ("plantseg"), created on first use and writing to stderr.
inline std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("plantseg");
    if (existing) return existing;
    auto l = spdlog::stderr_color_mt("plantseg");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  return instance;
}

}  // namespace plantseg
