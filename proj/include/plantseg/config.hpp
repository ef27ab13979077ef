#pragma once

// Run configuration: one JSON file (all keys optional) with environment
// overrides for weight locations, and the manifest written next to every
// run's artifacts.
//
//   {
//     "seed": 0,
//     "workers": 1,
//     "cache_dir": ".plantseg-cache",
//     "datasets": {"phenobench": "/data/phenobench", ...},
//     "weights": {"plantnet-dinov2": "weights/plantnet-dinov2",
//                 "dinov2-base": "weights/dinov2-base",
//                 "sam2": "weights/sam2.1_hiera_large.pt"},
//     "sam2": {"python": "python3", "bridge": "tools/sam2_bridge.py",
//              "model_config": "configs/sam2.1/sam2.1_hiera_l.yaml",
//              "device": "cpu"}
//   }

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "plantseg/error.hpp"

#ifndef PLANTSEG_VERSION
#define PLANTSEG_VERSION "0.1.0"
#endif
#ifndef PLANTSEG_SOURCE_DIR
#define PLANTSEG_SOURCE_DIR "."
#endif

namespace plantseg {

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

struct Config {
  std::uint64_t seed = 0;
  int workers = 1;
  std::filesystem::path cache_dir = ".plantseg-cache";
  std::map<std::string, std::filesystem::path> datasets;
  std::map<std::string, std::filesystem::path> weights;
  std::string sam2_python = "python3";
  std::filesystem::path sam2_bridge = std::filesystem::path(PLANTSEG_SOURCE_DIR) / "tools" / "sam2_bridge.py";
  std::string sam2_model_config = "configs/sam2.1/sam2.1_hiera_l.yaml";
  std::string sam2_device = "cpu";
  std::filesystem::path source;  // file the config came from, empty for defaults

  /// Environment variable overriding the weights of `backend`.
  static const char* weights_env(const std::string& backend) {
    if (backend == "plantnet-dinov2") return "PLANTSEG_PLANTNET_WEIGHTS";
    if (backend == "dinov2-base") return "PLANTSEG_DINOV2_WEIGHTS";
    if (backend == "sam2") return "PLANTSEG_SAM2_CHECKPOINT";
    return nullptr;
  }

  /// Weight location for `backend`: environment, then config, then weights/<id>.
  std::filesystem::path weights_for(const std::string& backend) const {
    if (const char* var = weights_env(backend))
      if (auto v = env(var)) return *v;
    if (auto it = weights.find(backend); it != weights.end()) return it->second;
    return std::filesystem::path("weights") / (backend == "sam2" ? "sam2.1_hiera_large.pt" : backend);
  }

  /// Dataset root: config entry, then $PLANTSEG_DATA_ROOT/<id>, then data/<id>.
  std::filesystem::path dataset_root(const std::string& id) const {
    if (auto it = datasets.find(id); it != datasets.end()) return it->second;
    if (auto v = env("PLANTSEG_DATA_ROOT")) return std::filesystem::path(*v) / id;
    return std::filesystem::path("data") / id;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["workers"] = workers;
    j["cache_dir"] = cache_dir.string();
    for (const auto& [k, v] : datasets) j["datasets"][k] = v.string();
    for (const char* b : {"plantnet-dinov2", "dinov2-base", "sam2"}) j["weights"][b] = weights_for(b).string();
    j["sam2"] = {{"python", sam2_python},
                 {"bridge", sam2_bridge.string()},
                 {"model_config", sam2_model_config},
                 {"device", sam2_device}};
    return j;
  }
};

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  try {
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.cache_dir = j.value("cache_dir", c.cache_dir.string());
    if (j.contains("datasets"))
      for (const auto& [k, v] : j["datasets"].items()) c.datasets[k] = v.get<std::string>();
    if (j.contains("weights"))
      for (const auto& [k, v] : j["weights"].items()) c.weights[k] = v.get<std::string>();
    if (j.contains("sam2")) {
      const auto& s = j["sam2"];
      c.sam2_python = s.value("python", c.sam2_python);
      c.sam2_bridge = s.value("bridge", c.sam2_bridge.string());
      c.sam2_model_config = s.value("model_config", c.sam2_model_config);
      c.sam2_device = s.value("device", c.sam2_device);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.workers < 1) throw UsageError("config: workers must be >= 1");
  if (auto v = env("PLANTSEG_CACHE_DIR")) c.cache_dir = *v;
  if (auto v = env("PLANTSEG_SAM2_BRIDGE")) c.sam2_bridge = *v;
  return c;
}

/// Loads `path`; an empty path gives defaults plus environment overrides.
inline Config load_config(const std::filesystem::path& path) {
  if (path.empty()) return config_from_json(nlohmann::json::object());
  std::ifstream in(path);
  if (!in) throw UsageError("config file '" + path.string() + "' not found");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file '" + path.string() + "': " + e.what());
  }
  Config c = config_from_json(j);
  c.source = path;
  return c;
}

/// Run manifest: everything needed to reproduce an artifact directory.
inline nlohmann::json make_manifest(const std::string& command, const nlohmann::json& args, const Config& config) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"command", command},
          {"arguments", args},
          {"config", config.to_json()},
          {"config_file", config.source.string()},
          {"seed", config.seed},
          {"version", PLANTSEG_VERSION},
          {"created", stamp}};
}

inline void write_manifest(const std::filesystem::path& dir, const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
}

}  // namespace plantseg
