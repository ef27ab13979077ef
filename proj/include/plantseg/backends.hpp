#pragma once

// Backend ids to instances. Missing weights surface as BackendError naming
// the path that was tried and how to point elsewhere.

#include <filesystem>
#include <memory>
#include <string>

#include "plantseg/config.hpp"
#include "plantseg/encoder.hpp"
#include "plantseg/refiner.hpp"
#include "plantseg/vit.hpp"

namespace plantseg {

inline std::unique_ptr<Encoder> make_encoder(const std::string& id, const Config& config) {
  if (id == kEncoderSynthetic) {
    SyntheticEncoder::Options o;
    o.seed = config.seed;
    return std::make_unique<SyntheticEncoder>(o);
  }
  if (id == kEncoderPlantnet || id == kEncoderDinov2) {
    const auto dir = config.weights_for(id);
    if (!std::filesystem::exists(dir / "model.safetensors")) {
      throw BackendError("encoder '" + id + "': no weights at '" + (dir / "model.safetensors").string() +
                         "'; set " + Config::weights_env(id) + " or weights." + id +
                         " in the config (timm checkpoints: tools/convert_checkpoint.py)");
    }
    return std::make_unique<VitEncoder>(id, dir);
  }
  throw UsageError("unknown encoder '" + id + "' (expected plantnet-dinov2, dinov2-base or synthetic)");
}

inline std::unique_ptr<Refiner> make_refiner(const std::string& id, const Config& config) {
  if (id == kTrivialRefinerId) return std::make_unique<TrivialRefiner>();
  if (id == "sam2") {
    Sam2Options o;
    o.python = config.sam2_python;
    o.bridge_script = config.sam2_bridge;
    o.checkpoint = config.weights_for("sam2");
    o.model_config = config.sam2_model_config;
    o.device = config.sam2_device;
    return std::make_unique<Sam2BridgeRefiner>(o);
  }
  throw UsageError("unknown refiner '" + id + "' (expected sam2 or trivial)");
}

}  // namespace plantseg
