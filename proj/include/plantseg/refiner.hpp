#pragma once

// Promptable refinement of box prompts into pixel masks. Backends: a trivial
// rasteriser used for weight-free testing, and SAM2 driven through a Python
// subprocess speaking JSON lines.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/process.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/error.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/log.hpp"
#include "plantseg/maskops.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

inline constexpr const char* kTrivialRefinerId = "trivial";
inline constexpr const char* kSam2RefinerId = "sam2";

class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual std::string id() const = 0;
  /// Backend details recorded alongside results (checkpoint, candidate policy).
  virtual nlohmann::json metadata() const { return {{"backend", id()}}; }

  /// Runs the backend once per prompt and unions the masks. The result has the
  /// padded image's size; no prompts gives an all-false raster.
  cv::Mat refine(const cv::Mat& padded_rgb, std::span<const BoxPrompt> prompts,
                 const CoarseMask* coarse = nullptr) {
    require_rgb(padded_rgb, "refine");
    cv::Mat out = make_mask(padded_rgb.rows, padded_rgb.cols);
    if (prompts.empty()) return out;
    for (const auto& p : prompts) {
      const auto& b = p.box;
      if (b.x_min < 0 || b.y_min < 0 || b.x_max >= padded_rgb.cols || b.y_max >= padded_rgb.rows ||
          b.x_min > b.x_max || b.y_min > b.y_max) {
        throw DataError("refine: box (" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) +
                        ")-(" + std::to_string(b.x_max) + "," + std::to_string(b.y_max) +
                        ") lies outside the " + std::to_string(padded_rgb.cols) + "x" +
                        std::to_string(padded_rgb.rows) + " image");
      }
    }
    begin_image(padded_rgb);
    for (const auto& p : prompts) {
      cv::Mat m = refine_one(padded_rgb, p, coarse);
      if (m.size() != out.size() || m.type() != CV_8UC1) {
        throw BackendError(id() + ": backend returned a mask of the wrong shape");
      }
      for (int r = 0; r < out.rows; ++r) {
        const auto* in = m.ptr<std::uint8_t>(r);
        auto* o = out.ptr<std::uint8_t>(r);
        for (int c = 0; c < out.cols; ++c) o[c] |= in[c] ? 1 : 0;
      }
    }
    return out;
  }

 protected:
  virtual void begin_image(const cv::Mat&) {}
  virtual cv::Mat refine_one(const cv::Mat& padded_rgb, const BoxPrompt& prompt,
                             const CoarseMask* coarse) = 0;
};

/// Box rectangle, intersected with the upsampled coarse mask when one is given.
class TrivialRefiner final : public Refiner {
 public:
  std::string id() const override { return kTrivialRefinerId; }

 protected:
  cv::Mat refine_one(const cv::Mat& padded_rgb, const BoxPrompt& prompt,
                     const CoarseMask* coarse) override {
    cv::Mat m = make_mask(padded_rgb.rows, padded_rgb.cols);
    const auto& b = prompt.box;
    m(cv::Rect(b.x_min, b.y_min, b.x_max - b.x_min + 1, b.y_max - b.y_min + 1)).setTo(1);
    if (coarse) {
      if (coarse_cache_.empty() || coarse_cache_.size() != m.size() || coarse_source_ != coarse) {
        coarse_cache_ = upsample_coarse(*coarse, m.rows, m.cols);
        coarse_source_ = coarse;
      }
      cv::bitwise_and(m, coarse_cache_, m);
    }
    return m;
  }

  void begin_image(const cv::Mat&) override {
    coarse_cache_.release();
    coarse_source_ = nullptr;
  }

 private:
  cv::Mat coarse_cache_;
  const CoarseMask* coarse_source_ = nullptr;
};

struct Sam2Options {
  std::filesystem::path python = "python3";
  std::filesystem::path bridge_script;  // tools/sam2_bridge.py
  std::filesystem::path checkpoint;
  std::string model_config = "configs/sam2.1/sam2.1_hiera_l.yaml";
  std::string device = "cpu";
  bool multimask = true;
};

/// SAM2 in a persistent child process. Images and masks travel through raw
/// files in a private temp directory; control messages are JSON lines.
class Sam2BridgeRefiner final : public Refiner {
 public:
  explicit Sam2BridgeRefiner(Sam2Options opts) : opts_(std::move(opts)) {
    if (opts_.bridge_script.empty() || !std::filesystem::exists(opts_.bridge_script)) {
      throw BackendError("sam2: bridge script not found at '" + opts_.bridge_script.string() +
                         "' (set PLANTSEG_SAM2_BRIDGE)");
    }
    if (opts_.checkpoint.empty() || !std::filesystem::exists(opts_.checkpoint)) {
      throw BackendError("sam2: checkpoint not found at '" + opts_.checkpoint.string() +
                         "'; download a SAM2 checkpoint and pass --sam2-checkpoint or set "
                         "PLANTSEG_SAM2_CHECKPOINT");
    }
    static std::atomic<int> counter{0};
    scratch_ = std::filesystem::temp_directory_path() /
               ("plantseg-sam2-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(scratch_);
    namespace bp = boost::process;
    const auto python = opts_.python.has_parent_path() ? opts_.python.string()
                                                       : bp::search_path(opts_.python.string()).string();
    if (python.empty()) throw BackendError("sam2: python interpreter '" + opts_.python.string() + "' not found");
    child_ = std::make_unique<bp::child>(python, "-u", opts_.bridge_script.string(),
                                         bp::std_in < to_child_, bp::std_out > from_child_);
    auto reply = call({{"op", "load"},
                       {"checkpoint", opts_.checkpoint.string()},
                       {"config", opts_.model_config},
                       {"device", opts_.device},
                       {"multimask", opts_.multimask}});
    model_info_ = reply.value("model", nlohmann::json::object());
  }

  ~Sam2BridgeRefiner() override {
    try {
      if (child_ && child_->running()) {
        to_child_ << nlohmann::json{{"op", "shutdown"}}.dump() << std::endl;
        to_child_.pipe().close();
        child_->wait();
      }
    } catch (...) {
    }
    std::error_code ec;
    std::filesystem::remove_all(scratch_, ec);
  }

  std::string id() const override { return kSam2RefinerId; }

  nlohmann::json metadata() const override {
    return {{"backend", id()},
            {"checkpoint", opts_.checkpoint.string()},
            {"model_config", opts_.model_config},
            {"multimask_output", opts_.multimask},
            {"candidate_selection", opts_.multimask ? "highest-score" : "single"},
            {"model", model_info_}};
  }

  /// Scores and candidate indices chosen for each prompt since construction.
  const std::vector<nlohmann::json>& decisions() const { return decisions_; }

 protected:
  void begin_image(const cv::Mat& padded_rgb) override {
    const auto path = scratch_ / "image.rgb";
    write_raw(path, padded_rgb);
    call({{"op", "set_image"}, {"path", path.string()}, {"height", padded_rgb.rows},
          {"width", padded_rgb.cols}});
    coarse_written_ = nullptr;
  }

  cv::Mat refine_one(const cv::Mat& padded_rgb, const BoxPrompt& prompt,
                     const CoarseMask* coarse) override {
    nlohmann::json req{{"op", "predict"},
                       // half-open pixel edges: inclusive max + 1
                       {"box", {prompt.box.x_min, prompt.box.y_min, prompt.box.x_max + 1, prompt.box.y_max + 1}},
                       {"output", (scratch_ / "mask.u8").string()},
                       {"mask_input", nullptr}};
    if (coarse) {
      const auto path = scratch_ / "coarse.f32";
      if (coarse_written_ != coarse) {
        write_raw(path, coarse_logits(*coarse));
        coarse_written_ = coarse;
      }
      req["mask_input"] = path.string();
    }
    auto reply = call(req);
    decisions_.push_back({{"score", reply.value("score", 0.0)},
                          {"candidate", reply.value("candidate", 0)},
                          {"num_candidates", reply.value("num_candidates", 1)}});
    cv::Mat m(padded_rgb.rows, padded_rgb.cols, CV_8UC1);
    std::ifstream in(scratch_ / "mask.u8", std::ios::binary);
    in.read(reinterpret_cast<char*>(m.data), static_cast<std::streamsize>(m.total()));
    if (in.gcount() != static_cast<std::streamsize>(m.total())) {
      throw BackendError("sam2: bridge wrote a truncated mask");
    }
    return nonzero_to_mask(m);
  }

 private:
  static void write_raw(const std::filesystem::path& path, const cv::Mat& m) {
    cv::Mat c = m.isContinuous() ? m : m.clone();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(c.data), static_cast<std::streamsize>(c.total() * c.elemSize()));
    if (!out) throw BackendError("sam2: cannot write " + path.string());
  }

  nlohmann::json call(const nlohmann::json& request) {
    if (!child_ || !child_->running()) throw BackendError("sam2: bridge process is not running");
    to_child_ << request.dump() << std::endl;
    std::string line;
    if (!std::getline(from_child_, line)) {
      throw BackendError("sam2: bridge exited during '" + request.value("op", std::string{}) + "'");
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw BackendError("sam2: unreadable bridge reply: " + line);
    }
    if (!reply.value("ok", false)) {
      const auto message = reply.value("error", std::string{"unknown error"});
      if (request.value("op", std::string{}) == "load") {
        throw BackendError("sam2: failed to load weights from '" + opts_.checkpoint.string() +
                           "': " + message);
      }
      throw BackendError("sam2: " + message);
    }
    return reply;
  }

  Sam2Options opts_;
  std::filesystem::path scratch_;
  boost::process::opstream to_child_;
  boost::process::ipstream from_child_;
  std::unique_ptr<boost::process::child> child_;
  nlohmann::json model_info_;
  std::vector<nlohmann::json> decisions_;
  const CoarseMask* coarse_written_ = nullptr;
};

}  // namespace plantseg
