#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <opencv2/core.hpp>

#include "plantseg/error.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/hashing.hpp"
#include "plantseg/token_grid.hpp"
#include "plantseg/vegetation.hpp"

namespace plantseg {

inline constexpr const char* kEncoderPlantnet = "plantnet-dinov2";
inline constexpr const char* kEncoderDinov2 = "dinov2-base";
inline constexpr const char* kEncoderSynthetic = "synthetic";

/// Patch-token feature extractor. An instance is not thread-safe; give each
/// worker its own.
class Encoder {
public:
  virtual ~Encoder() = default;

  /// Identifier recorded in grids, caches and models.
  virtual std::string id() const = 0;
  virtual int dim() const = 0;

  /// Runs the backend on a padded RGB image; one row per patch token.
  FeatureMatrix encode(const cv::Mat& padded_rgb, const GeometrySpec& spec) {
    ++calls_;
    return do_encode(padded_rgb, spec);
  }

  /// Number of backend invocations so far.
  std::size_t calls() const { return calls_; }

protected:
  virtual FeatureMatrix do_encode(const cv::Mat& padded_rgb, const GeometrySpec& spec) = 0;

private:
  std::size_t calls_ = 0;
};

/// Runs `encoder` on a preprocessed image and wraps the result as a TokenGrid.
inline TokenGrid extract(const cv::Mat& padded_rgb, const GeometrySpec& spec, Encoder& encoder) {
  require_rgb(padded_rgb, "extract");
  if (padded_rgb.rows % kPatchSize != 0 || padded_rgb.cols % kPatchSize != 0) {
    throw SizingError("extract: image " + std::to_string(padded_rgb.rows) + "x" +
                      std::to_string(padded_rgb.cols) + " is not a multiple of " +
                      std::to_string(kPatchSize));
  }
  if (padded_rgb.rows != spec.padded_h || padded_rgb.cols != spec.padded_w) {
    throw SizingError("extract: image does not match the padded geometry");
  }
  TokenGrid grid;
  grid.features = encoder.encode(padded_rgb, spec);
  grid.spec = spec;
  grid.encoder_id = encoder.id();
  grid.pad_mask = make_pad_mask(spec);
  if (grid.features.cols() != encoder.dim()) {
    throw BackendError("encoder '" + encoder.id() + "' returned width " +
                       std::to_string(grid.features.cols()) + ", expected " +
                       std::to_string(encoder.dim()));
  }
  validate_grid(grid);
  return grid;
}

/// Deterministic stand-in for a vision transformer. Each token is labelled
/// plant when most of its content pixels are green (ExG above a threshold);
/// plant tokens are drawn around +separation/2 on coordinate 0, background
/// tokens around -separation/2, with unit Gaussian noise (truncated) on every
/// coordinate.
class SyntheticEncoder final : public Encoder {
public:
  struct Options {
    std::uint64_t seed = 0;
    int dim = 64;
    double separation = 6.0;  // distance between cluster means, in noise sigmas
    double truncation = 2.5;  // |noise| bound, in sigmas
    int exg_threshold = 40;
  };

  SyntheticEncoder() = default;
  explicit SyntheticEncoder(Options options) : options_(options) {
    if (options_.dim < 1) throw UsageError("synthetic encoder needs dim >= 1");
  }

  std::string id() const override { return kEncoderSynthetic; }
  int dim() const override { return options_.dim; }
  const Options& options() const { return options_; }

  /// Ground-truth token labels (1 = plant) the generator uses for `padded_rgb`.
  cv::Mat token_labels(const cv::Mat& padded_rgb, const GeometrySpec& spec) const {
    cv::Mat labels = make_mask(spec.token_rows, spec.token_cols);
    std::vector<int> green(static_cast<std::size_t>(spec.token_count()), 0);
    std::vector<int> total(green.size(), 0);
    for (int y = 0; y < spec.resized_h; ++y) {
      const auto* p = padded_rgb.ptr<std::uint8_t>(y);
      for (int x = 0; x < spec.resized_w; ++x) {
        const auto t = static_cast<std::size_t>((y / spec.patch) * spec.token_cols + x / spec.patch);
        green[t] += excess_green(p[3 * x], p[3 * x + 1], p[3 * x + 2]) > options_.exg_threshold;
        ++total[t];
      }
    }
    for (int r = 0; r < spec.token_rows; ++r)
      for (int c = 0; c < spec.token_cols; ++c) {
        const auto t = static_cast<std::size_t>(r * spec.token_cols + c);
        labels.at<std::uint8_t>(r, c) = 2 * green[t] > total[t] && total[t] > 0;
      }
    return labels;
  }

protected:
  FeatureMatrix do_encode(const cv::Mat& padded_rgb, const GeometrySpec& spec) override {
    const cv::Mat labels = token_labels(padded_rgb, spec);
    std::mt19937_64 rng(options_.seed ^ digest_seed(sha256_hex(padded_rgb)));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto noise = [&] {
      double v;
      do {
        v = normal(rng);
      } while (std::abs(v) > options_.truncation);
      return v;
    };
    const double half = options_.separation / 2.0;
    FeatureMatrix f(spec.token_count(), options_.dim);
    for (int r = 0; r < spec.token_rows; ++r)
      for (int c = 0; c < spec.token_cols; ++c) {
        const int t = r * spec.token_cols + c;
        for (int d = 0; d < options_.dim; ++d) f(t, d) = static_cast<float>(noise());
        f(t, 0) += static_cast<float>(labels.at<std::uint8_t>(r, c) ? half : -half);
      }
    return f;
  }

private:
  Options options_;
};

}  // namespace plantseg
