#pragma once

// Per-image zero-shot segmentation: preprocess, extract, classify tokens,
// group into components, build prompts, refine, restore.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/encoder.hpp"
#include "plantseg/error.hpp"
#include "plantseg/feature_cache.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/maskops.hpp"
#include "plantseg/pca.hpp"
#include "plantseg/refiner.hpp"

namespace plantseg {

struct SegmentOptions {
  bool use_mask_input = false;
  bool single_box = false;
  int connectivity = 8;
  std::size_t min_tokens = 1;
  double threshold = 0.0;
  int max_short_edge = kMaxShortEdge;
  bool debug = false;  // keep token mask, coarse mask and padded output
};

struct SegmentationResult {
  std::string image_id;
  cv::Mat mask;  // original resolution, 0/1
  GeometrySpec spec;
  std::vector<BoxPrompt> prompts;
  std::size_t component_count = 0;
  // filled when debug is set
  std::optional<TokenMask> token_mask;
  std::vector<Component> components;
  std::optional<CoarseMask> coarse;
  cv::Mat padded_mask;

  nlohmann::json debug_json() const {
    nlohmann::json j = plantseg::debug_json(components, prompts);
    j["image_id"] = image_id;
    j["geometry"] = spec;
    j["component_count"] = component_count;
    return j;
  }
};

namespace detail {

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_in_stage(stage, e);
  } catch (const cv::Exception& e) {
    throw DataError(std::string("[") + stage + "] " + e.what());
  }
}

}  // namespace detail

inline PreparedImage prepare_image(const std::string& id, const cv::Mat& rgb,
                                   int max_short_edge = kMaxShortEdge) {
  return detail::in_stage("preprocess", [&] {
    require_rgb(rgb, "segment");
    const auto spec = plan_geometry(rgb.rows, rgb.cols, max_short_edge);
    return PreparedImage{id, apply_geometry(rgb, spec), spec};
  });
}

/// Fits and orients PCA over the content tokens of `specs.size()` images,
/// pulling each through `load(i)` once, so only one image and its grid are
/// held at a time. The token subsample is drawn from the geometry up front.
template <typename Loader>
PcaModel fit_oriented_streaming(std::span<const GeometrySpec> specs, Loader&& load, Encoder& encoder,
                                const PcaFitOptions& fit_options = {}, OrientMode mode = OrientMode::automatic,
                                const FeatureCache* cache = nullptr) {
  if (specs.empty()) throw DataError("[pca] pca fit: no images to fit on");
  std::size_t available = 0;
  bool subsampled = false;
  const auto refs = select_fit_tokens(specs, fit_options, &available, &subsampled);
  StreamingPcaFit acc(fit_options);
  std::size_t next = 0;
  for (std::size_t g = 0; g < specs.size(); ++g) {
    if (next < refs.size() && refs[next].grid != g) continue;
    const PreparedImage image = load(g);
    if (image.spec != specs[g]) throw DataError("[pca] image " + image.id + " changed geometry between passes");
    auto grid = detail::in_stage("extract", [&] {
      return std::move(extract_batch(std::span<const PreparedImage>(&image, 1), encoder, cache).front());
    });
    const auto exg = token_mean_exg(image.padded, image.spec);
    for (; next < refs.size() && refs[next].grid == g; ++next)
      acc.add(grid.features.row(refs[next].token), exg[refs[next].token]);
  }
  return detail::in_stage("pca", [&] { return acc.finish(encoder.id(), available, subsampled, mode); });
}

/// Fits PCA on the given images' content tokens and orients component 1.
inline PcaModel fit_oriented(std::span<const PreparedImage> images, Encoder& encoder,
                             const PcaFitOptions& fit_options = {},
                             OrientMode mode = OrientMode::automatic,
                             const FeatureCache* cache = nullptr) {
  std::vector<GeometrySpec> specs;
  for (const auto& img : images) specs.push_back(img.spec);
  return fit_oriented_streaming(
      specs, [&](std::size_t i) -> const PreparedImage& { return images[i]; }, encoder, fit_options, mode, cache);
}

/// Everything after feature extraction, for callers that already hold the
/// token grid (cached features, or both arms of the mask-input ablation).
inline SegmentationResult segment_prepared(const PreparedImage& image, const TokenGrid& grid,
                                           const PcaModel& model, Refiner& refiner,
                                           const SegmentOptions& opts = {}) {
  SegmentationResult result;
  result.image_id = image.id;
  result.spec = image.spec;
  auto tokens = detail::in_stage("classify", [&] { return classify(grid, model, opts.threshold); });
  auto comps = detail::in_stage("components", [&] {
    return components(tokens, opts.connectivity, opts.min_tokens);
  });
  result.component_count = comps.size();
  result.prompts = detail::in_stage("prompts", [&] {
    return opts.single_box ? single_box(comps, image.spec) : boxes(comps, image.spec);
  });
  std::optional<CoarseMask> coarse;
  if (opts.use_mask_input) coarse = detail::in_stage("prompts", [&] { return coarse_mask(tokens); });
  cv::Mat padded_mask = detail::in_stage("refine", [&] {
    return refiner.refine(image.padded, result.prompts, coarse ? &*coarse : nullptr);
  });
  result.mask = detail::in_stage("restore", [&] { return restore_mask(padded_mask, image.spec); });
  if (opts.debug) {
    result.token_mask = std::move(tokens);
    result.components = std::move(comps);
    result.coarse = std::move(coarse);
    result.padded_mask = padded_mask;
  }
  return result;
}

inline SegmentationResult segment_image(const std::string& id, const cv::Mat& rgb, Encoder& encoder,
                                        const PcaModel& model, Refiner& refiner,
                                        const SegmentOptions& opts = {},
                                        const FeatureCache* cache = nullptr) {
  const auto image = prepare_image(id, rgb, opts.max_short_edge);
  auto grids = detail::in_stage("extract", [&] {
    return extract_batch(std::span<const PreparedImage>(&image, 1), encoder, cache);
  });
  return segment_prepared(image, grids.front(), model, refiner, opts);
}

}  // namespace plantseg
