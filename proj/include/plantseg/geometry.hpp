#pragma once

// Resize/pad bookkeeping between original pixels, padded pixels and the
// transformer token grid. Padding is added on the bottom and right only, so
// token (0,0) always starts at pixel (0,0).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "plantseg/error.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

/// Side of a square transformer patch, in pixels.
inline constexpr int kPatchSize = 14;
/// Shortest-edge cap: twice the 518 px training resolution, 74 patches.
inline constexpr int kMaxShortEdge = 1036;

struct GeometrySpec {
  int orig_h = 0;
  int orig_w = 0;
  double scale = 1.0;
  int resized_h = 0;
  int resized_w = 0;
  int padded_h = 0;
  int padded_w = 0;
  int pad_bottom = 0;
  int pad_right = 0;
  int patch = kPatchSize;
  int token_rows = 0;
  int token_cols = 0;

  bool operator==(const GeometrySpec&) const = default;

  bool resizes() const { return resized_h != orig_h || resized_w != orig_w; }
  int token_count() const { return token_rows * token_cols; }
};

inline void to_json(nlohmann::json& j, const GeometrySpec& g) {
  j = nlohmann::json{{"orig_h", g.orig_h},         {"orig_w", g.orig_w},
                     {"scale", g.scale},           {"resized_h", g.resized_h},
                     {"resized_w", g.resized_w},   {"padded_h", g.padded_h},
                     {"padded_w", g.padded_w},     {"pad_bottom", g.pad_bottom},
                     {"pad_right", g.pad_right},   {"patch", g.patch},
                     {"token_rows", g.token_rows}, {"token_cols", g.token_cols}};
}

inline void from_json(const nlohmann::json& j, GeometrySpec& g) {
  j.at("orig_h").get_to(g.orig_h);
  j.at("orig_w").get_to(g.orig_w);
  j.at("scale").get_to(g.scale);
  j.at("resized_h").get_to(g.resized_h);
  j.at("resized_w").get_to(g.resized_w);
  j.at("padded_h").get_to(g.padded_h);
  j.at("padded_w").get_to(g.padded_w);
  j.at("pad_bottom").get_to(g.pad_bottom);
  j.at("pad_right").get_to(g.pad_right);
  j.at("patch").get_to(g.patch);
  j.at("token_rows").get_to(g.token_rows);
  j.at("token_cols").get_to(g.token_cols);
}

namespace detail {
inline int round_up_to(int value, int multiple) {
  return ((value + multiple - 1) / multiple) * multiple;
}
}  // namespace detail

/// Plans the downscale (only when the shortest edge exceeds `max_short_edge`)
/// and the bottom/right padding to the next multiple of the patch size.
inline GeometrySpec plan_geometry(int orig_h, int orig_w, int max_short_edge = kMaxShortEdge) {
  if (orig_h < kPatchSize || orig_w < kPatchSize) {
    throw SizingError("image " + std::to_string(orig_h) + "x" + std::to_string(orig_w) +
                      " is smaller than one " + std::to_string(kPatchSize) + " px patch");
  }
  if (max_short_edge < kPatchSize) {
    throw SizingError("shortest-edge cap must be at least one patch");
  }
  GeometrySpec g;
  g.orig_h = orig_h;
  g.orig_w = orig_w;
  const int short_edge = std::min(orig_h, orig_w);
  if (short_edge > max_short_edge) {
    g.scale = static_cast<double>(max_short_edge) / short_edge;
    // round half up
    g.resized_h = static_cast<int>(std::floor(orig_h * g.scale + 0.5));
    g.resized_w = static_cast<int>(std::floor(orig_w * g.scale + 0.5));
    // the short edge lands exactly on the cap
    if (orig_h == short_edge) g.resized_h = max_short_edge;
    if (orig_w == short_edge) g.resized_w = max_short_edge;
  } else {
    g.scale = 1.0;
    g.resized_h = orig_h;
    g.resized_w = orig_w;
  }
  g.padded_h = detail::round_up_to(g.resized_h, kPatchSize);
  g.padded_w = detail::round_up_to(g.resized_w, kPatchSize);
  g.pad_bottom = g.padded_h - g.resized_h;
  g.pad_right = g.padded_w - g.resized_w;
  g.patch = kPatchSize;
  g.token_rows = g.padded_h / kPatchSize;
  g.token_cols = g.padded_w / kPatchSize;
  return g;
}

/// Resizes (bilinear, downscale only) and zero-pads an image to the padded
/// frame. Works for any 8-bit channel count.
inline cv::Mat apply_geometry(const cv::Mat& image, const GeometrySpec& spec) {
  if (image.rows != spec.orig_h || image.cols != spec.orig_w) {
    throw SizingError("apply_geometry: image is " + std::to_string(image.rows) + "x" +
                      std::to_string(image.cols) + " but geometry expects " +
                      std::to_string(spec.orig_h) + "x" + std::to_string(spec.orig_w));
  }
  cv::Mat resized;
  if (spec.resizes()) {
    cv::resize(image, resized, cv::Size(spec.resized_w, spec.resized_h), 0, 0, cv::INTER_LINEAR);
  } else {
    resized = image;
  }
  cv::Mat padded;
  cv::copyMakeBorder(resized, padded, 0, spec.pad_bottom, 0, spec.pad_right, cv::BORDER_CONSTANT,
                     cv::Scalar::all(0));
  return padded;
}

/// Nearest-neighbour resample of a 0/1 mask using pixel-centre alignment.
inline cv::Mat resample_nearest(const cv::Mat& mask, int rows, int cols) {
  require_mask(mask, "resample_nearest");
  if (mask.rows == rows && mask.cols == cols) return mask.clone();
  std::vector<int> src_row(rows), src_col(cols);
  for (int y = 0; y < rows; ++y) {
    src_row[y] = std::min(mask.rows - 1,
                          static_cast<int>(std::floor((y + 0.5) * mask.rows / rows)));
  }
  for (int x = 0; x < cols; ++x) {
    src_col[x] = std::min(mask.cols - 1,
                          static_cast<int>(std::floor((x + 0.5) * mask.cols / cols)));
  }
  cv::Mat out(rows, cols, CV_8UC1);
  for (int y = 0; y < rows; ++y) {
    const auto* in = mask.ptr<std::uint8_t>(src_row[y]);
    auto* o = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < cols; ++x) o[x] = in[src_col[x]] ? 1 : 0;
  }
  return out;
}

/// Replicates each token value over its patch block: token grid -> padded frame.
inline cv::Mat expand_tokens(const cv::Mat& token_mask, const GeometrySpec& spec) {
  require_mask(token_mask, "expand_tokens");
  if (token_mask.rows != spec.token_rows || token_mask.cols != spec.token_cols) {
    throw SizingError("expand_tokens: mask is not at token resolution");
  }
  cv::Mat out(spec.padded_h, spec.padded_w, CV_8UC1);
  for (int y = 0; y < spec.padded_h; ++y) {
    const auto* in = token_mask.ptr<std::uint8_t>(y / spec.patch);
    auto* o = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < spec.padded_w; ++x) o[x] = in[x / spec.patch] ? 1 : 0;
  }
  return out;
}

/// Maps a mask at padded or token resolution back to the original image size.
inline cv::Mat restore_mask(const cv::Mat& mask, const GeometrySpec& spec) {
  require_mask(mask, "restore_mask");
  cv::Mat padded;
  if (mask.rows == spec.padded_h && mask.cols == spec.padded_w) {
    padded = mask;
  } else if (mask.rows == spec.token_rows && mask.cols == spec.token_cols) {
    padded = expand_tokens(mask, spec);
  } else {
    throw SizingError("restore_mask: mask " + std::to_string(mask.rows) + "x" +
                      std::to_string(mask.cols) + " matches neither the padded frame (" +
                      std::to_string(spec.padded_h) + "x" + std::to_string(spec.padded_w) +
                      ") nor the token grid (" + std::to_string(spec.token_rows) + "x" +
                      std::to_string(spec.token_cols) + ")");
  }
  cv::Mat content = padded(cv::Rect(0, 0, spec.resized_w, spec.resized_h));
  return resample_nearest(content, spec.orig_h, spec.orig_w);
}

/// Inclusive token-grid rectangle.
struct TokenBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = -1;
  int col_max = -1;

  bool empty() const { return row_max < row_min || col_max < col_min; }
  int area() const { return empty() ? 0 : (row_max - row_min + 1) * (col_max - col_min + 1); }
  bool operator==(const TokenBox&) const = default;
};

/// Inclusive pixel rectangle in padded-image coordinates.
struct PixelBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = -1;
  int y_max = -1;

  bool empty() const { return x_max < x_min || y_max < y_min; }
  std::int64_t area() const {
    return empty() ? 0 : std::int64_t(x_max - x_min + 1) * (y_max - y_min + 1);
  }
  bool contains(int x, int y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  bool operator==(const PixelBox&) const = default;
};

/// Pixel extent of a token box, before clipping to the content region.
inline PixelBox token_box_extent(const TokenBox& box, int patch = kPatchSize) {
  return PixelBox{patch * box.col_min, patch * box.row_min, patch * (box.col_max + 1) - 1,
                  patch * (box.row_max + 1) - 1};
}

/// Pixel box covered by a token box, clipped so it never reaches into padding.
inline PixelBox token_box_to_pixel_box(const TokenBox& box, const GeometrySpec& spec) {
  if (box.empty()) throw DataError("token_box_to_pixel_box: empty token box");
  if (box.row_min < 0 || box.col_min < 0 || box.row_max >= spec.token_rows ||
      box.col_max >= spec.token_cols) {
    throw DataError("token_box_to_pixel_box: box lies outside the token grid");
  }
  PixelBox px = token_box_extent(box, spec.patch);
  px.x_max = std::min(px.x_max, spec.resized_w - 1);
  px.y_max = std::min(px.y_max, spec.resized_h - 1);
  if (px.empty()) throw DataError("token_box_to_pixel_box: box covers only padding");
  return px;
}

struct TokenCoord {
  int row = 0;
  int col = 0;
  bool operator==(const TokenCoord&) const = default;
};

inline TokenCoord pixel_to_token(int y, int x, int patch = kPatchSize) {
  return TokenCoord{y / patch, x / patch};
}

/// True when the token's pixel block lies entirely in padding.
inline bool is_pad_token(int row, int col, const GeometrySpec& spec) {
  return row * spec.patch >= spec.resized_h || col * spec.patch >= spec.resized_w;
}

}  // namespace plantseg
