#pragma once

// Synthetic plant/soil scenes with known labels, used by the test suites, the
// mini fixtures and the desk-scale baseline experiments.

#include <algorithm>
#include <cstdint>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "plantseg/geometry.hpp"
#include "plantseg/raster.hpp"

namespace plantseg::synthetic {

struct Scene {
  cv::Mat rgb;    // CV_8UC3, RGB order
  cv::Mat label;  // CV_8UC1, 1 = plant
};

/// Colours a label map: green foliage on brown soil with mild per-pixel noise.
inline cv::Mat paint(const cv::Mat& label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-12, 12);
  cv::Mat rgb(label.size(), CV_8UC3);
  for (int y = 0; y < label.rows; ++y) {
    const auto* l = label.ptr<std::uint8_t>(y);
    auto* p = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < label.cols; ++x) {
      const int base[3] = {l[x] ? 55 : 125, l[x] ? 165 : 92, l[x] ? 45 : 62};
      for (int c = 0; c < 3; ++c) {
        p[3 * x + c] = static_cast<std::uint8_t>(std::clamp(base[c] + jitter(rng), 0, 255));
      }
    }
  }
  return rgb;
}

/// Axis-aligned plant rectangles snapped to the 14 px token lattice, one per
/// 4x4-token cell with a one-token gap, so no two rectangles touch even
/// diagonally. Roughly half of the tokens end up green.
inline Scene rect_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution tall(0.8);
  cv::Mat label = make_mask(height, width);
  const int token_rows = (height + kPatchSize - 1) / kPatchSize;
  const int token_cols = (width + kPatchSize - 1) / kPatchSize;
  for (int r0 = 0; r0 < token_rows; r0 += 4) {
    for (int c0 = 0; c0 < token_cols; c0 += 4) {
      const int h = tall(rng) ? 3 : 2;
      const int w = tall(rng) ? 3 : 2;
      const int y0 = r0 * kPatchSize;
      const int x0 = c0 * kPatchSize;
      const int y1 = std::min(height, (r0 + h) * kPatchSize);
      const int x1 = std::min(width, (c0 + w) * kPatchSize);
      if (y1 > y0 && x1 > x0) label(cv::Rect(x0, y0, x1 - x0, y1 - y0)).setTo(1);
    }
  }
  return Scene{paint(label, seed ^ 0x9e3779b97f4a7c15ULL), label};
}

/// Free-form elliptical plants at arbitrary positions (not token aligned).
inline Scene blob_scene(int height, int width, std::uint64_t seed, int blobs = 4) {
  std::mt19937_64 rng(seed);
  const int short_edge = std::min(height, width);
  std::uniform_int_distribution<int> cy(0, height - 1), cx(0, width - 1);
  std::uniform_int_distribution<int> axis(std::max(2, short_edge / 12), std::max(3, short_edge / 4));
  std::uniform_real_distribution<double> angle(0.0, 180.0);
  cv::Mat label = make_mask(height, width);
  for (int i = 0; i < blobs; ++i) {
    cv::ellipse(label, cv::Point(cx(rng), cy(rng)), cv::Size(axis(rng), axis(rng)), angle(rng), 0,
                360, cv::Scalar(1), cv::FILLED);
  }
  return Scene{paint(label, seed ^ 0x51ed270b27d8ce6bULL), label};
}

/// One rosette near the centre: elliptical leaves radiating from a hub.
inline Scene rosette_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int short_edge = std::min(height, width);
  std::uniform_int_distribution<int> jitter(-short_edge / 10, short_edge / 10);
  std::uniform_int_distribution<int> leaves(5, 9);
  std::uniform_real_distribution<double> reach(0.45, 0.7), start(0.0, 360.0);
  const cv::Point hub(width / 2 + jitter(rng), height / 2 + jitter(rng));
  cv::Mat label = make_mask(height, width);
  const int n = leaves(rng);
  const double phase = start(rng);
  for (int i = 0; i < n; ++i) {
    const double a = phase + 360.0 * i / n;
    const double len = reach(rng) * short_edge / 2.0;
    const cv::Point c(hub.x + static_cast<int>(len * std::cos(a * CV_PI / 180.0)),
                      hub.y + static_cast<int>(len * std::sin(a * CV_PI / 180.0)));
    cv::ellipse(label, c, cv::Size(std::max(2, static_cast<int>(len)), std::max(2, static_cast<int>(len / 2.5))), a,
                0, 360, cv::Scalar(1), cv::FILLED);
  }
  cv::circle(label, hub, std::max(2, short_edge / 14), cv::Scalar(1), cv::FILLED);
  return Scene{paint(label, seed ^ 0x2545f4914f6cdd1dULL), label};
}

/// Bare soil.
inline Scene background_scene(int height, int width, std::uint64_t seed) {
  cv::Mat label = make_mask(height, width);
  return Scene{paint(label, seed), label};
}

/// Left half plant, right half soil.
inline Scene split_scene(int height, int width, std::uint64_t seed) {
  cv::Mat label = make_mask(height, width);
  label(cv::Rect(0, 0, width / 2, height)).setTo(1);
  return Scene{paint(label, seed), label};
}

}  // namespace plantseg::synthetic
