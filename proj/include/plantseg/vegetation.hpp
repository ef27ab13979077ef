#pragma once

#include <cstdint>
#include <vector>

#include <opencv2/core.hpp>

#include "plantseg/geometry.hpp"

namespace plantseg {

/// Excess-green index 2G - R - B on 8-bit RGB values, range [-510, 510].
inline int excess_green(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 2 * int(g) - int(r) - int(b);
}

/// Mean ExG over the content pixels of every token block, row-major.
/// Tokens with no content pixels get 0.
inline std::vector<double> token_mean_exg(const cv::Mat& padded_rgb, const GeometrySpec& spec) {
  std::vector<double> sum(static_cast<std::size_t>(spec.token_count()), 0.0);
  std::vector<int> count(sum.size(), 0);
  for (int y = 0; y < spec.resized_h; ++y) {
    const auto* p = padded_rgb.ptr<std::uint8_t>(y);
    const int tr = y / spec.patch;
    for (int x = 0; x < spec.resized_w; ++x) {
      const std::size_t t = static_cast<std::size_t>(tr * spec.token_cols + x / spec.patch);
      sum[t] += excess_green(p[3 * x], p[3 * x + 1], p[3 * x + 2]);
      ++count[t];
    }
  }
  for (std::size_t t = 0; t < sum.size(); ++t) {
    if (count[t] > 0) sum[t] /= count[t];
  }
  return sum;
}

}  // namespace plantseg
