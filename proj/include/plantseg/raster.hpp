#pragma once

// Raster conventions used across the library:
//   RGB image  -> cv::Mat CV_8UC3, channel order R,G,B
//   binary mask -> cv::Mat CV_8UC1 holding 0 or 1
// PNG files hold masks as 0/255; conversion happens only at the I/O edge.

#include <cstdint>
#include <string>

#include <opencv2/core.hpp>

#include "plantseg/error.hpp"

namespace plantseg {

inline cv::Mat make_mask(int rows, int cols, bool value = false) {
  return cv::Mat(rows, cols, CV_8UC1, cv::Scalar(value ? 1 : 0));
}

inline bool is_binary_mask(const cv::Mat& m) {
  if (m.type() != CV_8UC1) return false;
  for (int r = 0; r < m.rows; ++r) {
    const auto* row = m.ptr<std::uint8_t>(r);
    for (int c = 0; c < m.cols; ++c) {
      if (row[c] > 1) return false;
    }
  }
  return true;
}

inline void require_mask(const cv::Mat& m, const char* what) {
  if (m.type() != CV_8UC1) {
    throw DataError(std::string(what) + ": expected a single-channel 8-bit mask");
  }
}

inline void require_rgb(const cv::Mat& m, const char* what) {
  if (m.type() != CV_8UC3) {
    throw DataError(std::string(what) + ": expected an 8-bit 3-channel RGB image");
  }
}

inline std::int64_t count_true(const cv::Mat& mask) {
  require_mask(mask, "count_true");
  std::int64_t n = 0;
  for (int r = 0; r < mask.rows; ++r) {
    const auto* row = mask.ptr<std::uint8_t>(r);
    for (int c = 0; c < mask.cols; ++c) n += row[c] != 0;
  }
  return n;
}

inline bool masks_equal(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.type() != b.type()) return false;
  for (int r = 0; r < a.rows; ++r) {
    const auto* ra = a.ptr<std::uint8_t>(r);
    const auto* rb = b.ptr<std::uint8_t>(r);
    for (int c = 0; c < a.cols * a.channels(); ++c) {
      if ((ra[c] != 0) != (rb[c] != 0)) return false;
    }
  }
  return true;
}

/// 0/1 mask -> 0/255 image for writing.
inline cv::Mat mask_to_png(const cv::Mat& mask) {
  require_mask(mask, "mask_to_png");
  cv::Mat out;
  mask.convertTo(out, CV_8UC1, 255.0);
  return out;
}

/// Any nonzero pixel (any channel) -> 1.
inline cv::Mat nonzero_to_mask(const cv::Mat& img) {
  cv::Mat single;
  if (img.channels() == 1) {
    single = img;
  } else {
    std::vector<cv::Mat> planes;
    cv::split(img, planes);
    single = planes[0] != 0;
    for (std::size_t i = 1; i < planes.size(); ++i) single |= (planes[i] != 0);
  }
  cv::Mat out = (single != 0);
  out.convertTo(out, CV_8UC1, 1.0 / 255.0);
  return out;
}

}  // namespace plantseg
