#pragma once

// Image and mask files. OpenCV decodes to BGR; everything here hands back RGB.

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "plantseg/error.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

inline cv::Mat read_rgb(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot read image " + path.string());
  if (raw.depth() == CV_16U) raw.convertTo(raw, CV_8U, 1.0 / 257.0);
  if (raw.depth() != CV_8U) throw DataError(path.string() + ": unsupported pixel depth");
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw DataError(path.string() + ": unsupported channel count");
  }
  return rgb;
}

/// Label image as stored (instance ids, class ids or 0/255), single channel
/// 8/16/32-bit integers, or multi-channel colour-coded labels.
inline cv::Mat read_label_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot read mask " + path.string());
  if (raw.channels() == 4) {
    cv::Mat bgr;
    cv::cvtColor(raw, bgr, cv::COLOR_BGRA2BGR);
    raw = bgr;
  }
  return raw;
}

inline void write_rgb(const std::filesystem::path& path, const cv::Mat& rgb) {
  require_rgb(rgb, "write_rgb");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write " + path.string());
}

/// Writes a 0/1 mask as a 0/255 single-channel PNG.
inline void write_mask_png(const std::filesystem::path& path, const cv::Mat& mask) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mask_to_png(mask))) throw DataError("cannot write " + path.string());
}

inline cv::Mat read_mask_png(const std::filesystem::path& path) {
  return nonzero_to_mask(read_label_image(path));
}

}  // namespace plantseg
