#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>
#include <opencv2/core.hpp>

#include "plantseg/error.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

/// One feature vector per row, tokens in row-major grid order.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TokenGrid {
  FeatureMatrix features;
  GeometrySpec spec;
  std::string encoder_id;
  cv::Mat pad_mask;  // token_rows x token_cols, 1 where the block is all padding

  int rows() const { return spec.token_rows; }
  int cols() const { return spec.token_cols; }
  int dim() const { return static_cast<int>(features.cols()); }
  auto token(int r, int c) const { return features.row(r * spec.token_cols + c); }
  bool is_pad(int r, int c) const { return pad_mask.at<std::uint8_t>(r, c) != 0; }

  std::size_t content_token_count() const {
    return static_cast<std::size_t>(spec.token_count() - cv::countNonZero(pad_mask));
  }
};

inline cv::Mat make_pad_mask(const GeometrySpec& spec) {
  cv::Mat m = make_mask(spec.token_rows, spec.token_cols);
  for (int r = 0; r < spec.token_rows; ++r)
    for (int c = 0; c < spec.token_cols; ++c) m.at<std::uint8_t>(r, c) = is_pad_token(r, c, spec);
  return m;
}

/// Checks shape and finiteness; throws DataError naming the first problem.
inline void validate_grid(const TokenGrid& grid) {
  if (grid.features.rows() != grid.spec.token_count()) {
    throw DataError("token grid has " + std::to_string(grid.features.rows()) + " tokens, geometry expects " +
                    std::to_string(grid.spec.token_count()));
  }
  if (grid.pad_mask.rows != grid.spec.token_rows || grid.pad_mask.cols != grid.spec.token_cols) {
    throw DataError("token grid pad mask shape does not match geometry");
  }
  if (!grid.features.allFinite()) {
    throw DataError("token grid from '" + grid.encoder_id + "' contains non-finite features");
  }
}

}  // namespace plantseg
