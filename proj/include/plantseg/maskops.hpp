#pragma once

// Token mask -> refiner prompts: connected components, per-component pixel
// boxes, and the 256x256 coarse mask.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "plantseg/error.hpp"
#include "plantseg/geometry.hpp"
#include "plantseg/pca.hpp"
#include "plantseg/raster.hpp"

namespace plantseg {

inline constexpr int kCoarseMaskSize = 256;
inline constexpr double kCoarseMaskLogit = 6.0;

struct Component {
  int id = 0;
  std::vector<TokenCoord> tokens;  // raster order
  TokenBox bounds;

  std::size_t size() const { return tokens.size(); }
};

struct BoxPrompt {
  PixelBox box;  // padded-image pixels, inclusive
  int source_component = -1;
  std::size_t token_area = 0;

  bool operator==(const BoxPrompt&) const = default;
};

struct CoarseMask {
  cv::Mat values;  // 256x256 CV_8UC1
  GeometrySpec spec;
};

namespace detail {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

/// Maximal connected sets of set cells, ordered by (top, left) of their
/// bounding box, then by first cell in raster order.
inline std::vector<Component> components(const cv::Mat& mask, int connectivity = 8,
                                         std::size_t min_tokens = 1) {
  require_mask(mask, "components");
  if (connectivity != 4 && connectivity != 8) throw UsageError("connectivity must be 4 or 8");
  const int rows = mask.rows, cols = mask.cols;
  detail::DisjointSet sets(static_cast<std::size_t>(rows) * cols);
  auto on = [&](int r, int c) { return mask.at<std::uint8_t>(r, c) != 0; };
  // scan neighbours already visited in raster order
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!on(r, c)) continue;
      const int here = r * cols + c;
      if (c > 0 && on(r, c - 1)) sets.unite(here, here - 1);
      if (r > 0 && on(r - 1, c)) sets.unite(here, here - cols);
      if (connectivity == 8 && r > 0) {
        if (c > 0 && on(r - 1, c - 1)) sets.unite(here, here - cols - 1);
        if (c + 1 < cols && on(r - 1, c + 1)) sets.unite(here, here - cols + 1);
      }
    }
  std::vector<int> slot(static_cast<std::size_t>(rows) * cols, -1);
  std::vector<Component> found;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!on(r, c)) continue;
      const int root = sets.find(r * cols + c);
      if (slot[root] < 0) {
        slot[root] = static_cast<int>(found.size());
        Component comp;
        comp.bounds = TokenBox{r, c, r, c};
        found.push_back(std::move(comp));
      }
      Component& comp = found[static_cast<std::size_t>(slot[root])];
      comp.tokens.push_back({r, c});
      comp.bounds.row_min = std::min(comp.bounds.row_min, r);
      comp.bounds.col_min = std::min(comp.bounds.col_min, c);
      comp.bounds.row_max = std::max(comp.bounds.row_max, r);
      comp.bounds.col_max = std::max(comp.bounds.col_max, c);
    }
  std::erase_if(found, [&](const Component& comp) { return comp.size() < min_tokens; });
  std::stable_sort(found.begin(), found.end(), [](const Component& a, const Component& b) {
    const auto& fa = a.tokens.front();
    const auto& fb = b.tokens.front();
    return std::tuple(a.bounds.row_min, a.bounds.col_min, fa.row, fa.col) <
           std::tuple(b.bounds.row_min, b.bounds.col_min, fb.row, fb.col);
  });
  for (std::size_t i = 0; i < found.size(); ++i) found[i].id = static_cast<int>(i);
  return found;
}

inline std::vector<Component> components(const TokenMask& mask, int connectivity = 8,
                                         std::size_t min_tokens = 1) {
  return components(mask.values, connectivity, min_tokens);
}

/// One minimal pixel box per component.
inline std::vector<BoxPrompt> boxes(std::span<const Component> comps, const GeometrySpec& spec) {
  std::vector<BoxPrompt> out;
  out.reserve(comps.size());
  for (const auto& comp : comps) {
    out.push_back(BoxPrompt{token_box_to_pixel_box(comp.bounds, spec), comp.id, comp.size()});
  }
  return out;
}

/// A single prompt enclosing every component (the single-box ablation).
inline std::vector<BoxPrompt> single_box(std::span<const Component> comps, const GeometrySpec& spec) {
  if (comps.empty()) return {};
  TokenBox all = comps.front().bounds;
  std::size_t area = 0;
  for (const auto& comp : comps) {
    all.row_min = std::min(all.row_min, comp.bounds.row_min);
    all.col_min = std::min(all.col_min, comp.bounds.col_min);
    all.row_max = std::max(all.row_max, comp.bounds.row_max);
    all.col_max = std::max(all.col_max, comp.bounds.col_max);
    area += comp.size();
  }
  return {BoxPrompt{token_box_to_pixel_box(all, spec), -1, area}};
}

namespace detail {

/// For each source index along one axis, the contiguous range of output
/// cells whose extent overlaps it (both axes span [0,1)).
inline std::vector<std::pair<int, int>> overlap_ranges(int source, int out) {
  std::vector<std::pair<int, int>> ranges(static_cast<std::size_t>(source));
  for (int s = 0; s < source; ++s) {
    const int first = static_cast<int>((std::int64_t(s) * out) / source);
    const int last = static_cast<int>((std::int64_t(s + 1) * out + source - 1) / source) - 1;
    ranges[s] = {first, std::min(last, out - 1)};
  }
  return ranges;
}

}  // namespace detail

/// Max-pool style resample of the full token grid to 256x256: a cell is set
/// when any token overlapping it is set, so no positive token is ever lost.
inline CoarseMask coarse_mask(const TokenMask& mask) {
  require_mask(mask.values, "coarse_mask");
  const int rows = mask.values.rows, cols = mask.values.cols;
  const auto row_ranges = detail::overlap_ranges(rows, kCoarseMaskSize);
  const auto col_ranges = detail::overlap_ranges(cols, kCoarseMaskSize);
  // rows first: token rows -> output rows, token columns kept
  cv::Mat tall = make_mask(kCoarseMaskSize, cols);
  for (int r = 0; r < rows; ++r) {
    const auto* in = mask.values.ptr<std::uint8_t>(r);
    for (int i = row_ranges[r].first; i <= row_ranges[r].second; ++i) {
      auto* o = tall.ptr<std::uint8_t>(i);
      for (int c = 0; c < cols; ++c) o[c] |= in[c] ? 1 : 0;
    }
  }
  CoarseMask out{make_mask(kCoarseMaskSize, kCoarseMaskSize), mask.spec};
  for (int i = 0; i < kCoarseMaskSize; ++i) {
    const auto* in = tall.ptr<std::uint8_t>(i);
    auto* o = out.values.ptr<std::uint8_t>(i);
    for (int c = 0; c < cols; ++c) {
      if (!in[c]) continue;
      for (int j = col_ranges[c].first; j <= col_ranges[c].second; ++j) o[j] = 1;
    }
  }
  return out;
}

/// Signed confidence map handed to a promptable model: +magnitude inside, -magnitude outside.
inline cv::Mat coarse_logits(const CoarseMask& coarse, double magnitude = kCoarseMaskLogit) {
  cv::Mat logits(coarse.values.size(), CV_32FC1);
  for (int r = 0; r < logits.rows; ++r)
    for (int c = 0; c < logits.cols; ++c)
      logits.at<float>(r, c) =
          static_cast<float>(coarse.values.at<std::uint8_t>(r, c) ? magnitude : -magnitude);
  return logits;
}

/// Nearest upsample of the coarse mask to the padded frame.
inline cv::Mat upsample_coarse(const CoarseMask& coarse, int rows, int cols) {
  cv::Mat out(rows, cols, CV_8UC1);
  for (int y = 0; y < rows; ++y) {
    const int i = static_cast<int>((std::int64_t(y) * coarse.values.rows) / rows);
    const auto* in = coarse.values.ptr<std::uint8_t>(i);
    auto* o = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < cols; ++x) {
      o[x] = in[(std::int64_t(x) * coarse.values.cols) / cols];
    }
  }
  return out;
}

/// Pixelwise OR; an empty list gives an all-false raster of the given size.
inline cv::Mat mask_union(std::span<const cv::Mat> masks, int rows, int cols) {
  cv::Mat out = make_mask(rows, cols);
  for (const auto& m : masks) {
    require_mask(m, "mask_union");
    if (m.rows != rows || m.cols != cols) {
      throw SizingError("mask_union: mask " + std::to_string(m.rows) + "x" +
                        std::to_string(m.cols) + " differs from " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    for (int r = 0; r < rows; ++r) {
      const auto* in = m.ptr<std::uint8_t>(r);
      auto* o = out.ptr<std::uint8_t>(r);
      for (int c = 0; c < cols; ++c) o[c] |= in[c] ? 1 : 0;
    }
  }
  return out;
}

inline nlohmann::json debug_json(std::span<const Component> comps, std::span<const BoxPrompt> prompts) {
  nlohmann::json j;
  j["components"] = nlohmann::json::array();
  for (const auto& comp : comps) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : comp.tokens) tokens.push_back({t.row, t.col});
    j["components"].push_back({{"id", comp.id},
                               {"bounds",
                                {comp.bounds.row_min, comp.bounds.col_min, comp.bounds.row_max,
                                 comp.bounds.col_max}},
                               {"tokens", tokens}});
  }
  j["boxes"] = nlohmann::json::array();
  for (const auto& p : prompts) {
    j["boxes"].push_back({{"xyxy", {p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max}},
                          {"source_component", p.source_component},
                          {"token_area", p.token_area}});
  }
  return j;
}

}  // namespace plantseg
