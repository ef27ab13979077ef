#pragma once

// Minimal raster charts drawn with OpenCV, always paired with a CSV of the
// plotted numbers: PCA score histograms (one panel per dataset) and scaling
// curves (mean points, std envelope, zero-shot reference line).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "plantseg/baseline.hpp"
#include "plantseg/csv.hpp"
#include "plantseg/error.hpp"
#include "plantseg/pca.hpp"

namespace plantseg::plot {

namespace detail {

inline const cv::Scalar kInk{40, 40, 40};
inline const cv::Scalar kGrid{225, 225, 225};
inline const cv::Scalar kBlue{180, 110, 30};   // BGR
inline const cv::Scalar kGreen{60, 150, 60};
inline const cv::Scalar kRed{50, 50, 200};

inline std::string fmt(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.4, bool centre = false) {
  int base = 0;
  const auto size = cv::getTextSize(s, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &base);
  if (centre) at.x -= size.width / 2;
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, kInk, 1, cv::LINE_AA);
}

/// Plot area inside a panel, mapping data coordinates to pixels.
struct Frame {
  cv::Rect area;
  double x0, x1, y0, y1;

  cv::Point map(double x, double y) const {
    const double fx = (x - x0) / (x1 - x0), fy = (y - y0) / (y1 - y0);
    return {area.x + static_cast<int>(std::lround(fx * area.width)),
            area.y + area.height - static_cast<int>(std::lround(fy * area.height))};
  }

  void axes(cv::Mat& img, int y_ticks) const {
    for (int i = 0; i <= y_ticks; ++i) {
      const double v = y0 + (y1 - y0) * i / y_ticks;
      const cv::Point p = map(x0, v);
      cv::line(img, p, {area.x + area.width, p.y}, kGrid, 1);
      text(img, fmt(v), {area.x - 42, p.y + 4});
    }
    cv::rectangle(img, area, kInk, 1);
  }
};

inline void save_png(const std::filesystem::path& path, const cv::Mat& rgb_like_bgr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), rgb_like_bgr)) throw DataError("cannot write plot " + path.string());
}

}  // namespace detail

/// One row per (dataset, bin).
inline void write_histogram_csv(const std::filesystem::path& path, const std::map<std::string, ScoreHistogram>& hists) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"dataset", "bin_low", "bin_high", "count", "fraction"});
  for (const auto& [name, h] : hists)
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      csv::write_row(out, {name, plantseg::detail::format_double(h.edges[b]),
                           plantseg::detail::format_double(h.edges[b + 1]), std::to_string(h.counts[b]),
                           plantseg::detail::format_double(h.fraction(b))});
}

/// Stacked panels, one per dataset; bars right of zero in green, left in grey.
inline void plot_histograms(const std::filesystem::path& png, const std::map<std::string, ScoreHistogram>& hists) {
  if (hists.empty()) throw DataError("plot_histograms: nothing to plot");
  const int W = 640, panel = 200;
  cv::Mat img(panel * static_cast<int>(hists.size()) + 30, W, CV_8UC3, cv::Scalar::all(255));
  int top = 0;
  for (const auto& [name, h] : hists) {
    double peak = 0;
    for (std::size_t b = 0; b < h.counts.size(); ++b) peak = std::max(peak, h.fraction(b));
    detail::Frame f{{60, top + 30, W - 80, panel - 60}, h.edges.front(), h.edges.back(), 0.0,
                    peak > 0 ? peak * 1.1 : 1.0};
    f.axes(img, 4);
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      const cv::Point a = f.map(h.edges[b], h.fraction(b)), z = f.map(h.edges[b + 1], 0.0);
      const bool plant = h.edges[b] >= 0;
      cv::rectangle(img, cv::Rect(a, z), plant ? detail::kGreen : cv::Scalar::all(150), cv::FILLED);
    }
    cv::line(img, f.map(0.0, f.y0), f.map(0.0, f.y1), detail::kRed, 1);
    detail::text(img, name + " (" + std::to_string(h.total) + " tokens)", {W / 2, top + 20}, 0.5, true);
    detail::text(img, detail::fmt(f.x0), {f.area.x - 10, f.area.y + f.area.height + 16});
    detail::text(img, detail::fmt(f.x1), {f.area.x + f.area.width - 20, f.area.y + f.area.height + 16});
    detail::text(img, "0", f.map(0.0, f.y0) + cv::Point(-3, 16));
    top += panel;
  }
  detail::text(img, "oriented first-component score", {W / 2, img.rows - 8}, 0.45, true);
  detail::save_png(png, img);
}

/// Mean IoU against training-set size on a log2 axis, with a +-1 std band
/// and the zero-shot mean as a dashed horizontal line.
inline void plot_curve(const std::filesystem::path& png, std::span<const CurvePoint> points,
                       std::optional<double> zero_shot, const std::string& title) {
  std::vector<const CurvePoint*> ok;
  for (const auto& p : points)
    if (p.repetitions > 0 && p.subset_size > 0) ok.push_back(&p);
  if (ok.empty()) throw DataError("plot_curve: no successful runs to plot");
  const int W = 640, H = 420;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar::all(255));
  const double lx0 = std::log2(static_cast<double>(ok.front()->subset_size));
  double lx1 = std::log2(static_cast<double>(ok.back()->subset_size));
  if (lx1 <= lx0) lx1 = lx0 + 1;
  const double pad = 0.05 * (lx1 - lx0);
  detail::Frame f{{60, 40, W - 90, H - 100}, lx0 - pad, lx1 + pad, 0.0, 1.0};
  f.axes(img, 5);

  std::vector<cv::Point> band;
  for (const auto* p : ok) band.push_back(f.map(std::log2(static_cast<double>(p->subset_size)), std::min(1.0, p->mean_iou + p->std_iou)));
  for (auto it = ok.rbegin(); it != ok.rend(); ++it)
    band.push_back(f.map(std::log2(static_cast<double>((*it)->subset_size)), std::max(0.0, (*it)->mean_iou - (*it)->std_iou)));
  cv::Mat layer = img.clone();
  cv::fillPoly(layer, std::vector<std::vector<cv::Point>>{band}, cv::Scalar(240, 200, 160));
  cv::addWeighted(layer, 0.6, img, 0.4, 0, img);
  f.axes(img, 5);

  for (std::size_t i = 0; i < ok.size(); ++i) {
    const cv::Point c = f.map(std::log2(static_cast<double>(ok[i]->subset_size)), ok[i]->mean_iou);
    if (i > 0) cv::line(img, f.map(std::log2(static_cast<double>(ok[i - 1]->subset_size)), ok[i - 1]->mean_iou), c, detail::kBlue, 2, cv::LINE_AA);
    cv::circle(img, c, 4, detail::kBlue, cv::FILLED, cv::LINE_AA);
    detail::text(img, std::to_string(ok[i]->subset_size), {c.x, f.area.y + f.area.height + 16}, 0.4, true);
  }
  if (zero_shot) {
    const int y = f.map(f.x0, *zero_shot).y;
    for (int x = f.area.x; x < f.area.x + f.area.width; x += 12)
      cv::line(img, {x, y}, {std::min(x + 6, f.area.x + f.area.width), y}, detail::kRed, 2);
    detail::text(img, "zero-shot " + detail::fmt(*zero_shot, 3), {f.area.x + 6, y - 6});
  }
  detail::text(img, title, {W / 2, 24}, 0.55, true);
  detail::text(img, "training samples (log scale)", {W / 2, H - 30}, 0.45, true);
  detail::text(img, "mean IoU", {6, 30}, 0.45);
  detail::save_png(png, img);
}

}  // namespace plantseg::plot
