#include <unistd.h>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "plantseg/plot.hpp"

namespace plantseg {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  static int n = 0;
  auto p = fs::temp_directory_path() / ("plantseg-plot-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
  fs::create_directories(p);
  return p;
}

TEST(Plot, HistogramCsvHasOneRowPerBin) {
  const auto dir = temp_dir();
  ScoreHistogram h{{-2, -1, 0, 1, 2}, {1, 3, 4, 2}, 10};
  plot::write_histogram_csv(dir / "h.csv", {{"a", h}, {"b", h}});
  const auto rows = csv::read_file(dir / "h.csv");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], (csv::Row{"dataset", "bin_low", "bin_high", "count", "fraction"}));
  EXPECT_EQ(rows[3][0], "a");
  EXPECT_EQ(std::stod(rows[3][1]), 0.0);
  EXPECT_EQ(rows[3][3], "4");
  EXPECT_DOUBLE_EQ(std::stod(rows[3][4]), 0.4);
  plot::plot_histograms(dir / "h.png", {{"a", h}, {"b", h}});
  const cv::Mat img = cv::imread((dir / "h.png").string());
  EXPECT_EQ(img.cols, 640);
  EXPECT_EQ(img.rows, 2 * 200 + 30);
  fs::remove_all(dir);
}

TEST(Plot, CurveSkipsEmptyPointsAndRejectsNone) {
  const auto dir = temp_dir();
  std::vector<CurvePoint> pts(3);
  pts[0] = {2, 5, 0.4, 0.1, {}, {}, 0};
  pts[1] = {8, 0, 0.0, 0.0, {}, {}, 5};  // every run failed
  pts[2] = {32, 5, 0.8, 0.05, {}, {}, 0};
  plot::plot_curve(dir / "c.png", pts, 0.6, "t");
  EXPECT_FALSE(cv::imread((dir / "c.png").string()).empty());
  std::vector<CurvePoint> failed{pts[1]};
  EXPECT_THROW(plot::plot_curve(dir / "d.png", failed, std::nullopt, "t"), DataError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace plantseg
