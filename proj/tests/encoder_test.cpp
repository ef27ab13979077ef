#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <gtest/gtest.h>
#include <spdlog/sinks/ringbuffer_sink.h>

#include "plantseg/feature_cache.hpp"
#include "plantseg/synthetic.hpp"

namespace plantseg {
namespace {

namespace fs = std::filesystem;

PreparedImage prepare(const cv::Mat& rgb, const std::string& id) {
  auto spec = plan_geometry(rgb.rows, rgb.cols);
  return PreparedImage{id, apply_geometry(rgb, spec), spec};
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("plantseg_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(SyntheticEncoder, GridShapeFollowsPatchArithmetic) {
  SyntheticEncoder enc;
  auto img = prepare(synthetic::background_scene(1000, 1500, 1).rgb, "a");
  auto grid = extract(img.padded, img.spec, enc);
  EXPECT_EQ(grid.rows(), 72);
  EXPECT_EQ(grid.cols(), 108);
  EXPECT_EQ(grid.dim(), 64);
  EXPECT_EQ(grid.features.rows(), 72 * 108);
  EXPECT_EQ(grid.encoder_id, "synthetic");
  EXPECT_EQ(cv::countNonZero(grid.pad_mask), 0);
}

TEST(SyntheticEncoder, DeterministicPerSeed) {
  auto img = prepare(synthetic::rect_scene(150, 200, 3).rgb, "a");
  SyntheticEncoder a({.seed = 5}), b({.seed = 5}), c({.seed = 6});
  auto ga = extract(img.padded, img.spec, a);
  auto gb = extract(img.padded, img.spec, b);
  auto gc = extract(img.padded, img.spec, c);
  EXPECT_TRUE((ga.features.array() == gb.features.array()).all());
  EXPECT_FALSE((ga.features.array() == gc.features.array()).all());
}

TEST(SyntheticEncoder, SplitSceneRecoverableByNearestCentroid) {
  auto scene = synthetic::split_scene(140, 280, 4);
  auto img = prepare(scene.rgb, "split");
  SyntheticEncoder enc;
  auto grid = extract(img.padded, img.spec, enc);
  Eigen::VectorXf plant = Eigen::VectorXf::Zero(64), soil = Eigen::VectorXf::Zero(64);
  plant(0) = 3.0f;
  soil(0) = -3.0f;
  for (int r = 0; r < grid.rows(); ++r)
    for (int c = 0; c < grid.cols(); ++c) {
      Eigen::VectorXf f = grid.token(r, c).transpose();
      bool nearer_plant = (f - plant).squaredNorm() < (f - soil).squaredNorm();
      EXPECT_EQ(nearer_plant, c < 10) << r << "," << c;
    }
}

TEST(SyntheticEncoder, LabelsTrackGreenMajority) {
  auto scene = synthetic::rect_scene(112, 112, 9);
  auto img = prepare(scene.rgb, "r");
  SyntheticEncoder enc;
  auto labels = enc.token_labels(img.padded, img.spec);
  EXPECT_TRUE(masks_equal(labels, resample_nearest(scene.label, 8, 8)));
}

TEST(Extract, RejectsBadShapes) {
  SyntheticEncoder enc;
  auto spec = plan_geometry(28, 28);
  EXPECT_THROW(extract(cv::Mat(28, 30, CV_8UC3, cv::Scalar::all(0)), spec, enc), SizingError);
  EXPECT_THROW(extract(cv::Mat(42, 28, CV_8UC3, cv::Scalar::all(0)), spec, enc), SizingError);
  EXPECT_EQ(enc.calls(), 0u);
}

class FeatureCacheTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fresh_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    for (int i = 0; i < 3; ++i) {
      images_.push_back(prepare(synthetic::rect_scene(70 + 14 * i, 98, 100 + i).rgb,
                                "img" + std::to_string(i)));
    }
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  std::vector<PreparedImage> images_;
};

TEST_F(FeatureCacheTest, SecondRunHitsCache) {
  FeatureCache cache(dir_);
  SyntheticEncoder enc;
  auto first = extract_batch(images_, enc, &cache);
  EXPECT_EQ(enc.calls(), 3u);
  SyntheticEncoder enc2;
  auto second = extract_batch(images_, enc2, &cache);
  EXPECT_EQ(enc2.calls(), 0u);
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_TRUE((first[i].features.array() == second[i].features.array()).all());
    EXPECT_EQ(first[i].spec, second[i].spec);
  }
}

TEST_F(FeatureCacheTest, PartialCacheComputesOnlyMisses) {
  FeatureCache cache(dir_);
  SyntheticEncoder warm;
  extract_batch(std::span(images_).first(2), warm, &cache);
  SyntheticEncoder enc;
  extract_batch(images_, enc, &cache);
  EXPECT_EQ(enc.calls(), 1u);
}

TEST_F(FeatureCacheTest, EncoderIdMismatchIsAMiss) {
  FeatureCache cache(dir_);
  SyntheticEncoder enc;
  auto grids = extract_batch(std::span(images_).first(1), enc, nullptr);
  const auto hash = sha256_hex(images_[0].padded);
  // an entry sitting at the synthetic key but claiming another encoder
  auto impostor = grids[0];
  impostor.encoder_id = "dinov2-base";
  cache.store(hash, impostor);
  fs::rename(cache.entry_path(hash, "dinov2-base", images_[0].spec),
             cache.entry_path(hash, "synthetic", images_[0].spec));
  EXPECT_FALSE(cache.load(hash, "synthetic", images_[0].spec).has_value());
}

TEST_F(FeatureCacheTest, CorruptEntryIsRecomputedWithWarning) {
  FeatureCache cache(dir_);
  SyntheticEncoder enc;
  auto first = extract_batch(std::span(images_).first(1), enc, &cache);
  const auto path = cache.entry_path(sha256_hex(images_[0].padded), "synthetic", images_[0].spec);
  fs::resize_file(path, fs::file_size(path) - 10);

  auto sink = std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(16);
  logger()->sinks().push_back(sink);
  SyntheticEncoder enc2;
  auto again = extract_batch(std::span(images_).first(1), enc2, &cache);
  logger()->sinks().pop_back();

  EXPECT_EQ(enc2.calls(), 1u);
  EXPECT_TRUE((first[0].features.array() == again[0].features.array()).all());
  auto logged = sink->last_formatted();
  ASSERT_FALSE(logged.empty());
  EXPECT_NE(logged.back().find("corrupt feature cache entry"), std::string::npos);
  // rewritten entry is valid again
  EXPECT_TRUE(cache.load(sha256_hex(images_[0].padded), "synthetic", images_[0].spec).has_value());
}

TEST_F(FeatureCacheTest, EntryHeaderDescribesShape) {
  FeatureCache cache(dir_);
  SyntheticEncoder enc;
  extract_batch(std::span(images_).first(1), enc, &cache);
  auto c = read_container(cache.entry_path(sha256_hex(images_[0].padded), "synthetic",
                                           images_[0].spec),
                          kFeatureMagic);
  EXPECT_EQ(c.header["rows"], images_[0].spec.token_rows);
  EXPECT_EQ(c.header["cols"], images_[0].spec.token_cols);
  EXPECT_EQ(c.header["dim"], 64);
  EXPECT_EQ(c.header["encoder_id"], "synthetic");
  EXPECT_EQ(c.payload.size(), std::size_t(images_[0].spec.token_count()) * 64 * 4);
}

}  // namespace
}  // namespace plantseg
