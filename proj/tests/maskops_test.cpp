#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "plantseg/maskops.hpp"

namespace plantseg {
namespace {

cv::Mat random_mask(int h, int w, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  cv::Mat m = make_mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at<std::uint8_t>(y, x) = b(rng);
  return m;
}

TokenMask token_mask(const cv::Mat& values) {
  TokenMask m;
  m.values = values;
  m.scores = cv::Mat(values.size(), CV_64FC1, cv::Scalar(0));
  m.spec = plan_geometry(14 * values.rows, 14 * values.cols);
  return m;
}

TEST(Components, DiagonalNeighboursDependOnConnectivity) {
  cv::Mat m = make_mask(3, 3);
  m.at<std::uint8_t>(0, 0) = 1;
  m.at<std::uint8_t>(1, 1) = 1;
  EXPECT_EQ(components(m, 8).size(), 1u);
  EXPECT_EQ(components(m, 4).size(), 2u);
  EXPECT_THROW(components(m, 6), UsageError);
}

TEST(Components, FullGridIsOneComponent) {
  auto comps = components(make_mask(7, 9, true));
  ASSERT_EQ(comps.size(), 1u);
  EXPECT_EQ(comps[0].size(), 63u);
  EXPECT_EQ(comps[0].bounds, (TokenBox{0, 0, 6, 8}));
}

TEST(Components, EmptyMaskHasNone) { EXPECT_TRUE(components(make_mask(5, 5)).empty()); }

TEST(Components, MinTokensDropsSmallOnes) {
  cv::Mat m = make_mask(6, 6);
  m.at<std::uint8_t>(0, 0) = 1;
  m(cv::Rect(2, 2, 3, 3)).setTo(1);
  EXPECT_EQ(components(m, 8, 1).size(), 2u);
  auto big = components(m, 8, 2);
  ASSERT_EQ(big.size(), 1u);
  EXPECT_EQ(big[0].size(), 9u);
  EXPECT_EQ(big[0].id, 0);
}

TEST(Components, OrderedByTopLeftThenFirstToken) {
  // two 4-connected components sharing the bounding-box corner (0,0)
  cv::Mat m = make_mask(3, 3);
  for (auto [r, c] : {std::pair{0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}}) m.at<std::uint8_t>(r, c) = 1;
  m.at<std::uint8_t>(0, 0) = 1;
  auto comps = components(m, 4);
  ASSERT_EQ(comps.size(), 2u);
  EXPECT_EQ(comps[0].tokens.front(), (TokenCoord{0, 0}));
  EXPECT_EQ(comps[1].tokens.size(), 5u);
}

TEST(Components, MatchFloodFillOracle) {
  for (int trial = 0; trial < 200; ++trial) {
    const double p = 0.2 + 0.5 * (trial % 5) / 4.0;
    auto m = random_mask(30, 30, p, 1000 + trial);
    for (int conn : {4, 8}) {
      auto comps = components(m, conn);
      auto [labels, count] = oracle::flood_fill(m, conn);
      ASSERT_EQ(static_cast<int>(comps.size()), count);
      // same partition: each library component maps to exactly one oracle label
      std::set<int> used;
      for (const auto& comp : comps) {
        const int lab = labels[comp.tokens.front().row * 30 + comp.tokens.front().col];
        ASSERT_TRUE(used.insert(lab).second);
        std::size_t members = 0;
        for (int i = 0; i < 900; ++i) members += labels[i] == lab;
        ASSERT_EQ(members, comp.size());
        for (const auto& t : comp.tokens) ASSERT_EQ(labels[t.row * 30 + t.col], lab);
      }
    }
  }
}

TEST(Boxes, SingleToken) {
  cv::Mat m = make_mask(5, 5);
  m.at<std::uint8_t>(0, 0) = 1;
  auto tm = token_mask(m);
  auto prompts = boxes(components(tm), tm.spec);
  ASSERT_EQ(prompts.size(), 1u);
  EXPECT_EQ(prompts[0].box, (PixelBox{0, 0, 13, 13}));
  EXPECT_EQ(prompts[0].token_area, 1u);
}

TEST(Boxes, LShapedComponent) {
  cv::Mat m = make_mask(6, 6);
  for (int r = 1; r <= 3; ++r) m.at<std::uint8_t>(r, 1) = 1;
  for (int c = 1; c <= 4; ++c) m.at<std::uint8_t>(3, c) = 1;
  auto tm = token_mask(m);
  auto prompts = boxes(components(tm), tm.spec);
  ASSERT_EQ(prompts.size(), 1u);
  // enumerate member pixel extents directly
  int xmin = 1 << 20, ymin = 1 << 20, xmax = -1, ymax = -1;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c)
      if (m.at<std::uint8_t>(r, c)) {
        xmin = std::min(xmin, 14 * c);
        ymin = std::min(ymin, 14 * r);
        xmax = std::max(xmax, 14 * c + 13);
        ymax = std::max(ymax, 14 * r + 13);
      }
  EXPECT_EQ(prompts[0].box, (PixelBox{xmin, ymin, xmax, ymax}));
  EXPECT_EQ(prompts[0].box, (PixelBox{14, 14, 69, 55}));
}

TEST(Boxes, EmptyComponentsGiveNoPrompts) {
  auto spec = plan_geometry(70, 70);
  EXPECT_TRUE(boxes(std::vector<Component>{}, spec).empty());
  EXPECT_TRUE(single_box(std::vector<Component>{}, spec).empty());
}

TEST(Boxes, MinimalAndContainAllMembers) {
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_mask(30, 30, 0.3, 5000 + trial);
    auto tm = token_mask(m);
    auto comps = components(tm);
    auto prompts = boxes(comps, tm.spec);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const auto& box = prompts[i].box;
      covered += comps[i].size();
      for (const auto& t : comps[i].tokens) {
        ASSERT_TRUE(box.contains(14 * t.col, 14 * t.row));
        ASSERT_TRUE(box.contains(14 * t.col + 13, 14 * t.row + 13));
      }
      // shrinking any side by one token leaves some member's block outside
      auto drops_member = [&](PixelBox b) {
        for (const auto& t : comps[i].tokens)
          if (!b.contains(14 * t.col, 14 * t.row) || !b.contains(14 * t.col + 13, 14 * t.row + 13))
            return true;
        return false;
      };
      PixelBox s = box;
      s.x_min += 14;
      EXPECT_TRUE(drops_member(s));
      s = box;
      s.y_min += 14;
      EXPECT_TRUE(drops_member(s));
      s = box;
      s.x_max -= 14;
      EXPECT_TRUE(drops_member(s));
      s = box;
      s.y_max -= 14;
      EXPECT_TRUE(drops_member(s));
    }
    EXPECT_EQ(covered, static_cast<std::size_t>(count_true(m)));
  }
}

TEST(Boxes, ClippedToContent) {
  auto spec = plan_geometry(100, 100);  // padded 112, 12 px pad on each
  cv::Mat m = make_mask(spec.token_rows, spec.token_cols);
  m.at<std::uint8_t>(7, 7) = 1;
  TokenMask tm{m, cv::Mat(m.size(), CV_64FC1, cv::Scalar(0)), spec};
  auto prompts = boxes(components(tm), spec);
  EXPECT_EQ(prompts[0].box, (PixelBox{98, 98, 99, 99}));
}

TEST(CoarseMask, AllTrueStaysAllTrue) {
  auto cm = coarse_mask(token_mask(make_mask(74, 108, true)));
  EXPECT_EQ(cm.values.rows, 256);
  EXPECT_EQ(cm.values.cols, 256);
  EXPECT_EQ(cv::countNonZero(cm.values), 256 * 256);
}

TEST(CoarseMask, SingleTokenNeverErased) {
  for (int r : {0, 13, 37, 73})
    for (int c : {0, 21, 73}) {
      cv::Mat m = make_mask(74, 74);
      m.at<std::uint8_t>(r, c) = 1;
      EXPECT_GE(cv::countNonZero(coarse_mask(token_mask(m)).values), 1);
    }
}

TEST(CoarseMask, MatchesCellCoverageOracle) {
  const std::pair<int, int> shapes[] = {{74, 108}, {72, 108}, {10, 13}, {300, 280}, {1, 1}, {256, 256}};
  int seed = 0;
  for (auto [h, w] : shapes) {
    for (double p : {0.02, 0.3}) {
      auto m = random_mask(h, w, p, 77 + seed++);
      EXPECT_TRUE(masks_equal(coarse_mask(token_mask(m)).values, oracle::coarse_cell_coverage(m)))
          << h << "x" << w << " p=" << p;
    }
  }
}

TEST(CoarseMask, Monotone) {
  auto m = random_mask(40, 50, 0.1, 3);
  auto before = coarse_mask(token_mask(m)).values;
  auto more = m.clone();
  more |= random_mask(40, 50, 0.1, 4);
  auto after = coarse_mask(token_mask(more)).values;
  cv::Mat lost = before & (after == 0);
  EXPECT_EQ(cv::countNonZero(lost), 0);
}

TEST(CoarseMask, LogitsAreSigned) {
  cv::Mat m = make_mask(4, 4);
  m.at<std::uint8_t>(0, 0) = 1;
  auto cm = coarse_mask(token_mask(m));
  auto logits = coarse_logits(cm);
  EXPECT_FLOAT_EQ(logits.at<float>(0, 0), 6.0f);
  EXPECT_FLOAT_EQ(logits.at<float>(255, 255), -6.0f);
}

TEST(CoarseMask, UpsampleCoversEveryPositiveToken) {
  auto spec = plan_geometry(14 * 37, 14 * 53);
  auto m = random_mask(37, 53, 0.2, 8);
  TokenMask tm{m, cv::Mat(m.size(), CV_64FC1, cv::Scalar(0)), spec};
  auto up = upsample_coarse(coarse_mask(tm), spec.padded_h, spec.padded_w);
  auto tokens = expand_tokens(m, spec);
  cv::Mat missed = tokens & (up == 0);
  EXPECT_EQ(cv::countNonZero(missed), 0);
}

TEST(MaskUnion, Identities) {
  auto a = random_mask(20, 30, 0.4, 1);
  EXPECT_TRUE(masks_equal(mask_union(std::vector{a}, 20, 30), a));
  cv::Mat not_a = (a == 0) / 255;
  EXPECT_EQ(count_true(mask_union(std::vector{a, not_a}, 20, 30)), 600);
  EXPECT_EQ(count_true(mask_union(std::vector<cv::Mat>{}, 20, 30)), 0);
  EXPECT_TRUE(masks_equal(mask_union(std::vector{a, a}, 20, 30), a));
}

TEST(MaskUnion, MatchesPixelOrOracle) {
  for (int t = 0; t < 50; ++t) {
    auto a = random_mask(17, 23, 0.2, 3 * t), b = random_mask(17, 23, 0.3, 3 * t + 1),
         c = random_mask(17, 23, 0.1, 3 * t + 2);
    auto u = mask_union(std::vector{a, b, c}, 17, 23);
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 23; ++x)
        ASSERT_EQ(u.at<std::uint8_t>(y, x),
                  (a.at<std::uint8_t>(y, x) | b.at<std::uint8_t>(y, x) | c.at<std::uint8_t>(y, x)));
    // associative and commutative
    auto ab = mask_union(std::vector{a, b}, 17, 23);
    EXPECT_TRUE(masks_equal(mask_union(std::vector{ab, c}, 17, 23), u));
    EXPECT_TRUE(masks_equal(mask_union(std::vector{c, b, a}, 17, 23), u));
  }
}

TEST(MaskUnion, RejectsSizeMismatch) {
  EXPECT_THROW(mask_union(std::vector{make_mask(3, 3)}, 3, 4), SizingError);
}

}  // namespace
}  // namespace plantseg
