#include <gtest/gtest.h>

#include "lcfed/metrics.hpp"
#include "support/oracles.hpp"

using namespace lcfed;
using lcfed::testing::brute_assd;
using lcfed::testing::random_mask;

namespace {

std::vector<std::uint8_t> rect(std::size_t H, std::size_t W, std::size_t y0, std::size_t x0, std::size_t h,
                               std::size_t w) {
  std::vector<std::uint8_t> m(H * W, 0);
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x) m[y * W + x] = 1;
  return m;
}

}  // namespace

TEST(IoU, OverlappingRectangles) {
  const auto a = rect(6, 6, 1, 1, 2, 3), b = rect(6, 6, 1, 2, 2, 3);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(IoU, EmptyCases) {
  std::vector<std::uint8_t> z(9, 0), one(9, 0);
  one[4] = 1;
  EXPECT_DOUBLE_EQ(iou(z, z), 1.0);
  EXPECT_DOUBLE_EQ(iou(one, z), 0.0);
  EXPECT_THROW(iou(z, std::vector<std::uint8_t>(8, 0)), std::invalid_argument);
}

TEST(Boundary, InnerPixelsAreNotBoundary) {
  const auto m = rect(5, 5, 1, 1, 3, 3);
  const auto b = boundary(m, 5, 5);
  EXPECT_EQ(b[2 * 5 + 2], 0);
  EXPECT_EQ(b[1 * 5 + 1], 1);
  EXPECT_EQ(b[0], 0);
  // A mask touching the image border has its border pixels on the boundary.
  const auto full = boundary(std::vector<std::uint8_t>(9, 1), 3, 3);
  EXPECT_EQ(full[4], 0);
  EXPECT_EQ(full[0], 1);
}

TEST(ASSD, KnownValues) {
  const auto a = rect(8, 8, 2, 2, 3, 3);
  EXPECT_EQ(assd(a, a, 8, 8), 0.0);
  std::vector<std::uint8_t> p(16 * 16, 0), q(16 * 16, 0);
  p[3 * 16 + 2] = 1;
  q[3 * 16 + 7] = 1;
  EXPECT_DOUBLE_EQ(assd(p, q, 16, 16), 5.0);
  q.assign(q.size(), 0);
  q[7 * 16 + 5] = 1;  // offset (4, 3)
  EXPECT_DOUBLE_EQ(assd(p, q, 16, 16), 5.0);
}

TEST(ASSD, EmptyMasks) {
  std::vector<std::uint8_t> z(64, 0);
  EXPECT_EQ(assd(z, z, 8, 8), 0.0);
  EXPECT_DOUBLE_EQ(assd(rect(8, 8, 1, 1, 2, 2), z, 8, 8), std::hypot(8.0, 8.0));
}

TEST(ASSD, MatchesAllPairsOracle) {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_mask(16, 16, rng), b = random_mask(16, 16, rng);
    EXPECT_NEAR(assd(a, b, 16, 16), brute_assd(a, b, 16, 16), 1e-9);
  }
}

TEST(ASSD, NonSquareImages) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto a = random_mask(9, 23, rng), b = random_mask(9, 23, rng);
    EXPECT_NEAR(assd(a, b, 9, 23), brute_assd(a, b, 9, 23), 1e-9);
  }
}

TEST(EvaluateSite, AveragesPerSample) {
  std::vector<Sample> test(2);
  for (auto& s : test) {
    s.height = 2;
    s.width = 2;
    s.image.assign(4, 0.0);
  }
  test[0].mask = {1, 1, 0, 0};
  test[1].mask = {1, 0, 0, 0};
  Predictor perfect_first = [](std::span<const Sample> batch) {
    std::vector<std::vector<double>> out;
    for (const auto& s : batch) {
      (void)s;
      out.push_back({0.9, 0.6, 0.1, 0.4});
    }
    return out;
  };
  const auto r = evaluate_site(perfect_first, test, 0.5, 1);
  EXPECT_EQ(r.samples, 2u);
  EXPECT_DOUBLE_EQ(r.mean_iou(), 0.75);
  EXPECT_THROW(evaluate_site(perfect_first, {}, 0.5), std::invalid_argument);
}
