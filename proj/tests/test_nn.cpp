#include <gtest/gtest.h>

#include "lcfed/nn.hpp"
#include "support/oracles.hpp"

using namespace lcfed;
using lcfed::testing::gradcheck;
using lcfed::testing::naive_conv2d;
using lcfed::testing::probe;
using lcfed::testing::random_tensor;

struct ConvCase {
  std::size_t B, Cin, H, W, Cout, k, stride, pad;
};

TEST(Conv, ForwardMatchesNaiveLoops) {
  const ConvCase cases[] = {{1, 1, 5, 5, 1, 3, 1, 1}, {2, 3, 7, 6, 4, 3, 1, 1}, {2, 2, 8, 8, 3, 3, 2, 1},
                            {1, 2, 6, 5, 2, 5, 1, 2}, {1, 3, 5, 5, 2, 3, 1, 0}, {2, 2, 9, 7, 3, 5, 2, 0},
                            {1, 4, 4, 4, 2, 1, 1, 0}};
  for (const auto& c : cases) {
    SCOPED_TRACE("B" + std::to_string(c.B) + " Cin" + std::to_string(c.Cin) + " " + std::to_string(c.H) + "x" +
                 std::to_string(c.W) + " Cout" + std::to_string(c.Cout) + " k" + std::to_string(c.k) + " s" +
                 std::to_string(c.stride) + " p" + std::to_string(c.pad));
    auto x = random_tensor({c.B, c.Cin, c.H, c.W}, 1);
    auto w = random_tensor({c.Cout, c.Cin, c.k, c.k}, 2);
    auto b = random_tensor({c.Cout}, 3);
    auto y = conv2d(x, w, b, c.stride, c.pad);
    std::size_t Ho = 0, Wo = 0;
    const auto ref = naive_conv2d(x.values(), c.B, c.Cin, c.H, c.W, w.values(), c.Cout, c.k, b.values(),
                                  c.stride, c.pad, Ho, Wo);
    ASSERT_EQ(y.shape(), (Shape{c.B, c.Cout, Ho, Wo}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-12) << i;
  }
}

TEST(Conv, Errors) {
  Tensor<double> x({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor<double>({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<double>({1, 2, 2, 2})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<double>({1, 2, 3, 3}), Tensor<double>({2})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor<double>({1, 2, 3, 3}), {}, 0), ShapeError);
}

TEST(GradCheck, Conv2d) {
  for (std::size_t stride : {1, 2}) {
    auto rep = gradcheck(
        [stride](const auto& in) { return probe(conv2d(in[0], in[1], in[2], stride)); },
        {random_tensor({2, 2, 5, 6}, 1), random_tensor({3, 2, 3, 3}, 2), random_tensor({3}, 3)});
    EXPECT_TRUE(rep.ok(23)) << rep.worst << " err " << rep.max_error;
  }
}

TEST(Pool, MaxPoolAndUpsample) {
  Tensor<double> x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 4, 2, 2});
  auto p = max_pool2(x);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(p.values(), (std::vector<double>{5, 2}));
  auto u = upsample2(p);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 2, 4}));
  EXPECT_EQ(u.values(), (std::vector<double>{5, 5, 2, 2, 5, 5, 2, 2}));
  EXPECT_THROW(max_pool2(Tensor<double>({1, 1, 3, 4})), ShapeError);
}

TEST(Pool, TiesRouteGradientToFirstMaximum) {
  Tensor<double> x({1, 1, 2, 2}, 1.0);
  x.set_requires_grad(true);
  sum(max_pool2(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(GradCheck, PoolUpsampleLinear) {
  // Distinct values keep max-pool away from ties.
  auto x = random_tensor({2, 2, 4, 6}, 11);
  EXPECT_TRUE(gradcheck([](const auto& in) { return probe(max_pool2(in[0])); }, {x}).ok(10));
  EXPECT_TRUE(gradcheck([](const auto& in) { return probe(upsample2(in[0])); }, {random_tensor({2, 2, 3, 2}, 12)}).ok(10));
  auto rep = gradcheck([](const auto& in) { return probe(per_pixel_linear(in[0], in[1], in[2])); },
                       {random_tensor({2, 3, 3, 3}, 1), random_tensor({3, 2}, 2), random_tensor({2}, 3)});
  EXPECT_TRUE(rep.ok(18)) << rep.worst;
}

TEST(InstanceNorm, NormalizesEachPlane) {
  auto x = random_tensor({2, 3, 4, 4}, 5, -3.0, 7.0);
  auto y = instance_norm(x, Tensor<double>::ones({3}), Tensor<double>::zeros({3}));
  for (std::size_t p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y.values()[p * 16 + i];
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += std::pow(y.values()[p * 16 + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-4);
  }
  EXPECT_THROW(instance_norm(Tensor<double>({2, 1}), Tensor<double>::ones({1}), Tensor<double>::zeros({1})),
               ShapeError);
}

TEST(GradCheck, InstanceNorm) {
  auto rep = gradcheck([](const auto& in) { return probe(instance_norm(in[0], in[1], in[2])); },
                       {random_tensor({2, 3, 3, 3}, 1), random_tensor({3}, 2, 0.5, 1.5), random_tensor({3}, 3)});
  EXPECT_TRUE(rep.ok(16)) << rep.worst << " err " << rep.max_error;
  rep = gradcheck([](const auto& in) { return probe(instance_norm(in[0], in[1], in[2])); },
                  {random_tensor({2, 5}, 4), random_tensor({5}, 5, 0.5, 1.5), random_tensor({5}, 6)});
  EXPECT_TRUE(rep.ok(20)) << rep.worst << " err " << rep.max_error;
}
