#include <gtest/gtest.h>

#include "lcfed/losses.hpp"
#include "support/oracles.hpp"

using namespace lcfed;
using lcfed::testing::gradcheck;
using lcfed::testing::random_tensor;

TEST(Dice, PerfectAndDisjoint) {
  Tensor<double> g({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(g, g).item(), 0.0, 1e-12);
  Tensor<double> s({1, 1, 2, 2}, std::vector<double>{0, 0, 1, 1});
  EXPECT_NEAR(dice_loss(s, g).item(), 1.0, 1e-5);
}

TEST(Dice, EmptyPredictionAndTargetIsPerfect) {
  Tensor<double> z({1, 1, 3, 3}, 0.0);
  EXPECT_NEAR(dice_loss(z, z).item(), 0.0, 1e-12);
}

TEST(Dice, AveragesOverSamplesAndClasses) {
  Tensor<double> g({2, 1, 1, 2}, std::vector<double>{1, 0, 1, 0});
  Tensor<double> s({2, 1, 1, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_NEAR(dice_loss(s, g, 0.0).item(), 0.5, 1e-12);
  EXPECT_THROW(dice_loss(s, Tensor<double>({2, 1, 2, 1})), ShapeError);
}

TEST(GradCheck, Dice) {
  auto rep = gradcheck([](const auto& in) { return dice_loss(in[0], in[1]); },
                       {random_tensor({2, 2, 3, 3}, 1, 0.05, 0.95), random_tensor({2, 2, 3, 3}, 2, 0.0, 1.0)});
  EXPECT_TRUE(rep.ok(20)) << rep.worst;
}

TEST(JointLoss, CombinesWithLambda) {
  auto c = Tensor<double>::scalar(0.5), k = Tensor<double>::scalar(0.25), n = Tensor<double>::scalar(-2.0);
  auto l = joint_loss(c, k, n, 0.1);
  EXPECT_DOUBLE_EQ(l.joint.item(), 0.55);
  EXPECT_DOUBLE_EQ(joint_loss(c, k, n, 0.0).joint.item(), 0.75);
}

TEST(JointLoss, RejectsNonFinite) {
  auto ok = Tensor<double>::scalar(0.5);
  auto bad = Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(joint_loss(ok, bad, ok), std::runtime_error);
  EXPECT_THROW(joint_loss(ok, ok, ok, std::numeric_limits<double>::infinity()), std::invalid_argument);
  EXPECT_THROW(joint_loss(ok, ok, Tensor<double>({2})), ShapeError);
}
