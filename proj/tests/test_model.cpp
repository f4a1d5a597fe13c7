#include <gtest/gtest.h>

#include "lcfed/federation.hpp"
#include "support/oracles.hpp"

using namespace lcfed;
using lcfed::testing::gradcheck;
using lcfed::testing::probe;
using lcfed::testing::random_tensor;

namespace {

ModelConfig tiny(std::size_t sites = 3) {
  ModelConfig m;
  m.sites = sites;
  m.channels = {2, 4};
  m.image_size = 8;
  return m;
}

HeadCollection<double> heads_of(const std::vector<ParamSet<double>>& sets) {
  HeadCollection<double> hc;
  for (const auto& p : sets) hc.heads.push_back({p.at("head.coarse.weight"), p.at("head.coarse.bias")});
  return hc;
}

}  // namespace

TEST(Model, ParameterLayout) {
  auto p = SegModel<double>::init_params(tiny(), 1);
  EXPECT_EQ(p.at("enc1.conv1.weight").shape(), (Shape{2, 1, 3, 3}));
  EXPECT_EQ(p.at("enc2.conv1.weight").shape(), (Shape{4, 2, 3, 3}));
  EXPECT_EQ(p.at("dec2.conv1.weight").shape(), (Shape{2, 8, 3, 3}));
  EXPECT_EQ(p.at("dec1.conv1.weight").shape(), (Shape{2, 4, 3, 3}));
  EXPECT_EQ(p.at("pcs.ext1.weight").shape(), (Shape{3, 4}));
  EXPECT_EQ(p.at("head.calib.weight").shape(), (Shape{2, 1}));
  std::size_t heads = 0;
  for (const auto& np : p) heads += np.group == Group::head;
  EXPECT_EQ(heads, 4u);
}

TEST(Model, InitIsSeedDeterministic) {
  auto a = SegModel<double>::init_params(tiny(), 5), b = SegModel<double>::init_params(tiny(), 5);
  auto c = SegModel<double>::init_params(tiny(), 6);
  EXPECT_EQ(a.at("enc1.conv1.weight").values(), b.at("enc1.conv1.weight").values());
  EXPECT_NE(a.at("enc1.conv1.weight").values(), c.at("enc1.conv1.weight").values());
}

TEST(Model, ForwardShapes) {
  auto cfg = tiny();
  cfg.classes = 2;
  auto p = SegModel<double>::init_params(cfg, 1);
  SegModel<double> m(cfg, p);
  auto hc = heads_of({p, p, p});
  auto out = m.forward(random_tensor({2, 1, 8, 8}, 1, 0, 1), 1, CalibrationOptions{.nms_delta = 3, .gauss_size = 3}, &hc);
  EXPECT_EQ(out.coarse.shape(), (Shape{2, 2, 8, 8}));
  EXPECT_EQ(out.calibrated.shape(), (Shape{2, 2, 8, 8}));
  EXPECT_EQ(out.gate.shape(), (Shape{2, 4}));
  EXPECT_EQ(out.attention.shape(), (Shape{2, 2, 8, 8}));
  EXPECT_EQ(out.contrast.numel(), 1u);
  EXPECT_THROW(m.forward(random_tensor({1, 1, 6, 6}, 1), 0, {}), ShapeError);
  EXPECT_THROW(m.forward(random_tensor({1, 2, 8, 8}, 1), 0, {}), ShapeError);
}

TEST(Model, SwitchesOff) {
  auto p = SegModel<double>::init_params(tiny(), 1);
  SegModel<double> m(tiny(), p);
  auto hc = heads_of({p, p, p});
  auto out = m.forward(random_tensor({1, 1, 8, 8}, 1, 0, 1), 0, CalibrationOptions{.pcs = false, .hc = false}, &hc);
  EXPECT_FALSE(out.gate.defined());
  EXPECT_FALSE(out.attention.defined());
  EXPECT_EQ(out.contrast.item(), 0.0);
}

TEST(Model, IdenticalHeadsGiveZeroAttention) {
  auto p = SegModel<double>::init_params(tiny(), 1);
  SegModel<double> m(tiny(), p);
  auto hc = heads_of({p, p, p});
  const CalibrationOptions opts{.pcs = false, .hc = true, .nms_delta = 3, .gauss_size = 3};
  auto x = random_tensor({1, 1, 8, 8}, 1, 0, 1);
  auto with = m.forward(x, 0, opts, &hc);
  for (double a : with.attention.values()) EXPECT_EQ(a, 0.0);
  auto without = m.forward(x, 0, CalibrationOptions{.pcs = false, .hc = false}, &hc);
  EXPECT_EQ(with.calibrated.values(), without.calibrated.values());
}

TEST(Model, ContrastIsSkippedWithoutGrad) {
  auto p = SegModel<double>::init_params(tiny(), 1);
  SegModel<double> m(tiny(), p);
  NoGradGuard g;
  EXPECT_EQ(m.forward(random_tensor({1, 1, 8, 8}, 1), 0, {}).contrast.item(), 0.0);
}

TEST(Model, WrongHeadCountThrows) {
  auto p = SegModel<double>::init_params(tiny(), 1);
  SegModel<double> m(tiny(), p);
  auto hc = heads_of({p, p});
  EXPECT_THROW(m.forward(random_tensor({1, 1, 8, 8}, 1), 0, {}, &hc), std::invalid_argument);
}

TEST(Model, ConfigValidation) {
  auto cfg = tiny();
  cfg.image_size = 6;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny();
  cfg.channels.clear();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(GradCheck, WholeModelSubsetOfWeights) {
  // Full forward with both calibration mechanisms on. The stop-gradient
  // branches are made truly constant so that finite differences see the
  // same function: the contrast term has weight 0 and foreign heads have
  // zero weights, so their maps do not depend on the features.
  const auto cfg = tiny();
  const auto base = SegModel<double>::init_params(cfg, 3);
  HeadCollection<double> hc;
  for (double b : {0.4, 0.0, -0.3}) hc.heads.push_back({Tensor<double>::zeros({2, 1}), Tensor<double>::scalar(b)});
  const auto x = random_tensor({1, 1, 8, 8}, 9, 0, 1);
  const auto g = random_tensor({1, 1, 8, 8}, 10, 0, 1);
  const CalibrationOptions opts{.nms_delta = 3, .gauss_size = 3, .gauss_sigma = 1.0};
  std::vector<Tensor<double>> inputs;
  for (const auto& np : base) inputs.push_back(np.value.clone());
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    ParamSet<double> q;
    for (std::size_t i = 0; i < base.size(); ++i) q.add(base[i].name, base[i].group, in[i]);
    SegModel<double> m(cfg, q);
    auto out = m.forward(x, 1, opts, &hc);
    return joint_loss(dice_loss(out.coarse, g), dice_loss(out.calibrated, g), out.contrast, 0.0).joint;
  };
  auto rep = gradcheck(fn, inputs, 3);
  EXPECT_GE(rep.checked, 40u);
  EXPECT_LT(rep.max_error, lcfed::testing::kFdTolerance) << rep.worst;
}

TEST(Model, OverfitsOneBatch) {
  auto cfg = tiny(2);
  cfg.channels = {4, 8};
  cfg.image_size = 16;
  auto p = SegModel<double>::init_params(cfg, 2);
  SegModel<double> m(cfg, p);
  Adam<double> opt(AdamOptions{.lr = 1e-2});
  auto data = generate_site(make_site_style(7, 0), 4, 11, 0, 16, 16, 1);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  auto [x, g] = make_batch<double>(data, idx);
  TrainOptions o;
  o.calibration.hc = false;
  std::vector<double> losses;
  for (int i = 0; i < 20; ++i) losses.push_back(train_step<double>(m, p, opt, x, g, 0, nullptr, o).coarse);
  auto avg5 = [&](std::size_t from) { return (losses[from] + losses[from + 1] + losses[from + 2] + losses[from + 3] + losses[from + 4]) / 5; };
  EXPECT_LT(avg5(15), avg5(0) - 0.05);
}
