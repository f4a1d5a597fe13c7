#include <gtest/gtest.h>

#include <fstream>

#include "lcfed/config.hpp"
#include "support/fixtures.hpp"

using namespace lcfed;

TEST(Config, DefaultsValidate) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mode, Mode::lcfed);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.lambda, 0.1);
}

TEST(Config, ParseWithCommentsAndSpaces) {
  const auto c = parse_config("# a run\nmode = fedavg\n  rounds=12  # short\n\nchannels = 4, 8,16\nlr = 2e-3\n");
  EXPECT_EQ(c.mode, Mode::fedavg);
  EXPECT_EQ(c.rounds, 12u);
  EXPECT_EQ(c.channels, (std::vector<std::size_t>{4, 8, 16}));
  EXPECT_DOUBLE_EQ(c.lr, 2e-3);
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    parse_config("rounds = 3\nbogus = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  EXPECT_THROW(parse_config("rounds = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("rounds = 3x\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("mode = fedprox\n"), ConfigError);
  EXPECT_THROW(parse_config("pcs = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("precision = f16\n"), ConfigError);
  EXPECT_THROW(parse_config("just text\n"), ConfigError);
}

TEST(Config, ValidationRules) {
  auto bad = [](const std::string& kv) {
    ExperimentConfig c;
    apply_setting(c, kv);
    return c;
  };
  EXPECT_THROW(bad("lambda=-0.1").validate(), ConfigError);
  auto neg = bad("lambda=-0.1");
  apply_setting(neg, "allow_negative_lambda=true");
  EXPECT_NO_THROW(neg.validate());
  EXPECT_THROW(bad("nms_delta=4").validate(), ConfigError);
  EXPECT_THROW(bad("gauss_size=0").validate(), ConfigError);
  EXPECT_THROW(bad("gauss_sigma=0").validate(), ConfigError);
  EXPECT_THROW(bad("sites=0").validate(), ConfigError);
  EXPECT_THROW(bad("image_size=48").validate(), ConfigError);
  EXPECT_THROW(bad("stop_after=31").validate(), ConfigError);
  EXPECT_THROW(bad("lr=nan").validate(), ConfigError);
}

TEST(Config, ModesMapToMechanismsAndSharing) {
  struct Row {
    const char* mode;
    bool pcs, hc, body, heads;
  };
  for (const auto& r : {Row{"local", false, false, false, false}, Row{"fedavg", false, false, true, true},
                        Row{"fedrep-head", false, false, true, false}, Row{"lcfed", true, true, true, false},
                        Row{"lcfed-pcs-only", true, false, true, false},
                        Row{"lcfed-hc-only", false, true, true, false}}) {
    ExperimentConfig c;
    apply_setting(c, std::string("mode=") + r.mode);
    const auto f = c.federation();
    EXPECT_EQ(f.train.calibration.pcs, r.pcs) << r.mode;
    EXPECT_EQ(f.train.calibration.hc, r.hc) << r.mode;
    EXPECT_EQ(f.sharing.body, r.body) << r.mode;
    EXPECT_EQ(f.sharing.heads, r.heads) << r.mode;
  }
}

TEST(Config, TristateOverridesMode) {
  ExperimentConfig c;
  apply_setting(c, "pcs=false");
  apply_setting(c, "share_heads=true");
  EXPECT_FALSE(c.federation().train.calibration.pcs);
  EXPECT_TRUE(c.federation().train.calibration.hc);
  EXPECT_TRUE(c.sharing().heads);
  apply_setting(c, "pcs=auto");
  EXPECT_TRUE(c.federation().train.calibration.pcs);
  apply_setting(c, "personalize_pcs=true");
  EXPECT_FALSE(c.sharing().pcs);
}

TEST(Config, SerializeRoundTripsAndDigestIgnoresRunControls) {
  ExperimentConfig c;
  apply_setting(c, "mode=lcfed-hc-only");
  apply_setting(c, "lambda=0.25");
  apply_setting(c, "hc=true");
  const auto back = parse_config(serialize_config(c));
  EXPECT_EQ(serialize_config(back), serialize_config(c));
  EXPECT_EQ(config_digest(back), config_digest(c));
  auto d = c;
  d.out_dir = "elsewhere";
  d.workers = 4;
  d.eval_every = 3;
  EXPECT_EQ(config_digest(d), config_digest(c));
  d.master_seed = 2;
  EXPECT_NE(config_digest(d), config_digest(c));
}

TEST(Config, LoadFileAppliesOverridesLast) {
  const auto dir = lcfed::testing::fresh_dir("config");
  std::ofstream(dir / "a.cfg") << "rounds = 7\nsites = 2\n";
  const auto c = load_config((dir / "a.cfg").string(), {"rounds=9"});
  EXPECT_EQ(c.rounds, 9u);
  EXPECT_EQ(c.sites, 2u);
  EXPECT_THROW(load_config((dir / "missing.cfg").string()), ConfigError);
  std::ofstream(dir / "b.cfg") << "rounds = 0\n";
  EXPECT_THROW(load_config((dir / "b.cfg").string()), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Config, ShippedDefaultParses) {
  const auto c = load_config(LCFED_SOURCE_DIR "/configs/default.cfg");
  EXPECT_EQ(serialize_config(c, true), serialize_config(ExperimentConfig{}, true));
}
