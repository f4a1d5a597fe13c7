#include <gtest/gtest.h>

#include <fstream>

#include "lcfed/checkpoint.hpp"
#include "support/fixtures.hpp"

using namespace lcfed;
using lcfed::testing::fresh_dir;
using lcfed::testing::tiny_experiment;

namespace {

template <typename T>
FederationState<T> trained_state(const ExperimentConfig& cfg, std::size_t rounds) {
  const auto data = generate_benchmark(cfg.benchmark());
  auto st = init_federation<T>(cfg.federation());
  for (std::size_t r = 0; r < rounds; ++r) st = run_round(st, data, cfg.federation()).state;
  return st;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = fresh_dir("ckpt_rt");
  const auto cfg = tiny_experiment(dir);
  const auto st = trained_state<double>(cfg, 2);
  save_checkpoint(dir / "a.ckpt", cfg, st);
  const auto file = CheckpointFile::read(dir / "a.ckpt");
  EXPECT_EQ(file.header().round, 2u);
  EXPECT_EQ(file.header().heads_stamp, 2u);
  EXPECT_EQ(file.header().precision, "f64");
  EXPECT_EQ(file.header().config_digest, config_digest(cfg));
  const auto back = load_checkpoint<double>(file, cfg);
  EXPECT_EQ(state_digest(back), state_digest(st));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, FloatStateRoundTrips) {
  const auto dir = fresh_dir("ckpt_f32");
  auto cfg = tiny_experiment(dir);
  cfg.precision = Precision::f32;
  const auto st = trained_state<float>(cfg, 1);
  save_checkpoint(dir / "a.ckpt", cfg, st);
  EXPECT_EQ(state_digest(load_checkpoint<float>(CheckpointFile::read(dir / "a.ckpt"), cfg)), state_digest(st));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, FreshStateWithoutOptimizerMoments) {
  const auto dir = fresh_dir("ckpt_fresh");
  const auto cfg = tiny_experiment(dir);
  const auto st = init_federation<double>(cfg.federation());
  save_checkpoint(dir / "a.ckpt", cfg, st);
  const auto file = CheckpointFile::read(dir / "a.ckpt");
  EXPECT_FALSE(file.has("site0/adam.m/enc1.conv1.weight"));
  EXPECT_EQ(state_digest(load_checkpoint<double>(file, cfg)), state_digest(st));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, HeaderIsReadableText) {
  const auto dir = fresh_dir("ckpt_text");
  const auto cfg = tiny_experiment(dir);
  save_checkpoint(dir / "a.ckpt", cfg, init_federation<double>(cfg.federation()));
  std::ifstream f(dir / "a.ckpt", std::ios::binary);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "LCFED-CHECKPOINT 1");
  bool saw_table_entry = false;
  while (std::getline(f, line) && line != "end-header")
    if (line.rfind("site0/enc1.conv1.weight 2x1x3x3 ", 0) == 0) saw_table_entry = true;
  EXPECT_TRUE(saw_table_entry);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsOtherConfigAndCorruption) {
  const auto dir = fresh_dir("ckpt_bad");
  const auto cfg = tiny_experiment(dir);
  save_checkpoint(dir / "a.ckpt", cfg, init_federation<double>(cfg.federation()));
  auto other = cfg;
  other.master_seed = 99;
  EXPECT_THROW(load_checkpoint<double>(CheckpointFile::read(dir / "a.ckpt"), other), CheckpointError);

  const auto bytes = lcfed::testing::slurp(dir / "a.ckpt");
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 16);
  EXPECT_THROW(CheckpointFile::read(dir / "trunc.ckpt"), CheckpointError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "NOT-A-CHECKPOINT\n";
  EXPECT_THROW(CheckpointFile::read(dir / "magic.ckpt"), CheckpointError);
  EXPECT_THROW(CheckpointFile::read(dir / "missing.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LittleEndianEncoding) {
  std::string out;
  detail::put_f64_le(out, 1.0);
  ASSERT_EQ(out.size(), 8u);
  EXPECT_EQ(static_cast<unsigned char>(out[7]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(out[6]), 0xf0);
  EXPECT_EQ(detail::get_f64_le(reinterpret_cast<const unsigned char*>(out.data())), 1.0);
}
