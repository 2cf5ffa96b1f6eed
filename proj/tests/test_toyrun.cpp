#include <gtest/gtest.h>

#include <sstream>

#include "evseq/toyrun.hpp"

using namespace evseq;

TEST(ToyRun, SmokePresetLearns) {
  const auto c = toy_preset("smoke");
  const auto data = make_toy_data(c);
  ASSERT_EQ(data.train.size(), 64u);
  ASSERT_EQ(data.test.size(), 16u);
  std::ostringstream log;
  const auto r = run_toy(c, data, &log);
  ASSERT_EQ(r.history.epochs.size(), c.train.epochs);
  const auto& h = r.history.epochs;
  EXPECT_LT(h.back().mean_loss, 0.5);
  EXPECT_LT(h.back().mean_loss, h.front().mean_loss);
  // Three-epoch moving average never rises.
  for (std::size_t e = 3; e < h.size(); ++e) {
    const double prev = (h[e - 3].mean_loss + h[e - 2].mean_loss + h[e - 1].mean_loss) / 3;
    const double cur = (h[e - 2].mean_loss + h[e - 1].mean_loss + h[e].mean_loss) / 3;
    EXPECT_LE(cur, prev + 1e-9) << "epoch " << e;
  }
  for (const auto& rec : h) {
    for (double v : rec.head_loss) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_TRUE(r.test_report.values.count("F1"));
  EXPECT_TRUE(r.test_report.values.count("R1@0.5"));
  EXPECT_FALSE(log.str().empty());
}

TEST(ToyRun, DataSplitsUseDistinctSeeds) {
  auto c = toy_preset("smoke");
  const auto d = make_toy_data(c);
  EXPECT_EQ(d.train.seed, c.seed);
  EXPECT_EQ(d.test.seed, c.seed + 1);
  EXPECT_NE(d.train.samples[0].features, d.test.samples[0].features);
  c.seed = 9;
  EXPECT_NE(make_toy_data(c).train.samples[0].features, d.train.samples[0].features);
}

TEST(ToyRun, GenerateOptionsFollowConfig) {
  auto c = toy_preset("default");
  apply_setting(c, "constrained", "off");
  apply_setting(c, "max_events", "4");
  apply_setting(c, "max_new_tokens", "99");
  const auto g = toy_generate_options(c);
  EXPECT_FALSE(g.constrained);
  EXPECT_EQ(g.max_events, 4u);
  EXPECT_EQ(g.max_tokens, 99u);
}
