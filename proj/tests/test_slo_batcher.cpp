#include <gtest/gtest.h>

#include "streamserve/slo_batcher.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace streamserve;
using namespace testing_support;

using oracles::select_batch_scan;
using oracles::SloFixture;

TEST(SelectBatch, MatchesExhaustiveSearch) {
  Rng rng(21);
  int feasible = 0;
  for (int i = 0; i < 1000; ++i) {
    const SloFixture f = oracles::random_slo_fixture(rng);
    const BatchDecision got = select_batch(f.slo, f.dev, f.model, f.shape, f.buffered, f.b_max);
    const BatchDecision want = select_batch_scan(f.slo, f.dev, f.model, f.shape, f.buffered, f.b_max);
    ASSERT_EQ(got.feasible, want.feasible) << "fixture " << i;
    ASSERT_EQ(got.batch_B, want.batch_B) << "fixture " << i;
    EXPECT_EQ(got.predicted_latency, want.predicted_latency);
    EXPECT_LE(got.batch_B * got.chunk_frames_T, f.buffered);
    feasible += got.feasible;
  }
  EXPECT_GT(feasible, 100);
  EXPECT_LT(feasible, 900);
}

TEST(SelectBatch, ComputeBoundTiesGoToSmallestBatch) {
  DeviceSpec d;
  d.peak_flops = 1e9;
  d.hbm_bandwidth = 1e15;
  d.link_bandwidth = 1e9;
  ModelSpec m;
  m.param_count = 1;
  m.per_block_flops_per_token = 1e6;
  m.per_block_bytes_per_token = 1;
  StreamShape s;
  s.chunk_frames_T = 2;
  const BatchDecision b = select_batch(SloTarget{1.0, 10.0, 1.0}, d, m, s, 64, 8);
  EXPECT_TRUE(b.feasible);
  EXPECT_EQ(b.batch_B, 1);
  EXPECT_EQ(b.regime, Regime::compute_bound);
}

TEST(SelectBatch, NeedsOneChunkOfInput) {
  StreamShape s = shape480();
  try {
    select_batch(SloTarget::for_fps(16), h100(), wan13(), s, 3, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_enough_input);
  }
}

TEST(Aimd, HalvesOnMissAndGrowsAfterStreak) {
  const SloTarget slo{16.0, 0.1, 1.0};
  AimdController c(BatchDecision{6, 4, 0, 0, Regime::memory_bound, true}, slo, AimdConfig{8, 2});
  EXPECT_EQ(c.observe(0.5).batch_B, 3);  // budget 0.4 s
  EXPECT_EQ(c.observe(0.5).batch_B, 1);
  EXPECT_EQ(c.observe(0.5).batch_B, 1);
  EXPECT_FALSE(c.decision().feasible);
  EXPECT_EQ(c.observe(0.1).batch_B, 1);
  EXPECT_EQ(c.observe(0.1).batch_B, 2);
  EXPECT_EQ(c.streak(), 0);
}

TEST(Aimd, StatelessFormStepsEveryCompliantObservation) {
  const SloTarget slo{16.0, 0.1, 1.0};
  BatchDecision d{1, 4, 0, 0, Regime::memory_bound, true};
  for (int i = 0; i < 10; ++i) d = adapt(d, 0.2, slo, AimdConfig{4, 3});
  EXPECT_EQ(d.batch_B, 4);
}

TEST(Aimd, ConvergesUnderConstantLatency) {
  Rng rng(22);
  for (int i = 0; i < 500; ++i) {
    const int b_max = rng.uniform_int(1, 16);
    const int streak = rng.uniform_int(1, 5);
    const SloTarget slo{16.0, 0.05, 1.0};
    const double lat = rng.uniform(0.01, 0.5);
    AimdController c(BatchDecision{rng.uniform_int(1, b_max), 2, 0, 0, Regime::memory_bound, true}, slo,
                     AimdConfig{b_max, streak});
    const int bound = b_max + streak * b_max;
    for (int t = 0; t < bound; ++t) {
      c.observe(lat);
      ASSERT_GE(c.decision().batch_B, 1);
      ASSERT_LE(c.decision().batch_B, b_max);
    }
    const int fixed = c.decision().batch_B;
    EXPECT_EQ(fixed, lat > 0.1 ? 1 : b_max);
    for (int t = 0; t < 3 * streak; ++t) EXPECT_EQ(c.observe(lat).batch_B, fixed);
  }
}
