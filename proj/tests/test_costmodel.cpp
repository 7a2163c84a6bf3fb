#include <gtest/gtest.h>

#include "streamserve/costmodel.hpp"
#include "test_support.hpp"

using namespace streamserve;
using namespace testing_support;

TEST(Roofline, RidgeIsPeakOverBandwidth) {
  const DeviceSpec d = h100();
  EXPECT_EQ(ridge_intensity(d), 1.979e15 / 3.35e12);
  EXPECT_NEAR(ridge_intensity(d), 590.75, 0.01);
}

TEST(Roofline, RegimeMatchesRidgeComparison) {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const DeviceSpec d = random_device(rng);
    const double bytes = log_uniform(rng, 1e3, 1e12);
    const double flops = bytes * log_uniform(rng, 1e-2, 1e5);
    const RooflinePoint p = roofline_point(d, flops, bytes);
    const bool memory = flops / bytes < d.peak_flops / d.hbm_bandwidth;
    EXPECT_EQ(p.regime, memory ? Regime::memory_bound : Regime::compute_bound);
    EXPECT_LE(p.attained_flops, d.peak_flops);
  }
}

TEST(Latency, MemoryLawIsAffineInMembers) {
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const DeviceSpec d = random_device(rng);
    const ModelSpec m = random_model(rng);
    const StreamShape s = random_shape(rng);
    const double b1 = rng.uniform_int(1, 16);
    const double b2 = rng.uniform_int(1, 16);
    const double lhs = memory_bound_latency(d, m, s, b1 + b2) + memory_bound_latency(d, m, s, 0);
    const double rhs = memory_bound_latency(d, m, s, b1) + memory_bound_latency(d, m, s, b2);
    EXPECT_NEAR(lhs, rhs, 1e-12 * rhs);
  }
}

TEST(Latency, HandComputedBlock) {
  DeviceSpec d;
  d.peak_flops = 1e12;
  d.hbm_bandwidth = 1e9;
  d.bandwidth_utilization_eta = 0.5;
  d.link_bandwidth = 1e9;
  ModelSpec m;
  m.param_count = 1000;
  m.bytes_per_param = 2;
  m.num_blocks = 4;
  m.per_block_flops_per_token = 10;
  m.per_block_bytes_per_token = 100;
  StreamShape s;
  s.chunk_frames_T = 2;
  s.height_H = 4;
  s.width_W = 4;
  // 32 tokens * 3 members; 2 blocks: act 19200 B, params 1000 B, flops 1920.
  const LatencyBreakdown lb = block_range_latency(d, m, s, 3, 2);
  EXPECT_DOUBLE_EQ(lb.memory_seconds, 20200.0 / 5e8);
  EXPECT_DOUBLE_EQ(lb.compute_seconds, 1920.0 / 5e11);
  EXPECT_DOUBLE_EQ(lb.seconds, lb.memory_seconds);
  EXPECT_EQ(lb.roofline.regime, Regime::memory_bound);
}

TEST(Throughput, MonotoneAndUnderBandwidthRoof) {
  Rng rng(13);
  for (int i = 0; i < 300; ++i) {
    const DeviceSpec d = random_device(rng);
    const ModelSpec m = random_model(rng);
    StreamShape s = random_shape(rng);
    double prev = 0.0;
    for (int b = 1; b <= 32; ++b) {
      s.batch_B = b;
      const double fps = throughput(d, m, s);
      EXPECT_GE(fps, prev * (1 - 1e-12));
      EXPECT_LE(fps, throughput_bandwidth_asymptote(d, m, s) * (1 + 1e-12));
      prev = fps;
    }
  }
}

TEST(FirstFrame, AnchorReproducesFiveThirtyOne) {
  const StreamShape s = [] {
    StreamShape x = shape480(1, 81);
    return x;
  }();
  // 2 * B * T * H * W * P / (C * rho), C * rho ~ 1.5839e16
  const double c_rho = h100().sustained_flops * wan13().pixel_to_token_ratio;
  EXPECT_NEAR(c_rho, 1.583902e16, 1e-6 * c_rho);
  const double oracle = 2.0 * 81 * 480 * 832 * 1.3e9 / c_rho;
  const double got = ttff_estimate(h100(), wan13(), s, 16.0, TtffMode::processing_only);
  EXPECT_NEAR(got, 5.31, 0.01 * 5.31);
  EXPECT_NEAR(got, oracle, 1e-9 * oracle);
  EXPECT_NEAR(ttff_estimate(h100(), wan13(), s, 16.0), 81.0 / 16.0 + got, 1e-12);
}

TEST(FirstFrame, LinearInEachFactor) {
  Rng rng(14);
  for (int i = 0; i < 200; ++i) {
    DeviceSpec d = random_device(rng);
    ModelSpec m = random_model(rng);
    StreamShape s = random_shape(rng);
    const double base = ttff_processing(d, m, s);
    StreamShape s2 = s;
    s2.batch_B *= 3;
    EXPECT_NEAR(ttff_processing(d, m, s2), 3 * base, 1e-12 * base);
    s2 = s;
    s2.chunk_frames_T *= 2;
    EXPECT_NEAR(ttff_processing(d, m, s2), 2 * base, 1e-12 * base);
    ModelSpec m2 = m;
    m2.param_count *= 5;
    EXPECT_NEAR(ttff_processing(d, m2, s), 5 * base, 1e-12 * base);
    m2 = m;
    m2.pixel_to_token_ratio *= 2;
    EXPECT_NEAR(ttff_processing(d, m2, s), base / 2, 1e-12 * base);
    DeviceSpec d2 = d;
    d2.peak_flops *= 4;
    EXPECT_NEAR(ttff_processing(d2, m, s), base / 4, 1e-12 * base);
  }
}

TEST(FirstFrame, CalibrationRoundTrip) {
  const StreamShape s = shape480(1, 81);
  const double c_rho = calibrate_compute_token_product(wan13(), s, 5.31);
  EXPECT_NEAR(c_rho, 1.5839e16, 1e12);
  DeviceSpec d = h100();
  d.sustained_flops = c_rho / wan13().pixel_to_token_ratio;
  EXPECT_NEAR(ttff_processing(d, wan13(), s), 5.31, 1e-12);
}

TEST(FirstFrame, RejectsBadInput) {
  EXPECT_THROW(ttff_estimate(h100(), wan13(), shape480(), 0.0), Error);
  StreamShape s = shape480();
  s.batch_B = 0;
  EXPECT_THROW(ttff_estimate(h100(), wan13(), s, 16.0), Error);
  EXPECT_THROW(calibrate_compute_token_product(wan13(), shape480(), 0.0), Error);
}

TEST(Comm, HandComputedCosts) {
  const DeviceSpec d = h100();
  const double full = 1536.0 * 1536 * 2;
  const double pp = full / 4.5e11 + 6e-6;
  const double uly = 60 * (full / 4 / 4.5e11 + 6e-6);
  const double ring = 30 * (full / 4.5e11 + 6e-6);
  auto cost = [&](CommStrategy st, int g) {
    return comm_cost(CommQuery{st, 1536.0, 1536, 2.0, g, 30}, d);
  };
  EXPECT_NEAR(cost(CommStrategy::pipeline_p2p, 2).seconds, pp, 1e-18);
  EXPECT_NEAR(cost(CommStrategy::ulysses_all_to_all, 2).seconds, uly, 1e-15);
  EXPECT_NEAR(cost(CommStrategy::ring_kv, 2).seconds, ring, 1e-15);
  EXPECT_EQ(cost(CommStrategy::ulysses_all_to_all, 2).messages, 60);
  EXPECT_EQ(cost(CommStrategy::ring_kv, 4).messages, 90);
  const double r = uly / pp;
  EXPECT_GE(r, 20.0);
  EXPECT_LE(r, 40.0);
}

TEST(Comm, SingleGpuIsFree) {
  for (auto st : {CommStrategy::pipeline_p2p, CommStrategy::ulysses_all_to_all, CommStrategy::ring_kv}) {
    const CommCost c = comm_cost(CommQuery{st, 4096, 1536, 2.0, 1, 30}, h100());
    EXPECT_EQ(c.seconds, 0.0);
    EXPECT_EQ(c.messages, 0);
  }
}

TEST(Comm, StrategyNames) {
  EXPECT_EQ(parse_comm_strategy("ulysses"), CommStrategy::ulysses_all_to_all);
  EXPECT_EQ(parse_comm_strategy("ring_kv"), CommStrategy::ring_kv);
  EXPECT_EQ(parse_comm_strategy(to_string(CommStrategy::pipeline_p2p)), CommStrategy::pipeline_p2p);
  EXPECT_THROW(parse_comm_strategy("nccl"), Error);
}

TEST(Validation, RejectsOutOfRangeSpecs) {
  DeviceSpec d = h100();
  d.bandwidth_utilization_eta = 1.5;
  EXPECT_THROW(validate(d), Error);
  ModelSpec m = wan13();
  m.pixel_to_token_ratio = 0.5;
  EXPECT_THROW(validate(m), Error);
  StreamShape s;
  s.denoise_steps_n = 0;
  EXPECT_THROW(validate(s), Error);
}
