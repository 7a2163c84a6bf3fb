#include <gtest/gtest.h>

#include <sstream>

#include "streamserve/ref_kernels.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace streamserve;
using namespace testing_support;

namespace {

std::vector<long> iota(int n, long from = 0) {
  std::vector<long> v(n);
  for (int i = 0; i < n; ++i) v[i] = from + i;
  return v;
}

Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& p,
                       std::vector<std::vector<double>>* probs = nullptr) {
  return oracles::naive_attention(q, k, v, p.head_dim, p.num_heads, probs);
}

}  // namespace

TEST(Attention, MatchesNaiveOracle) {
  Rng rng(71);
  for (int iter = 0; iter < 50; ++iter) {
    const AttentionParams p = AttentionParams::make(2 * rng.uniform_int(1, 16), rng.uniform_int(1, 3));
    const int n = rng.uniform_int(1, 24);
    const Tensor q = random_tensor({n, p.width()}, rng);
    const Tensor k = random_tensor({n, p.width()}, rng);
    const Tensor v = random_tensor({n, p.width()}, rng);
    EXPECT_LE(max_abs_diff(attention_full(q, k, v, iota(n), p), naive_attention(q, k, v, p)), 1e-12);
  }
}

TEST(Attention, RowsSumToOne) {
  Rng rng(72);
  const AttentionParams p = AttentionParams::make(8);
  const Tensor q = random_tensor({16, 8}, rng, 3.0);
  const Tensor k = random_tensor({16, 8}, rng, 3.0);
  // With V = identity-like one-hot columns the output row is the weight row.
  Tensor v({16, 8});
  for (int j = 0; j < 16; ++j) v.at(j, 0) = 1.0;
  const Tensor out = attention_full(q, k, v, iota(16), p);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(out.at(i, 0), 1.0, 1e-12);
  std::vector<std::vector<double>> probs;
  naive_attention(q, k, v, p, &probs);
  for (const auto& row : probs) {
    double s = 0.0;
    for (double x : row) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, StreamingEqualsFullWhenWindowCoversHistory) {
  Rng rng(73);
  for (int iter = 0; iter < 40; ++iter) {
    const AttentionParams p = AttentionParams::make(2 * rng.uniform_int(1, 8), rng.uniform_int(1, 2));
    const int chunk = rng.uniform_int(1, 8);
    const int chunks = rng.uniform_int(1, 6);
    const int n = chunk * chunks;
    const Tensor q = rope_apply(random_tensor({n, p.width()}, rng), iota(n), p);
    const Tensor k = rope_apply(random_tensor({n, p.width()}, rng), iota(n), p);
    const Tensor v = random_tensor({n, p.width()}, rng);
    const Tensor full = attention_full(q, k, v, iota(n), p);
    RollingKvCache cache(static_cast<std::size_t>(n));
    std::vector<Tensor> parts;
    for (int c = 0; c < chunks; ++c) {
      const auto pos = iota(chunk, c * chunk);
      cache.append(to_kv_entries(slice_frames(k, c * chunk, (c + 1) * chunk),
                                 slice_frames(v, c * chunk, (c + 1) * chunk), pos));
      parts.push_back(attention_streaming(slice_frames(q, c * chunk, (c + 1) * chunk), pos, cache, p));
    }
    EXPECT_LE(max_rel_diff(concat_frames(parts), full, 1e-6), 1e-5);
  }
}

TEST(Attention, SinksAlwaysVisible) {
  Rng rng(74);
  const AttentionParams p = AttentionParams::make(4);
  const Tensor k = random_tensor({6, 4}, rng);
  const Tensor v = random_tensor({6, 4}, rng);
  const Tensor q = random_tensor({2, 4}, rng);
  auto entries = to_kv_entries(k, v, iota(6, 10));
  RollingKvCache cache(6, {entries[0], entries[1]});
  cache.append({entries[2], entries[3], entries[4], entries[5]});
  const std::vector<long> qpos = {13, 15};
  const Tensor got = attention_streaming(q, qpos, cache, p);
  // Oracle: positions rewritten so sinks sit before every query.
  const std::vector<long> kpos = {-1, -1, 12, 13, 14, 15};
  EXPECT_LE(max_abs_diff(got, attention_full(q, k, v, qpos, kpos, p)), 1e-15);
}

TEST(Attention, CausalityUnderPerturbation) {
  Rng rng(75);
  const AttentionParams p = AttentionParams::make(8, 2);
  const int n = 12;
  Tensor q = random_tensor({n, 16}, rng);
  Tensor k = random_tensor({n, 16}, rng);
  Tensor v = random_tensor({n, 16}, rng);
  const Tensor base = attention_full(q, k, v, iota(n), p);
  for (int t = 0; t + 1 < n; ++t) {
    Tensor k2 = k, v2 = v;
    for (int c = 0; c < 16; ++c) {
      k2.at(t + 1, c) += 5.0;
      v2.at(t + 1, c) -= 3.0;
    }
    const Tensor out = attention_full(q, k2, v2, iota(n), p);
    for (int i = 0; i <= t; ++i)
      for (int c = 0; c < 16; ++c) ASSERT_EQ(out.at(i, c), base.at(i, c));
  }
}

TEST(Rope, HandComputedRotation) {
  Tensor x({1, 2});
  x.at(0, 0) = 1.0;
  const Tensor r = rope_apply(x, {1});
  EXPECT_NEAR(r.at(0, 0), std::cos(1.0), 1e-15);
  EXPECT_NEAR(r.at(0, 1), std::sin(1.0), 1e-15);
  EXPECT_THROW(rope_apply(Tensor({1, 3}), {0}), Error);
}

TEST(Rope, ScoresDependOnlyOnRelativeOffset) {
  Rng rng(76);
  const Tensor q = random_tensor({1, 16}, rng);
  const Tensor k = random_tensor({1, 16}, rng);
  auto score = [&](long a, long b) {
    const Tensor qa = rope_apply(q, {a});
    const Tensor kb = rope_apply(k, {b});
    double s = 0.0;
    for (int c = 0; c < 16; ++c) s += qa.at(0, c) * kb.at(0, c);
    return s;
  };
  for (long shift : {1L, 7L, 100L}) EXPECT_NEAR(score(5, 2), score(5 + shift, 2 + shift), 1e-9);
}

TEST(Rope, ResetReproducesShortStreamExactly) {
  Rng rng(77);
  const long t_reset = 8;
  const AttentionParams p = AttentionParams::make(8);
  const Tensor x = random_tensor({1, 8}, rng);
  for (long t = 0; t < 50; ++t) {
    const long wrapped = rope_position(t, RopeState{t_reset, 0});
    const Tensor a = rope_apply(x, {wrapped}, p);
    const Tensor b = rope_apply(x, {t <= t_reset ? t : ((t - 1) % t_reset) + 1}, p);
    EXPECT_EQ(a.data, b.data);
    if (t <= t_reset) {
      EXPECT_EQ(a.data, rope_apply(x, {t}, p).data);
    }
  }
}

TEST(Conv3d, StreamingEqualsFullForEveryChunkSize) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Rng rng(seed * 100);
    const Conv3dStack stack = make_conv3d_stack(2, 3, 2, 3, seed);
    const Tensor x = random_tensor({16, 2, 5, 4}, rng);
    const Tensor full = conv3d_full(x, stack);
    for (int chunk : {1, 2, 4, 8}) {
      Conv3dStreamer s(stack);
      std::vector<Tensor> parts;
      for (int f = 0; f < 16; f += chunk) parts.push_back(s.push(slice_frames(x, f, f + chunk)));
      EXPECT_LE(max_abs_diff(concat_frames(parts), full), 1e-6) << "chunk " << chunk;
    }
  }
}

TEST(Conv3d, CausalUnderPerturbation) {
  Rng rng(78);
  const Conv3dStack stack = make_conv3d_stack(2, 3, 2, 3, 9);
  const Tensor x = random_tensor({8, 2, 4, 4}, rng);
  const Tensor base = conv3d_full(x, stack);
  const std::size_t frame = 2 * 4 * 4;
  for (int t = 0; t + 1 < 8; ++t) {
    Tensor y = x;
    for (std::size_t i = 0; i < frame; ++i) y.data[(t + 1) * frame + i] += 1.0;
    Conv3dStreamer s(stack);
    const Tensor out = concat_frames({s.push(slice_frames(y, 0, t + 1)), s.push(slice_frames(y, t + 1, 8))});
    for (std::size_t i = 0; i < (t + 1) * frame; ++i) ASSERT_EQ(out.data[i], base.data[i]);
  }
}

TEST(Conv3d, SingleTapIdentity) {
  Conv3dParams p;
  p.in_channels = p.out_channels = 1;
  p.kernel_t = p.kernel_h = p.kernel_w = 1;
  Conv3dLayer layer = make_conv3d(p);
  layer.weight = {2.0};
  layer.bias = {0.5};
  Tensor x({2, 1, 1, 2});
  x.data = {1, 2, 3, 4};
  EXPECT_EQ(conv3d_full(x, layer).data, (std::vector<double>{2.5, 4.5, 6.5, 8.5}));
  p.kernel_h = 2;
  EXPECT_THROW(make_conv3d(p), Error);
}

TEST(Conv3d, SeededWeightsReproducible) {
  Conv3dParams p;
  p.seed = 42;
  EXPECT_EQ(make_conv3d(p).weight, make_conv3d(p).weight);
  Conv3dParams q = p;
  q.seed = 43;
  EXPECT_NE(make_conv3d(p).weight, make_conv3d(q).weight);
}

TEST(TensorIo, RoundTripFloat32) {
  Rng rng(79);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const Tensor back = read_tensor(ss);
  EXPECT_EQ(back.shape, t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(t.data[i])));
}

TEST(Embedding, MeanPool) {
  Tensor h({2, 2});
  h.data = {1, 2, 3, 6};
  EXPECT_EQ(chunk_embedding(h), (Vec{2, 4}));
}
