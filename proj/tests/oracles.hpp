#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <vector>

#include "streamserve/block_scheduler.hpp"
#include "streamserve/slo_batcher.hpp"
#include "streamserve/tensor.hpp"
#include "test_support.hpp"

namespace oracles {

using namespace streamserve;

// Linear scan over every admissible B.
inline BatchDecision select_batch_scan(const SloTarget& slo, const DeviceSpec& d, const ModelSpec& m,
                                       const StreamShape& s, int buffered, int b_max) {
  const int T = s.chunk_frames_T;
  const int cap = std::min(b_max, buffered / T);
  double best = -1.0;
  for (int b = 1; b <= cap; ++b) {
    const BatchEvaluation e = evaluate_batch(d, m, s, b);
    if (e.latency <= slo.per_frame_deadline * T && e.fps >= slo.target_fps) best = std::max(best, e.fps);
  }
  if (best < 0) {
    const BatchEvaluation e = evaluate_batch(d, m, s, 1);
    return BatchDecision{1, T, e.latency, e.fps, e.regime, false};
  }
  for (int b = 1; b <= cap; ++b) {
    const BatchEvaluation e = evaluate_batch(d, m, s, b);
    if (e.latency <= slo.per_frame_deadline * T && e.fps >= best * (1 - kThroughputTieTolerance))
      return BatchDecision{b, T, e.latency, e.fps, e.regime, true};
  }
  return {};
}

struct SloFixture {
  DeviceSpec dev;
  ModelSpec model;
  StreamShape shape;
  SloTarget slo;
  int buffered = 0;
  int b_max = 1;
};

// Targets land near the modeled operating range so both outcomes occur.
inline SloFixture random_slo_fixture(Rng& rng) {
  using namespace testing_support;
  SloFixture f{random_device(rng), random_model(rng), random_shape(rng), {}, 0, rng.uniform_int(1, 12)};
  f.shape.batch_B = 1;
  const int T = f.shape.chunk_frames_T;
  f.buffered = T * rng.uniform_int(1, 16) + rng.uniform_int(0, T - 1);
  const BatchEvaluation lo = evaluate_batch(f.dev, f.model, f.shape, 1);
  const BatchEvaluation hi = evaluate_batch(f.dev, f.model, f.shape, f.b_max);
  f.slo.target_fps = rng.uniform(0.5 * lo.fps, 1.2 * hi.fps);
  f.slo.per_frame_deadline = rng.uniform(0.5, 1.5) * hi.latency / T;
  return f;
}

inline BlockCostProfile random_block_profile(Rng& rng, int n, bool integral) {
  BlockCostProfile p;
  for (int i = 0; i < n; ++i)
    p.block_times.push_back(integral ? rng.uniform_int(0, 9) : rng.uniform(0.0, 1.0));
  if (rng.uniform() < 0.7) {
    p.vae_encode_time = integral ? rng.uniform_int(0, 12) : rng.uniform(0.0, 3.0);
    p.vae_decode_time = integral ? rng.uniform_int(0, 12) : rng.uniform(0.0, 3.0);
  }
  return p;
}

// Textbook causal multi-head attention over positions 0..n-1.
inline Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, int head_dim, int heads,
                              std::vector<std::vector<double>>* probs = nullptr) {
  const int n = q.dim(0), m = k.dim(0);
  Tensor out({n, head_dim * heads});
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> w(m, 0.0);
      double z = 0.0;
      for (int j = 0; j <= std::min(i, m - 1); ++j) {
        double s = 0.0;
        for (int c = 0; c < head_dim; ++c) s += q.at(i, h * head_dim + c) * k.at(j, h * head_dim + c);
        w[j] = std::exp(s / std::sqrt(static_cast<double>(head_dim)));
        z += w[j];
      }
      for (auto& x : w) x /= z;
      if (probs && h == 0) probs->push_back(w);
      for (int c = 0; c < head_dim; ++c) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += w[j] * v.at(j, h * head_dim + c);
        out.at(i, h * head_dim + c) = acc;
      }
    }
  }
  return out;
}

// Cosine-threshold refresh written out with explicit sums.
inline std::vector<std::vector<double>> refresh_sinks(std::vector<std::vector<double>> sinks,
                                                      const std::vector<double>& h, double tau) {
  for (auto& s : sinks) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < h.size(); ++c) {
      ab += h[c] * s[c];
      aa += h[c] * h[c];
      bb += s[c] * s[c];
    }
    if (ab / (std::sqrt(aa) * std::sqrt(bb)) < tau) s = h;
  }
  return sinks;
}

}  // namespace oracles
