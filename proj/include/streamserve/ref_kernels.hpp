#pragma once

// Small exact kernels for checking streaming-cache semantics: rotary
// embedding, causal attention over a rolling KV window, and a causal 3-D
// convolution stack with per-layer temporal feature caches.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "streamserve/context_ctl.hpp"
#include "streamserve/error.hpp"
#include "streamserve/tensor.hpp"

namespace streamserve {

struct AttentionParams {
  int head_dim = 16;
  int num_heads = 1;
  double scale = 0.25;  // 1/sqrt(head_dim)
  double rope_base = 10000.0;

  static AttentionParams make(int head_dim, int num_heads = 1, double rope_base = 10000.0) {
    return AttentionParams{head_dim, num_heads, 1.0 / std::sqrt(static_cast<double>(head_dim)),
                           rope_base};
  }
  int width() const { return head_dim * num_heads; }
};

inline void validate(const AttentionParams& p) {
  require(p.head_dim >= 2 && p.head_dim % 2 == 0, ErrorCode::invalid_argument,
          "head_dim must be even");
  require(p.num_heads >= 1 && p.scale > 0 && p.rope_base > 1, ErrorCode::invalid_argument,
          "attention params out of range");
}

// Rotates each (2i, 2i+1) pair of every head by pos * base^(-2i/d).
// x: [tokens, num_heads * head_dim].
inline Tensor rope_apply(const Tensor& x, const std::vector<long>& positions,
                         const AttentionParams& p) {
  validate(p);
  require(x.rank() == 2 && x.dim(1) == p.width(), ErrorCode::shape_mismatch,
          "rope_apply: last dim must be num_heads * head_dim");
  require(static_cast<int>(positions.size()) == x.dim(0), ErrorCode::shape_mismatch,
          "rope_apply: one position per token");
  Tensor out = x;
  const int d = p.head_dim;
  for (int t = 0; t < x.dim(0); ++t) {
    const double pos = static_cast<double>(positions[t]);
    for (int h = 0; h < p.num_heads; ++h) {
      for (int i = 0; i < d / 2; ++i) {
        const double theta = pos * std::pow(p.rope_base, -2.0 * i / d);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const int j = h * d + 2 * i;
        const double a = x.at(t, j);
        const double b = x.at(t, j + 1);
        out.at(t, j) = a * c - b * s;
        out.at(t, j + 1) = a * s + b * c;
      }
    }
  }
  return out;
}

// Single-head form.
inline Tensor rope_apply(const Tensor& x, const std::vector<long>& positions, double base = 10000.0) {
  require(x.rank() == 2, ErrorCode::shape_mismatch, "rope_apply: expects [tokens, dim]");
  require(x.dim(1) % 2 == 0, ErrorCode::invalid_argument, "rope_apply: odd head_dim");
  return rope_apply(x, positions, AttentionParams::make(x.dim(1), 1, base));
}

namespace detail {

// Softmax attention for one query row and one head over the visible keys.
inline void attend_row(const double* q, const Tensor& k, const Tensor& v,
                       const std::vector<int>& visible, int head, const AttentionParams& p,
                       double* out) {
  const int d = p.head_dim;
  const int off = head * d;
  require(!visible.empty(), ErrorCode::invalid_argument, "attention: query sees no keys");
  std::vector<double> logits(visible.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < visible.size(); ++j) {
    const double* kr = k.row(visible[j]);
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += q[off + c] * kr[off + c];
    logits[j] = s * p.scale;
    mx = std::max(mx, logits[j]);
  }
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (int c = 0; c < d; ++c) out[off + c] = 0.0;
  for (std::size_t j = 0; j < visible.size(); ++j) {
    const double w = logits[j] / z;
    const double* vr = v.row(visible[j]);
    for (int c = 0; c < d; ++c) out[off + c] += w * vr[off + c];
  }
}

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& p) {
  validate(p);
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, ErrorCode::shape_mismatch,
          "attention: expects rank-2 tensors");
  require(q.dim(1) == p.width() && k.dim(1) == p.width() && v.dim(1) == p.width(),
          ErrorCode::shape_mismatch, "attention: width differs from num_heads * head_dim");
  require(k.dim(0) == v.dim(0), ErrorCode::shape_mismatch, "attention: key/value counts differ");
}

}  // namespace detail

// Exact causal softmax attention: query i sees key j iff k_pos[j] <= q_pos[i]
// and key_mask[j] (when given).
inline Tensor attention_full(const Tensor& q, const Tensor& k, const Tensor& v,
                             const std::vector<long>& q_positions,
                             const std::vector<long>& k_positions, const AttentionParams& p,
                             const std::vector<bool>* key_mask = nullptr) {
  detail::check_qkv(q, k, v, p);
  require(static_cast<int>(q_positions.size()) == q.dim(0) &&
              static_cast<int>(k_positions.size()) == k.dim(0),
          ErrorCode::shape_mismatch, "attention: one position per token");
  require(!key_mask || static_cast<int>(key_mask->size()) == k.dim(0), ErrorCode::shape_mismatch,
          "attention: key mask length");
  Tensor out({q.dim(0), p.width()});
  for (int i = 0; i < q.dim(0); ++i) {
    std::vector<int> visible;
    for (int j = 0; j < k.dim(0); ++j)
      if (k_positions[j] <= q_positions[i] && (!key_mask || (*key_mask)[j])) visible.push_back(j);
    for (int h = 0; h < p.num_heads; ++h) detail::attend_row(q.row(i), k, v, visible, h, p, out.row(i));
  }
  return out;
}

inline Tensor attention_full(const Tensor& q, const Tensor& k, const Tensor& v,
                             const std::vector<long>& positions, const AttentionParams& p) {
  return attention_full(q, k, v, positions, positions, p);
}

// Attends a query chunk over the cache window: sinks are always visible, ring
// entries causally by position.
inline Tensor attention_streaming(const Tensor& q, const std::vector<long>& q_positions,
                                  const RollingKvCache& cache, const AttentionParams& p) {
  const auto window = kv_window(cache);
  require(!window.empty(), ErrorCode::invalid_argument, "attention_streaming: empty cache");
  const int n = static_cast<int>(window.size());
  Tensor k({n, p.width()});
  Tensor v({n, p.width()});
  for (int j = 0; j < n; ++j) {
    require(static_cast<int>(window[j].key.size()) == p.width(), ErrorCode::shape_mismatch,
            "attention_streaming: cache width differs");
    std::copy(window[j].key.begin(), window[j].key.end(), k.row(j));
    std::copy(window[j].value.begin(), window[j].value.end(), v.row(j));
  }
  detail::check_qkv(q, k, v, p);
  require(static_cast<int>(q_positions.size()) == q.dim(0), ErrorCode::shape_mismatch,
          "attention_streaming: one position per query");
  Tensor out({q.dim(0), p.width()});
  for (int i = 0; i < q.dim(0); ++i) {
    std::vector<int> visible;
    for (int j = 0; j < n; ++j)
      if (window[j].sink || window[j].position <= q_positions[i]) visible.push_back(j);
    for (int h = 0; h < p.num_heads; ++h) detail::attend_row(q.row(i), k, v, visible, h, p, out.row(i));
  }
  return out;
}

inline std::vector<KvEntry> to_kv_entries(const Tensor& k, const Tensor& v,
                                          const std::vector<long>& positions) {
  require(k.shape == v.shape && k.rank() == 2 && static_cast<int>(positions.size()) == k.dim(0),
          ErrorCode::shape_mismatch, "to_kv_entries: shape mismatch");
  std::vector<KvEntry> out;
  for (int t = 0; t < k.dim(0); ++t)
    out.push_back(KvEntry{Vec(k.row(t), k.row(t) + k.dim(1)), Vec(v.row(t), v.row(t) + v.dim(1)),
                          positions[t], false});
  return out;
}

// Mean-pooled hidden state: stand-in chunk embedding for sink refresh.
inline Vec chunk_embedding(const Tensor& hidden) {
  require(hidden.rank() == 2 && hidden.dim(0) >= 1, ErrorCode::shape_mismatch,
          "chunk_embedding: expects [tokens, dim]");
  Vec out(hidden.dim(1), 0.0);
  for (int t = 0; t < hidden.dim(0); ++t)
    for (int c = 0; c < hidden.dim(1); ++c) out[c] += hidden.at(t, c);
  for (double& x : out) x /= hidden.dim(0);
  return out;
}

// ---------------------------------------------------------------------------
// Causal 3-D convolution. Video layout [frames, channels, H, W]; kernel_t - 1
// leading zero frames, spatial same padding.

struct Conv3dParams {
  int in_channels = 2;
  int out_channels = 2;
  int kernel_t = 3;
  int kernel_h = 3;
  int kernel_w = 3;
  std::uint64_t seed = 0;
};

struct Conv3dLayer {
  Conv3dParams params;
  std::vector<double> weight;  // [out][in][kt][kh][kw]
  std::vector<double> bias;

  double w(int o, int i, int t, int y, int x) const {
    const auto& p = params;
    return weight[((((static_cast<std::size_t>(o) * p.in_channels + i) * p.kernel_t + t) * p.kernel_h + y) *
                       p.kernel_w) + x];
  }
};

inline Conv3dLayer make_conv3d(const Conv3dParams& p) {
  require(p.in_channels >= 1 && p.out_channels >= 1 && p.kernel_t >= 1, ErrorCode::invalid_argument,
          "conv3d: channels and kernel_t must be >= 1");
  require(p.kernel_h % 2 == 1 && p.kernel_w % 2 == 1, ErrorCode::invalid_argument,
          "conv3d: spatial kernel must be odd");
  Conv3dLayer layer{p, {}, {}};
  Rng rng(p.seed);
  const double fan_in = static_cast<double>(p.in_channels) * p.kernel_t * p.kernel_h * p.kernel_w;
  const double a = 1.0 / std::sqrt(fan_in);
  layer.weight.resize(static_cast<std::size_t>(p.out_channels) * fan_in);
  for (auto& w : layer.weight) w = rng.uniform(-a, a);
  layer.bias.resize(p.out_channels);
  for (auto& b : layer.bias) b = rng.uniform(-a, a);
  return layer;
}

namespace detail {

// One output frame. frame(r) returns input frame t-(kt-1)+r or nullptr for
// the causal zero padding; summation order is fixed so full and streaming
// passes agree bit for bit.
template <typename FrameFn>
void conv3d_frame(const Conv3dLayer& layer, int H, int W, FrameFn frame, double* out) {
  const auto& p = layer.params;
  const int ph = p.kernel_h / 2;
  const int pw = p.kernel_w / 2;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int o = 0; o < p.out_channels; ++o) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = layer.bias[o];
        for (int r = 0; r < p.kernel_t; ++r) {
          const double* f = frame(r);
          if (!f) continue;
          for (int i = 0; i < p.in_channels; ++i) {
            for (int dy = 0; dy < p.kernel_h; ++dy) {
              const int yy = y + dy - ph;
              if (yy < 0 || yy >= H) continue;
              for (int dx = 0; dx < p.kernel_w; ++dx) {
                const int xx = x + dx - pw;
                if (xx < 0 || xx >= W) continue;
                acc += layer.w(o, i, r, dy, dx) * f[i * plane + static_cast<std::size_t>(yy) * W + xx];
              }
            }
          }
        }
        out[o * plane + static_cast<std::size_t>(y) * W + x] = acc;
      }
    }
  }
}

inline void check_video(const Tensor& x, int channels) {
  require(x.rank() == 4 && x.dim(1) == channels, ErrorCode::shape_mismatch,
          "conv3d: expects [frames, in_channels, H, W]");
}

}  // namespace detail

inline Tensor conv3d_full(const Tensor& x, const Conv3dLayer& layer) {
  detail::check_video(x, layer.params.in_channels);
  const int F = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t in_frame = static_cast<std::size_t>(x.dim(1)) * H * W;
  Tensor out({F, layer.params.out_channels, H, W});
  const std::size_t out_frame = static_cast<std::size_t>(layer.params.out_channels) * H * W;
  const int back = layer.params.kernel_t - 1;
  for (int t = 0; t < F; ++t) {
    auto frame = [&](int r) -> const double* {
      const int src = t - back + r;
      return src < 0 ? nullptr : x.data.data() + src * in_frame;
    };
    detail::conv3d_frame(layer, H, W, frame, out.data.data() + t * out_frame);
  }
  return out;
}

// Last kernel_t - 1 input frames seen by one layer.
struct ConvFeatureCache {
  std::deque<std::vector<double>> frames;
};

inline Tensor conv3d_streaming(const Tensor& chunk, const Conv3dLayer& layer, ConvFeatureCache& cache) {
  detail::check_video(chunk, layer.params.in_channels);
  require(chunk.dim(0) >= 1, ErrorCode::invalid_argument, "conv3d_streaming: empty chunk");
  const int F = chunk.dim(0), H = chunk.dim(2), W = chunk.dim(3);
  const std::size_t in_frame = static_cast<std::size_t>(chunk.dim(1)) * H * W;
  for (const auto& f : cache.frames)
    require(f.size() == in_frame, ErrorCode::shape_mismatch, "conv3d_streaming: cache shape differs");
  const int back = layer.params.kernel_t - 1;
  const int cached = static_cast<int>(cache.frames.size());
  Tensor out({F, layer.params.out_channels, H, W});
  const std::size_t out_frame = static_cast<std::size_t>(layer.params.out_channels) * H * W;
  for (int t = 0; t < F; ++t) {
    auto frame = [&](int r) -> const double* {
      const int src = t - back + r;  // relative to chunk start
      if (src >= 0) return chunk.data.data() + src * in_frame;
      const int c = cached + src;
      return c < 0 ? nullptr : cache.frames[c].data();
    };
    detail::conv3d_frame(layer, H, W, frame, out.data.data() + t * out_frame);
  }
  for (int t = 0; t < F; ++t)
    cache.frames.emplace_back(chunk.data.begin() + t * in_frame, chunk.data.begin() + (t + 1) * in_frame);
  while (static_cast<int>(cache.frames.size()) > back) cache.frames.pop_front();
  return out;
}

inline Tensor silu(Tensor x) {
  for (auto& v : x.data) v = v / (1.0 + std::exp(-v));
  return x;
}

// conv -> SiLU -> conv -> ... (no activation after the last layer).
struct Conv3dStack {
  std::vector<Conv3dLayer> layers;
};

inline Conv3dStack make_conv3d_stack(int channels, int hidden, int layers, int kernel_t,
                                     std::uint64_t seed) {
  require(layers >= 1, ErrorCode::invalid_argument, "conv stack needs a layer");
  Conv3dStack s;
  for (int l = 0; l < layers; ++l) {
    Conv3dParams p;
    p.in_channels = l == 0 ? channels : hidden;
    p.out_channels = l == layers - 1 ? channels : hidden;
    p.kernel_t = kernel_t;
    p.seed = seed + static_cast<std::uint64_t>(l) * 0x9e3779b97f4a7c15ULL;
    s.layers.push_back(make_conv3d(p));
  }
  return s;
}

inline Tensor conv3d_full(const Tensor& x, const Conv3dStack& stack) {
  Tensor h = x;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    h = conv3d_full(h, stack.layers[l]);
    if (l + 1 < stack.layers.size()) h = silu(std::move(h));
  }
  return h;
}

class Conv3dStreamer {
 public:
  explicit Conv3dStreamer(const Conv3dStack& stack) : stack_(stack), caches_(stack.layers.size()) {}

  Tensor push(const Tensor& chunk) {
    Tensor h = chunk;
    for (std::size_t l = 0; l < stack_.layers.size(); ++l) {
      h = conv3d_streaming(h, stack_.layers[l], caches_[l]);
      if (l + 1 < stack_.layers.size()) h = silu(std::move(h));
    }
    return h;
  }

 private:
  const Conv3dStack& stack_;
  std::vector<ConvFeatureCache> caches_;
};

// Frames [begin, end) of a [F, ...] tensor.
inline Tensor slice_frames(const Tensor& x, int begin, int end) {
  require(x.rank() >= 1 && 0 <= begin && begin <= end && end <= x.dim(0), ErrorCode::invalid_argument,
          "slice_frames: range out of bounds");
  std::vector<int> shape = x.shape;
  shape[0] = end - begin;
  Tensor out(shape);
  const std::size_t per = x.dim(0) ? x.size() / x.dim(0) : 0;
  std::copy(x.data.begin() + begin * per, x.data.begin() + end * per, out.data.begin());
  return out;
}

inline Tensor concat_frames(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorCode::invalid_argument, "concat_frames: nothing to join");
  std::vector<int> shape = parts.front().shape;
  shape[0] = 0;
  for (const auto& p : parts) {
    require(p.rank() == static_cast<int>(shape.size()) &&
                std::equal(p.shape.begin() + 1, p.shape.end(), shape.begin() + 1),
            ErrorCode::shape_mismatch, "concat_frames: shapes differ");
    shape[0] += p.dim(0);
  }
  Tensor out(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + at);
    at += p.size();
  }
  return out;
}

}  // namespace streamserve
