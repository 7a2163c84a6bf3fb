#pragma once

// Closed-form cost models for streaming video-diffusion serving: first-frame
// latency, memory/compute roofline latency, throughput and inter-GPU
// communication for pipeline and sequence-parallel strategies.
//
// Units are SI throughout: seconds, bytes, FLOP, FLOP/s, byte/s.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "streamserve/error.hpp"

namespace streamserve {

struct DeviceSpec {
  std::string name = "device";
  double peak_flops = 0.0;             // roofline compute roof
  double hbm_bandwidth = 0.0;          // roofline memory roof
  double bandwidth_utilization_eta = 1.0;
  double link_bandwidth = 0.0;         // point-to-point, one direction
  double link_latency = 0.0;
  // Average achieved throughput used by the first-frame estimate. Zero means
  // "use peak_flops".
  double sustained_flops = 0.0;

  double effective_flops() const {
    return sustained_flops > 0.0 ? sustained_flops : peak_flops;
  }
};

// Affine per-chunk VAE cost: fixed + per_megapixel_frame * frames * H * W / 1e6.
struct VaeCostModel {
  double fixed_seconds = 0.0;
  double seconds_per_megapixel_frame = 0.0;

  double seconds(double frames, double height, double width) const {
    if (frames <= 0.0) return 0.0;
    return fixed_seconds + seconds_per_megapixel_frame * frames * height * width * 1e-6;
  }
};

struct ModelSpec {
  std::string name = "model";
  double param_count = 0.0;
  double bytes_per_param = 2.0;  // bf16
  int num_blocks = 1;
  int hidden_dim = 0;
  double per_block_flops_per_token = 0.0;
  double per_block_bytes_per_token = 0.0;
  VaeCostModel vae_encode_cost;
  VaeCostModel vae_decode_cost;
  double pixel_to_token_ratio = 1.0;

  double param_bytes() const { return param_count * bytes_per_param; }
};

struct StreamShape {
  int batch_B = 1;
  int chunk_frames_T = 1;
  int height_H = 1;
  int width_W = 1;
  int denoise_steps_n = 1;
  int latent_channels_C = 16;
};

enum class Regime { memory_bound, compute_bound };

inline std::string_view to_string(Regime r) {
  return r == Regime::memory_bound ? "memory_bound" : "compute_bound";
}

struct RooflinePoint {
  double arithmetic_intensity = 0.0;
  double attained_flops = 0.0;
  Regime regime = Regime::memory_bound;
};

enum class CommStrategy { pipeline_p2p, ulysses_all_to_all, ring_kv };

inline std::string_view to_string(CommStrategy s) {
  switch (s) {
    case CommStrategy::pipeline_p2p: return "pipeline_p2p";
    case CommStrategy::ulysses_all_to_all: return "ulysses_all_to_all";
    case CommStrategy::ring_kv: return "ring_kv";
  }
  return "unknown";
}

inline CommStrategy parse_comm_strategy(std::string_view s) {
  if (s == "pipeline_p2p" || s == "pipeline" || s == "pp") return CommStrategy::pipeline_p2p;
  if (s == "ulysses_all_to_all" || s == "ulysses") return CommStrategy::ulysses_all_to_all;
  if (s == "ring_kv" || s == "ring") return CommStrategy::ring_kv;
  throw Error(ErrorCode::invalid_argument, "unknown comm strategy: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const DeviceSpec& d) {
  require(d.peak_flops > 0 && d.hbm_bandwidth > 0 && d.link_bandwidth > 0 &&
              d.link_latency >= 0,
          ErrorCode::invalid_argument, "device spec fields must be positive: " + d.name);
  require(d.bandwidth_utilization_eta > 0 && d.bandwidth_utilization_eta <= 1,
          ErrorCode::invalid_argument, "eta must lie in (0, 1]");
  require(d.sustained_flops >= 0, ErrorCode::invalid_argument, "sustained_flops < 0");
}

inline void validate(const ModelSpec& m) {
  require(m.param_count > 0, ErrorCode::invalid_argument, "param_count must be > 0");
  require(m.num_blocks >= 1, ErrorCode::invalid_argument, "num_blocks must be >= 1");
  require(m.pixel_to_token_ratio >= 1, ErrorCode::invalid_argument,
          "pixel_to_token_ratio must be >= 1");
  require(m.bytes_per_param > 0 && m.per_block_flops_per_token >= 0 &&
              m.per_block_bytes_per_token >= 0,
          ErrorCode::invalid_argument, "model cost coefficients must be non-negative");
}

inline void validate(const StreamShape& s) {
  require(s.batch_B >= 1 && s.chunk_frames_T >= 1 && s.height_H >= 1 && s.width_W >= 1 &&
              s.denoise_steps_n >= 1 && s.latent_channels_C >= 1,
          ErrorCode::invalid_argument, "stream shape fields must be >= 1");
}

// ---------------------------------------------------------------------------
// Roofline

inline double ridge_intensity(const DeviceSpec& dev) {
  return dev.peak_flops / dev.hbm_bandwidth;
}

inline RooflinePoint roofline_point(const DeviceSpec& dev, double flops, double bytes) {
  RooflinePoint p;
  p.arithmetic_intensity = bytes > 0 ? flops / bytes : INFINITY;
  p.attained_flops = std::min(dev.peak_flops, p.arithmetic_intensity * dev.hbm_bandwidth);
  p.regime = p.arithmetic_intensity < ridge_intensity(dev) ? Regime::memory_bound
                                                            : Regime::compute_bound;
  return p;
}

// ---------------------------------------------------------------------------
// Workload accounting

inline double tokens_per_chunk(const ModelSpec& model, const StreamShape& shape) {
  return static_cast<double>(shape.chunk_frames_T) * shape.height_H * shape.width_W /
         model.pixel_to_token_ratio;
}

// Activation traffic A for `members` chunks through the whole model.
inline double activation_bytes(const ModelSpec& model, const StreamShape& shape,
                               double members) {
  return model.per_block_bytes_per_token * tokens_per_chunk(model, shape) * members *
         model.num_blocks;
}

inline double forward_flops(const ModelSpec& model, const StreamShape& shape, double members) {
  return model.per_block_flops_per_token * tokens_per_chunk(model, shape) * members *
         model.num_blocks;
}

struct LatencyBreakdown {
  double memory_seconds = 0.0;
  double compute_seconds = 0.0;
  double seconds = 0.0;
  RooflinePoint roofline;
};

// Latency of `blocks` consecutive DiT blocks processing `members` chunks.
// Memory-bound form is the affine activation+parameter law; the compute roof
// takes over at the ridge.
inline LatencyBreakdown block_range_latency(const DeviceSpec& dev, const ModelSpec& model,
                                            const StreamShape& shape, double members,
                                            double blocks) {
  const double tokens = tokens_per_chunk(model, shape) * members;
  const double act = model.per_block_bytes_per_token * tokens * blocks;
  const double params = model.param_bytes() * blocks / model.num_blocks;
  const double flops = model.per_block_flops_per_token * tokens * blocks;
  const double eta = dev.bandwidth_utilization_eta;
  LatencyBreakdown out;
  out.memory_seconds = (act + params) / (eta * dev.hbm_bandwidth);
  out.compute_seconds = flops / (eta * dev.peak_flops);
  out.seconds = std::max(out.memory_seconds, out.compute_seconds);
  out.roofline = roofline_point(dev, flops, act + params);
  return out;
}

inline double block_latency(const DeviceSpec& dev, const ModelSpec& model,
                            const StreamShape& shape, double members) {
  return block_range_latency(dev, model, shape, members, 1.0).seconds;
}

// L(T, B) over the full model with an explicit effective batch (n*B for
// Stream-Batch).
inline LatencyBreakdown latency_breakdown(const DeviceSpec& dev, const ModelSpec& model,
                                          const StreamShape& shape, double members) {
  return block_range_latency(dev, model, shape, members, model.num_blocks);
}

inline double latency_estimate(const DeviceSpec& dev, const ModelSpec& model,
                               const StreamShape& shape) {
  return latency_breakdown(dev, model, shape, shape.batch_B).seconds;
}

// Pure memory-bound law, without the compute roof.
inline double memory_bound_latency(const DeviceSpec& dev, const ModelSpec& model,
                                   const StreamShape& shape, double members) {
  return (activation_bytes(model, shape, members) + model.param_bytes()) /
         (dev.bandwidth_utilization_eta * dev.hbm_bandwidth);
}

inline double throughput(const DeviceSpec& dev, const ModelSpec& model, const StreamShape& shape) {
  return static_cast<double>(shape.batch_B) * shape.chunk_frames_T /
         latency_estimate(dev, model, shape);
}

// B -> infinity limit of the memory-bound throughput: eta*BW / activation
// bytes per frame.
inline double throughput_bandwidth_asymptote(const DeviceSpec& dev, const ModelSpec& model,
                                             const StreamShape& shape) {
  const double per_frame = activation_bytes(model, shape, 1.0) / shape.chunk_frames_T;
  return dev.bandwidth_utilization_eta * dev.hbm_bandwidth / per_frame;
}

// ---------------------------------------------------------------------------
// First-frame latency

enum class TtffMode { buffering_plus_processing, processing_only };

inline double ttff_processing(const DeviceSpec& dev, const ModelSpec& model,
                              const StreamShape& shape) {
  return 2.0 * shape.batch_B * shape.chunk_frames_T * static_cast<double>(shape.height_H) *
         shape.width_W * model.param_count /
         (dev.effective_flops() * model.pixel_to_token_ratio);
}

inline double ttff_estimate(const DeviceSpec& dev, const ModelSpec& model, const StreamShape& shape,
                            double input_fps,
                            TtffMode mode = TtffMode::buffering_plus_processing) {
  require(shape.batch_B >= 1 && shape.chunk_frames_T >= 0 && shape.height_H >= 1 &&
              shape.width_W >= 1,
          ErrorCode::invalid_argument, "ttff_estimate: non-positive shape field");
  const double processing = ttff_processing(dev, model, shape);
  if (mode == TtffMode::processing_only) return processing;
  require(input_fps > 0, ErrorCode::invalid_argument, "ttff_estimate: input_fps must be > 0");
  return shape.chunk_frames_T / input_fps + processing;
}

// Solve the first-frame law for the product C_device * rho_VAE given a measured
// processing latency.
inline double calibrate_compute_token_product(const ModelSpec& model, const StreamShape& shape,
                                              double processing_seconds) {
  require(processing_seconds > 0, ErrorCode::invalid_argument, "anchor latency must be > 0");
  return 2.0 * shape.batch_B * shape.chunk_frames_T * static_cast<double>(shape.height_H) *
         shape.width_W * model.param_count / processing_seconds;
}

// ---------------------------------------------------------------------------
// Communication

struct CommQuery {
  CommStrategy strategy = CommStrategy::pipeline_p2p;
  double token_len = 0.0;
  int hidden_dim = 0;
  double dtype_bytes = 2.0;
  int num_gpus = 2;
  int num_blocks = 1;  // attention layers, for layer-wise strategies
};

struct CommCost {
  double seconds = 0.0;
  double bytes_per_gpu = 0.0;  // total bytes each GPU sends
  int messages = 0;            // sequential transfer phases
};

inline double activation_message_bytes(double token_len, int hidden_dim, double dtype_bytes) {
  return token_len * hidden_dim * dtype_bytes;
}

// Per-device communication for one forward pass of one chunk.
//   pipeline_p2p: one activation hand-off per micro-step boundary.
//   ulysses: 2 all-to-alls of the activation per attention layer; each GPU
//            sends (G-1)/G of its S/G shard.
//   ring_kv: (G-1) hops per attention layer, each moving the local K and V
//            shards (2*S/G bytes).
inline CommCost comm_cost(const CommQuery& q, const DeviceSpec& dev) {
  require(q.num_gpus >= 1, ErrorCode::invalid_argument, "num_gpus must be >= 1");
  require(q.token_len >= 0 && q.hidden_dim >= 0 && q.dtype_bytes > 0 && q.num_blocks >= 1,
          ErrorCode::invalid_argument, "comm query fields out of range");
  CommCost c;
  if (q.num_gpus < 2) return c;
  const double g = q.num_gpus;
  const double full = activation_message_bytes(q.token_len, q.hidden_dim, q.dtype_bytes);
  switch (q.strategy) {
    case CommStrategy::pipeline_p2p:
      c.bytes_per_gpu = full;
      c.messages = 1;
      c.seconds = full / dev.link_bandwidth + dev.link_latency;
      break;
    case CommStrategy::ulysses_all_to_all: {
      const double per_a2a = full / g * (g - 1) / g;
      c.messages = 2 * q.num_blocks;
      c.bytes_per_gpu = per_a2a * c.messages;
      c.seconds = c.messages * (per_a2a / dev.link_bandwidth + dev.link_latency);
      break;
    }
    case CommStrategy::ring_kv: {
      const double per_hop = 2.0 * full / g;
      c.messages = (q.num_gpus - 1) * q.num_blocks;
      c.bytes_per_gpu = per_hop * c.messages;
      c.seconds = c.messages * (per_hop / dev.link_bandwidth + dev.link_latency);
      break;
    }
  }
  return c;
}

}  // namespace streamserve
