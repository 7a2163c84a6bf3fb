#pragma once

// Deterministic discrete-event simulator of a ring of pipeline stages running
// Stream-Batch denoising.
//
// Model:
//  * A ring slot is a micro-batch circulating stage 0 -> ... -> K-1 -> 0.
//    One full traversal denoises every member by one noise level.
//  * A group is B consecutive input chunks admitted together at level n-1.
//    Stream-Batch slots hold up to n groups at distinct levels, so each
//    traversal admits one group at stage 0 and emits the level-0 group at
//    the last stage. Sequential slots hold a single group that makes n
//    traversals before the next is admitted.
//  * Each device has a compute queue and a transfer queue. With overlap the
//    hand-off to the next stage runs on the transfer queue while the device
//    computes the next slot; without overlap the send blocks compute.
//  * Simultaneous events are ordered by (time, device, queue, sequence).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "streamserve/block_scheduler.hpp"
#include "streamserve/costmodel.hpp"
#include "streamserve/error.hpp"
#include "streamserve/slo_batcher.hpp"

namespace streamserve {

enum class BatchingMode { stream_batch, sequential };
enum class QueueKind { compute = 0, transfer = 1 };
enum class EventKind { start, end };

inline std::string_view to_string(BatchingMode m) {
  return m == BatchingMode::stream_batch ? "stream_batch" : "sequential";
}
inline std::string_view to_string(QueueKind q) {
  return q == QueueKind::compute ? "compute" : "transfer";
}

struct StageSpec {
  int stage_id = 0;
  double compute_time = 0.0;  // DiT blocks per micro-step
  double vae_encode_time = 0.0;
  double vae_decode_time = 0.0;
  bool has_vae_encode = false;
  bool has_vae_decode = false;
};

struct PipelineOptions {
  BatchingMode mode = BatchingMode::stream_batch;
  bool comm_overlap = true;
  int ring_depth = 0;             // 0: 2K with overlap (K > 1), else K
  int devices = 0;                // 0: take from the partition
  double stage_time_scale = 1.0;  // calibration multiplier on compute spans
};

struct Pipeline {
  std::vector<StageSpec> stages;
  double transfer_time = 0.0;
  double transfer_bytes = 0.0;
  int steps_n = 1;
  int batch_B = 1;
  int chunk_frames_T = 1;
  BatchingMode mode = BatchingMode::stream_batch;
  bool comm_overlap = true;
  int ring_depth = 1;
  double stage_time_scale = 1.0;

  int num_stages() const { return static_cast<int>(stages.size()); }
  int groups_per_slot() const { return mode == BatchingMode::stream_batch ? steps_n : 1; }
  // Micro-steps (chunk states) one ring slot carries at steady state.
  int in_flight_capacity() const { return groups_per_slot() * batch_B; }
  int total_in_flight_capacity() const { return in_flight_capacity() * ring_depth; }
  // Chunks denoised per DiT pass; the batch the GPU actually runs.
  int padded_members() const { return in_flight_capacity(); }
};

inline int default_ring_depth(int stages, bool overlap) {
  if (stages <= 1) return 1;
  return overlap ? 2 * stages : stages;
}

inline Pipeline make_pipeline(std::vector<StageSpec> stages, double transfer_time,
                              double transfer_bytes, const StreamShape& shape,
                              const PipelineOptions& opt) {
  validate(shape);
  require(!stages.empty(), ErrorCode::invalid_argument, "pipeline needs at least one stage");
  for (const auto& s : stages)
    require(s.compute_time > 0, ErrorCode::invalid_argument, "stage compute_time must be > 0");
  require(opt.stage_time_scale > 0, ErrorCode::invalid_argument, "stage_time_scale must be > 0");
  Pipeline p;
  p.stages = std::move(stages);
  p.transfer_time = p.stages.size() > 1 ? transfer_time : 0.0;
  p.transfer_bytes = p.stages.size() > 1 ? transfer_bytes : 0.0;
  p.steps_n = shape.denoise_steps_n;
  p.batch_B = shape.batch_B;
  p.chunk_frames_T = shape.chunk_frames_T;
  p.mode = opt.mode;
  p.comm_overlap = opt.comm_overlap;
  p.stage_time_scale = opt.stage_time_scale;
  p.ring_depth = opt.ring_depth > 0 ? opt.ring_depth
                 : opt.mode == BatchingMode::sequential
                     ? 1
                     : default_ring_depth(p.num_stages(), opt.comm_overlap);
  return p;
}

inline int pipeline_members(const StreamShape& shape, BatchingMode mode) {
  return mode == BatchingMode::stream_batch ? shape.denoise_steps_n * shape.batch_B
                                            : shape.batch_B;
}

// Stage costs from a partition and a measured (or modeled) block profile.
// Profile VAE times are per admitted/emitted group.
inline Pipeline build_pipeline_from_profile(const Partition& partition,
                                            const BlockCostProfile& profile,
                                            double transfer_time, double transfer_bytes,
                                            const StreamShape& shape,
                                            const PipelineOptions& opt = {}) {
  const int k_count = partition.stages();
  require(k_count >= 1, ErrorCode::invalid_argument, "empty partition");
  require(opt.devices == 0 || opt.devices == k_count, ErrorCode::shape_mismatch,
          "partition stage count differs from device count");
  std::vector<StageSpec> stages;
  for (int k = 0; k < k_count; ++k) {
    auto [a, b] = partition.stage_range(k, profile.num_blocks());
    require(b > a, ErrorCode::invalid_argument, "stage without blocks");
    StageSpec s;
    s.stage_id = k;
    for (int i = a; i < b; ++i) s.compute_time += profile.block_times[i];
    s.has_vae_encode = k == 0;
    s.has_vae_decode = k == k_count - 1;
    s.vae_encode_time = s.has_vae_encode ? profile.vae_encode_time : 0.0;
    s.vae_decode_time = s.has_vae_decode ? profile.vae_decode_time : 0.0;
    stages.push_back(s);
  }
  return make_pipeline(std::move(stages), transfer_time, transfer_bytes, shape, opt);
}

// Per-block DiT profile at the pipeline's padded batch, plus VAE for one group.
inline BlockCostProfile model_block_profile(const DeviceSpec& dev, const ModelSpec& model,
                                            const StreamShape& shape, BatchingMode mode) {
  BlockCostProfile p;
  const double members = pipeline_members(shape, mode);
  p.block_times.assign(model.num_blocks, block_latency(dev, model, shape, members));
  const double frames = static_cast<double>(shape.batch_B) * shape.chunk_frames_T;
  p.vae_encode_time = model.vae_encode_cost.seconds(frames, shape.height_H, shape.width_W);
  p.vae_decode_time = model.vae_decode_cost.seconds(frames, shape.height_H, shape.width_W);
  return p;
}

inline CommCost stage_handoff_cost(const DeviceSpec& dev, const ModelSpec& model,
                                   const StreamShape& shape, BatchingMode mode) {
  CommQuery q;
  q.strategy = CommStrategy::pipeline_p2p;
  q.token_len = tokens_per_chunk(model, shape) * pipeline_members(shape, mode);
  q.hidden_dim = model.hidden_dim;
  q.num_gpus = 2;
  return comm_cost(q, dev);
}

// Pipeline-parallel Stream-Batch ring over the partition's stages.
inline Pipeline build_pipeline(const Partition& partition, const DeviceSpec& dev,
                               const ModelSpec& model, const StreamShape& shape,
                               const PipelineOptions& opt = {}) {
  validate(dev);
  validate(model);
  validate(shape);
  require(partition.stages() <= model.num_blocks, ErrorCode::infeasible, "more stages than blocks");
  const BlockCostProfile profile = model_block_profile(dev, model, shape, opt.mode);
  const CommCost hop = stage_handoff_cost(dev, model, shape, opt.mode);
  return build_pipeline_from_profile(partition, profile, hop.seconds, hop.bytes_per_gpu, shape, opt);
}

// Sequence-parallel baseline: every GPU holds all blocks and a 1/G token
// shard; layer-wise collectives sit on the critical path. Modeled as one
// virtual stage.
inline Pipeline build_sequence_parallel(const DeviceSpec& dev, const ModelSpec& model,
                                        const StreamShape& shape, CommStrategy strategy, int gpus,
                                        const PipelineOptions& opt = {}) {
  require(strategy != CommStrategy::pipeline_p2p, ErrorCode::invalid_argument,
          "sequence-parallel builder needs a sequence-parallel strategy");
  require(gpus >= 1, ErrorCode::invalid_argument, "gpus must be >= 1");
  const double members = pipeline_members(shape, opt.mode);
  StageSpec s;
  s.compute_time =
      block_range_latency(dev, model, shape, members / gpus, model.num_blocks).seconds;
  CommQuery q{strategy, tokens_per_chunk(model, shape) * members, model.hidden_dim, 2.0, gpus,
              model.num_blocks};
  s.compute_time += comm_cost(q, dev).seconds;
  const double frames = static_cast<double>(shape.batch_B) * shape.chunk_frames_T;
  s.has_vae_encode = s.has_vae_decode = true;
  s.vae_encode_time = model.vae_encode_cost.seconds(frames, shape.height_H, shape.width_W);
  s.vae_decode_time = model.vae_decode_cost.seconds(frames, shape.height_H, shape.width_W);
  PipelineOptions o = opt;
  o.ring_depth = 1;
  return make_pipeline({s}, 0.0, 0.0, shape, o);
}

// ---------------------------------------------------------------------------
// Run state and outputs

struct MicroStep {
  int lane = 0;  // position within the B-chunk batch
  int chunk_seq = 0;
  int noise_level_index = 0;
  int frames = 0;
};

struct GroupRef {
  int group = 0;
  int level = 0;
};

struct TraceSpan {
  double start = 0.0;
  double end = 0.0;
  int device = 0;
  QueueKind queue = QueueKind::compute;
  int slot = 0;
  int traversal = 0;
  std::vector<GroupRef> members;
  bool admitted = false;
  bool emitted = false;
};

struct SimEvent {
  double time = 0.0;
  int device = 0;
  QueueKind queue = QueueKind::compute;
  EventKind kind = EventKind::start;
  int span = 0;  // index into SimTrace::spans
};

struct Emission {
  int group = 0;
  double time = 0.0;
};

struct TraceInstant {
  double time = 0.0;
  int device = 0;
  std::string name;
  std::vector<std::pair<std::string, double>> args;
};

struct SimTrace {
  std::vector<TraceSpan> spans;
  std::vector<SimEvent> events;
  std::vector<Emission> emissions;
  std::vector<TraceInstant> instants;
  int num_devices = 0;
};

struct LatencyStats {
  double p50 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

struct SimReport {
  double ttff = 0.0;
  double steady_fps = 0.0;
  LatencyStats per_chunk_latency;
  std::vector<double> bubble_fraction;  // per device
  int slo_violations = 0;
  int groups_admitted = 0;
  int groups_emitted = 0;
  int chunks_admitted = 0;
  int chunks_emitted = 0;
  int chunks_in_flight = 0;
  double makespan = 0.0;
};

struct RunConfig {
  int groups = 64;  // groups of B chunks to admit
  double max_time = std::numeric_limits<double>::infinity();
  double input_fps = 0.0;  // 0: input pre-buffered (saturated)
  std::optional<SloTarget> slo;
  int warmup_groups = -1;  // -1: n groups (n*B chunks)
};

struct SimResult {
  SimReport report;
  SimTrace trace;
};

// Nearest-rank quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

namespace detail {

class RingSimulator {
 public:
  RingSimulator(const Pipeline& p, const RunConfig& cfg) : p_(p), cfg_(cfg) {
    require(cfg.groups >= 1, ErrorCode::invalid_argument, "run needs at least one group");
    require(cfg.input_fps >= 0, ErrorCode::invalid_argument, "input_fps must be >= 0");
    const int K = p_.num_stages();
    devices_.resize(K);
    slots_.resize(p_.ring_depth);
    trace_.num_devices = K;
  }

  SimResult run() {
    for (int s = 0; s < p_.ring_depth; ++s) push(0.0, 0, QueueKind::compute, Kind::arrive, s);
    while (!queue_.empty()) {
      const Ev ev = queue_.top();
      if (ev.time > cfg_.max_time) break;
      queue_.pop();
      now_ = ev.time;
      dispatch(ev);
    }
    return {report(), std::move(trace_)};
  }

 private:
  enum class Kind { arrive, compute_done, transfer_done, input_ready };

  struct Ev {
    double time;
    int device;
    int queue;
    std::uint64_t seq;
    Kind kind;
    int slot;
    bool operator>(const Ev& o) const {
      if (time != o.time) return time > o.time;
      if (device != o.device) return device > o.device;
      if (queue != o.queue) return queue > o.queue;
      return seq > o.seq;
    }
  };

  struct Group {
    int id;
    int level;
  };

  struct Slot {
    std::vector<Group> groups;
    int traversal = 0;
    bool admitted_this_traversal = false;
    bool waiting_for_input = false;
    bool retired = false;
  };

  struct Device {
    bool compute_busy = false;
    bool transfer_busy = false;
    std::deque<int> compute_fifo;
    std::deque<int> transfer_fifo;
    std::vector<std::pair<double, double>> busy;  // compute spans
  };

  void push(double t, int device, QueueKind q, Kind kind, int slot) {
    queue_.push(Ev{t, device, static_cast<int>(q), seq_++, kind, slot});
  }

  double group_available(int g) const {
    if (cfg_.input_fps <= 0) return 0.0;
    const double frames = static_cast<double>(g + 1) * p_.batch_B * p_.chunk_frames_T;
    return frames / cfg_.input_fps;
  }

  void dispatch(const Ev& ev) {
    switch (ev.kind) {
      case Kind::arrive:
        devices_[ev.device].compute_fifo.push_back(ev.slot);
        try_start_compute(ev.device);
        break;
      case Kind::input_ready:
        slots_[ev.slot].waiting_for_input = false;
        devices_[0].compute_fifo.push_back(ev.slot);
        try_start_compute(0);
        break;
      case Kind::compute_done: on_compute_done(ev.device, ev.slot); break;
      case Kind::transfer_done: on_transfer_done(ev.device, ev.slot); break;
    }
  }

  // Stage-0 admission. Returns false when the slot must wait (or retire).
  bool admit(int s) {
    Slot& slot = slots_[s];
    slot.admitted_this_traversal = false;
    const bool more_input = next_group_ < cfg_.groups;
    const bool has_free_level =
        static_cast<int>(slot.groups.size()) < p_.groups_per_slot() &&
        std::none_of(slot.groups.begin(), slot.groups.end(),
                     [&](const Group& g) { return g.level == p_.steps_n - 1; });
    if (more_input && has_free_level) {
      const double avail = group_available(next_group_);
      if (avail <= now_) {
        slot.groups.push_back(Group{next_group_++, p_.steps_n - 1});
        slot.admitted_this_traversal = true;
        admitted_at_.push_back(now_);
        return true;
      }
      if (slot.groups.empty()) {
        slot.waiting_for_input = true;
        push(avail, 0, QueueKind::compute, Kind::input_ready, s);
        return false;
      }
    }
    if (slot.groups.empty()) {
      slot.retired = true;
      return false;
    }
    return true;
  }

  void try_start_compute(int k) {
    Device& d = devices_[k];
    while (!d.compute_busy && !d.compute_fifo.empty()) {
      const int s = d.compute_fifo.front();
      d.compute_fifo.pop_front();
      if (k == 0 && !admit(s)) continue;
      Slot& slot = slots_[s];
      const StageSpec& st = p_.stages[k];
      const bool emits = k == p_.num_stages() - 1 &&
                         std::any_of(slot.groups.begin(), slot.groups.end(),
                                     [](const Group& g) { return g.level == 0; });
      double dur = st.compute_time;
      if (st.has_vae_encode && slot.admitted_this_traversal) dur += st.vae_encode_time;
      if (st.has_vae_decode && emits) dur += st.vae_decode_time;
      dur *= p_.stage_time_scale;

      TraceSpan span;
      span.start = now_;
      span.end = now_ + dur;
      span.device = k;
      span.queue = QueueKind::compute;
      span.slot = s;
      span.traversal = slot.traversal;
      for (const Group& g : slot.groups) span.members.push_back({g.id, g.level});
      span.admitted = k == 0 && slot.admitted_this_traversal;
      span.emitted = emits;
      open_span(span);
      d.compute_busy = true;
      d.busy.emplace_back(span.start, span.end);
      push(span.end, k, QueueKind::compute, Kind::compute_done, s);
    }
  }

  void open_span(const TraceSpan& span) {
    const int idx = static_cast<int>(trace_.spans.size());
    trace_.spans.push_back(span);
    trace_.events.push_back(SimEvent{now_, span.device, span.queue, EventKind::start, idx});
    open_[key(span.device, span.queue)] = idx;
  }

  void close_span(int device, QueueKind q) {
    const int idx = open_[key(device, q)];
    trace_.events.push_back(SimEvent{now_, device, q, EventKind::end, idx});
  }

  std::size_t key(int device, QueueKind q) {
    const std::size_t k = static_cast<std::size_t>(device) * 2 + static_cast<std::size_t>(q);
    if (open_.size() <= k) open_.resize(k + 1, -1);
    return k;
  }

  void finish_traversal(int s) {
    Slot& slot = slots_[s];
    std::vector<Group> keep;
    for (const Group& g : slot.groups) {
      if (g.level == 0) {
        trace_.emissions.push_back({g.id, now_});
      } else {
        keep.push_back({g.id, g.level - 1});
      }
    }
    slot.groups = std::move(keep);
    ++slot.traversal;
  }

  void on_compute_done(int k, int s) {
    close_span(k, QueueKind::compute);
    const int K = p_.num_stages();
    if (k == K - 1) finish_traversal(s);
    Device& d = devices_[k];
    if (K == 1) {
      d.compute_busy = false;
      d.compute_fifo.push_back(s);
      try_start_compute(0);
      return;
    }
    d.transfer_fifo.push_back(s);
    if (p_.comm_overlap) d.compute_busy = false;
    try_start_transfer(k);
    if (p_.comm_overlap) try_start_compute(k);
  }

  void try_start_transfer(int k) {
    Device& d = devices_[k];
    if (d.transfer_busy || d.transfer_fifo.empty()) return;
    const int s = d.transfer_fifo.front();
    d.transfer_fifo.pop_front();
    TraceSpan span;
    span.start = now_;
    span.end = now_ + p_.transfer_time;
    span.device = k;
    span.queue = QueueKind::transfer;
    span.slot = s;
    span.traversal = slots_[s].traversal;
    for (const Group& g : slots_[s].groups) span.members.push_back({g.id, g.level});
    open_span(span);
    d.transfer_busy = true;
    push(span.end, k, QueueKind::transfer, Kind::transfer_done, s);
  }

  void on_transfer_done(int k, int s) {
    close_span(k, QueueKind::transfer);
    Device& d = devices_[k];
    d.transfer_busy = false;
    const int next = (k + 1) % p_.num_stages();
    push(now_, next, QueueKind::compute, Kind::arrive, s);
    if (!p_.comm_overlap) {
      d.compute_busy = false;
      try_start_compute(k);
    }
    try_start_transfer(k);
  }

  SimReport report() const {
    SimReport r;
    const auto& em = trace_.emissions;
    const int B = p_.batch_B;
    const int T = p_.chunk_frames_T;
    r.groups_admitted = next_group_;
    r.groups_emitted = static_cast<int>(em.size());
    r.chunks_admitted = r.groups_admitted * B;
    r.chunks_emitted = r.groups_emitted * B;
    r.chunks_in_flight = r.chunks_admitted - r.chunks_emitted;
    for (const auto& sp : trace_.spans) r.makespan = std::max(r.makespan, sp.end);
    r.bubble_fraction.assign(p_.num_stages(), 0.0);
    if (em.empty()) return r;

    r.ttff = em.front().time;

    std::vector<double> lat;
    for (const auto& e : em) lat.push_back(e.time - group_available(e.group));
    r.per_chunk_latency = {quantile(lat, 0.5), quantile(lat, 0.95),
                           *std::max_element(lat.begin(), lat.end())};

    // Steady-state window: skip warmup groups at the head and the drain of
    // in-flight groups at the tail.
    const int n_em = static_cast<int>(em.size());
    const int warm = cfg_.warmup_groups >= 0 ? cfg_.warmup_groups : p_.steps_n;
    const int tail = p_.ring_depth * p_.groups_per_slot();
    int first = std::min(warm, n_em - 1);
    int last = n_em - 1 - tail;
    if (last <= first) {
      first = 0;
      last = n_em - 1;
    }
    const double t0 = first == last ? 0.0 : em[first].time;
    const double t1 = em[last].time;
    const int groups_in_window = first == last ? last + 1 : last - first;
    if (t1 > t0) r.steady_fps = static_cast<double>(groups_in_window) * B * T / (t1 - t0);

    for (int k = 0; k < p_.num_stages(); ++k) {
      double busy = 0.0;
      for (auto [a, b] : devices_[k].busy) busy += std::max(0.0, std::min(b, t1) - std::max(a, t0));
      r.bubble_fraction[k] = t1 > t0 ? std::clamp(1.0 - busy / (t1 - t0), 0.0, 1.0) : 0.0;
    }

    if (cfg_.slo) {
      const double gap_budget = cfg_.slo->per_frame_deadline * B * T;
      for (int i = 1; i < n_em; ++i)
        if (em[i].time - em[i - 1].time > gap_budget * (1 + 1e-9)) ++r.slo_violations;
      if (r.ttff > cfg_.slo->ttff_budget) ++r.slo_violations;
    }
    return r;
  }

  const Pipeline& p_;
  RunConfig cfg_;
  std::vector<Device> devices_;
  std::vector<Slot> slots_;
  std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> queue_;
  std::vector<int> open_;
  std::vector<double> admitted_at_;
  SimTrace trace_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  int next_group_ = 0;
};

}  // namespace detail

inline SimResult run(const Pipeline& pipeline, const RunConfig& cfg) {
  return detail::RingSimulator(pipeline, cfg).run();
}

// Steady micro-step interval of a saturated ring: the slowest stage's
// compute (plus its send when not overlapped) or the transfer time.
inline double analytic_steady_interval(const Pipeline& p) {
  double worst = 0.0;
  for (const auto& s : p.stages) {
    double c = s.compute_time + (s.has_vae_encode ? s.vae_encode_time : 0.0) +
               (s.has_vae_decode ? s.vae_decode_time : 0.0);
    c *= p.stage_time_scale;
    worst = std::max(worst, p.comm_overlap ? std::max(c, p.transfer_time) : c + p.transfer_time);
  }
  return worst;
}

}  // namespace streamserve
