#pragma once

// SLO-aware stream-batch selection (offline, from the cost model) and online
// AIMD adaptation from observed latency.

#include <algorithm>
#include <functional>

#include "streamserve/costmodel.hpp"
#include "streamserve/error.hpp"

namespace streamserve {

struct SloTarget {
  double target_fps = 16.0;
  double per_frame_deadline = 1.0 / 16.0;
  double ttff_budget = 1.0;

  static SloTarget for_fps(double fps, double ttff_budget = 1.0) {
    return SloTarget{fps, 1.0 / fps, ttff_budget};
  }

  // Deadline looser than the frame period: the rate target binds, not the deadline.
  bool lenient() const { return per_frame_deadline >= 1.0 / target_fps; }
};

inline void validate(const SloTarget& s) {
  require(s.target_fps > 0 && s.per_frame_deadline > 0 && s.ttff_budget > 0,
          ErrorCode::invalid_argument, "SLO target fields must be positive");
}

struct BatchDecision {
  int batch_B = 1;
  int chunk_frames_T = 1;
  double predicted_latency = 0.0;
  double predicted_fps = 0.0;
  Regime regime = Regime::memory_bound;
  bool feasible = true;
};

// Relative tolerance under which two modeled throughputs count as equal.
inline constexpr double kThroughputTieTolerance = 1e-12;

struct BatchEvaluation {
  double latency = 0.0;
  double fps = 0.0;
  Regime regime = Regime::memory_bound;
};

// Models one micro-step of a B-chunk batch; Stream-Batch multiplies the
// effective batch by the denoising step count.
inline BatchEvaluation evaluate_batch(const DeviceSpec& dev, const ModelSpec& model,
                                      const StreamShape& shape, int batch) {
  const auto lb =
      latency_breakdown(dev, model, shape, static_cast<double>(batch) * shape.denoise_steps_n);
  return {lb.seconds, static_cast<double>(batch) * shape.chunk_frames_T / lb.seconds,
          lb.roofline.regime};
}

namespace detail {

// Largest x in [lo, hi] with pred(x) true, assuming pred is true on a prefix.
// Returns lo - 1 when pred(lo) is false.
inline int last_true(int lo, int hi, const std::function<bool(int)>& pred) {
  int ans = lo - 1;
  while (lo <= hi) {
    const int mid = lo + (hi - lo) / 2;
    if (pred(mid)) {
      ans = mid;
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return ans;
}

// Smallest x in [lo, hi] with pred(x) true, assuming pred is true on a suffix.
// Returns hi + 1 when pred(hi) is false.
inline int first_true(int lo, int hi, const std::function<bool(int)>& pred) {
  int ans = hi + 1;
  while (lo <= hi) {
    const int mid = lo + (hi - lo) / 2;
    if (pred(mid)) {
      ans = mid;
      hi = mid - 1;
    } else {
      lo = mid + 1;
    }
  }
  return ans;
}

inline BatchDecision make_decision(const BatchEvaluation& e, int batch, int frames, bool feasible) {
  return BatchDecision{batch, frames, e.latency, e.fps, e.regime, feasible};
}

}  // namespace detail

// Picks the stream batch size B. Feasible B satisfy B*T <= buffered frames,
// B <= b_max, modeled rate >= target and chunk latency <= deadline * T.
// Throughput is nondecreasing in B and latency increasing, so the feasible
// set is an interval; the answer is the smallest B attaining the best rate
// in it.
inline BatchDecision select_batch(const SloTarget& slo, const DeviceSpec& dev,
                                  const ModelSpec& model, const StreamShape& shape,
                                  int buffered_frames, int b_max) {
  validate(slo);
  require(b_max >= 1, ErrorCode::invalid_argument, "b_max must be >= 1");
  require(buffered_frames >= shape.chunk_frames_T, ErrorCode::not_enough_input,
          "select_batch: fewer buffered frames than one chunk");
  const int T = shape.chunk_frames_T;
  const int cap = std::min(b_max, buffered_frames / T);
  auto eval = [&](int b) { return evaluate_batch(dev, model, shape, b); };
  const double latency_budget = slo.per_frame_deadline * T;

  const int b_latency =
      detail::last_true(1, cap, [&](int b) { return eval(b).latency <= latency_budget; });
  if (b_latency < 1) return detail::make_decision(eval(1), 1, T, false);
  const BatchEvaluation top = eval(b_latency);
  if (top.fps < slo.target_fps) return detail::make_decision(eval(1), 1, T, false);

  const double floor_fps = top.fps * (1.0 - kThroughputTieTolerance);
  const int best = detail::first_true(1, b_latency, [&](int b) { return eval(b).fps >= floor_fps; });
  return detail::make_decision(eval(best), best, T, true);
}

// ---------------------------------------------------------------------------
// Online adaptation

struct AimdConfig {
  int b_max = 8;
  int compliant_streak = 4;  // compliant iterations before B += 1
};

struct AimdState {
  BatchDecision decision;
  int streak = 0;
};

// Multiplicative decrease (halve, floor 1) on a deadline miss; additive
// increase after `compliant_streak` consecutive compliant iterations.
inline AimdState adapt(const AimdState& prev, double observed_latency, const SloTarget& slo,
                       const AimdConfig& cfg) {
  require(observed_latency > 0, ErrorCode::invalid_argument, "observed latency must be > 0");
  AimdState next = prev;
  BatchDecision& d = next.decision;
  const bool violated = observed_latency > slo.per_frame_deadline * d.chunk_frames_T;
  d.predicted_latency = observed_latency;
  if (violated) {
    next.streak = 0;
    d.feasible = d.batch_B > 1;
    d.batch_B = std::max(1, d.batch_B / 2);
  } else {
    d.feasible = true;
    if (++next.streak >= cfg.compliant_streak) {
      next.streak = 0;
      d.batch_B = std::min(cfg.b_max, d.batch_B + 1);
    }
  }
  d.predicted_fps = static_cast<double>(d.batch_B) * d.chunk_frames_T / observed_latency;
  return next;
}

// Stateless form: one compliant observation counts as a completed streak.
inline BatchDecision adapt(const BatchDecision& prev, double observed_latency,
                           const SloTarget& slo, const AimdConfig& cfg = {}) {
  return adapt(AimdState{prev, 0}, observed_latency, slo, AimdConfig{cfg.b_max, 1}).decision;
}

// Single-owner controller for one stream.
class AimdController {
 public:
  AimdController(BatchDecision initial, SloTarget slo, AimdConfig cfg = {})
      : state_{initial, 0}, slo_(slo), cfg_(cfg) {
    validate(slo_);
    require(cfg_.b_max >= 1 && cfg_.compliant_streak >= 1, ErrorCode::invalid_argument,
            "AIMD config out of range");
  }

  const BatchDecision& observe(double observed_latency) {
    state_ = adapt(state_, observed_latency, slo_, cfg_);
    return state_.decision;
  }

  const BatchDecision& decision() const { return state_.decision; }
  int streak() const { return state_.streak; }

 private:
  AimdState state_;
  SloTarget slo_;
  AimdConfig cfg_;
};

}  // namespace streamserve
