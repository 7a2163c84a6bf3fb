#pragma once

// Motion-aware noise-rate control: RMS frame difference, windowed max
// normalization, EMA-smoothed noise rate and a nearest-level schedule map.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "streamserve/error.hpp"

namespace streamserve {

struct LatentFrame {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // C*H*W row-major
  long frame_index = 0;

  std::size_t size() const { return values.size(); }
  bool same_shape(const LatentFrame& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

inline LatentFrame make_frame(int c, int h, int w, double fill = 0.0, long index = 0) {
  require(c >= 1 && h >= 1 && w >= 1, ErrorCode::invalid_argument, "frame dims must be >= 1");
  return LatentFrame{c, h, w, std::vector<double>(static_cast<std::size_t>(c) * h * w, fill), index};
}

inline double motion_intensity(const LatentFrame& prev, const LatentFrame& cur) {
  require(prev.same_shape(cur) && prev.values.size() == cur.values.size(),
          ErrorCode::shape_mismatch, "motion_intensity: frame shapes differ");
  require(!cur.values.empty(), ErrorCode::invalid_argument, "motion_intensity: empty frame");
  double sum = 0.0;
  for (std::size_t i = 0; i < cur.values.size(); ++i) {
    const double d = cur.values[i] - prev.values[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(cur.values.size()));
}

struct MotionWindow {
  std::deque<double> recent_d;
  int window_k = 8;
  double scale_sigma = 1.0;

  void push(double d) {
    require(d >= 0 && std::isfinite(d), ErrorCode::invalid_argument, "motion value must be >= 0");
    recent_d.push_back(d);
    while (static_cast<int>(recent_d.size()) > window_k) recent_d.pop_front();
  }
};

inline double normalized_motion(const MotionWindow& w) {
  require(!w.recent_d.empty(), ErrorCode::invalid_argument, "normalized_motion: empty window");
  require(w.scale_sigma > 0, ErrorCode::invalid_argument, "sigma must be > 0");
  const double mx = *std::max_element(w.recent_d.begin(), w.recent_d.end());
  return std::clamp(mx / w.scale_sigma, 0.0, 1.0);
}

struct NoiseRateState {
  double s_current = 0.9;
  double s_min = 0.4;
  double s_max = 0.9;
  double lambda = 0.4;
};

inline void validate(const NoiseRateState& s) {
  require(s.s_min > 0 && s.s_min < s.s_max && s.s_max <= 1, ErrorCode::invalid_argument,
          "noise-rate bounds must satisfy 0 < s_min < s_max <= 1");
  require(s.lambda > 0 && s.lambda <= 1, ErrorCode::invalid_argument, "lambda must lie in (0, 1]");
}

inline NoiseRateState update_noise_rate(NoiseRateState state, double d_hat) {
  require(d_hat >= 0 && d_hat <= 1, ErrorCode::invalid_argument, "d_hat must lie in [0, 1]");
  const double target = state.s_max - (state.s_max - state.s_min) * d_hat;
  state.s_current = state.lambda * target + (1 - state.lambda) * state.s_current;
  return state;
}

struct DenoiseSchedule {
  int start_timestep = 0;
  std::vector<int> steps;  // descending, starting at start_timestep
  std::size_t level_index = 0;
};

// Maps s linearly from [s_min, s_max] onto [min, max] timestep, takes the
// nearest available level (ties toward the shallower one) and returns the
// descending tail from it.
inline DenoiseSchedule schedule_for_rate(double s, const std::vector<int>& available_timesteps,
                                         double s_min = 0.4, double s_max = 0.9) {
  require(!available_timesteps.empty(), ErrorCode::invalid_argument, "empty timestep list");
  require(s_min < s_max, ErrorCode::invalid_argument, "s_min must be < s_max");
  std::vector<int> ts = available_timesteps;
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  const double hi = ts.front();
  const double lo = ts.back();
  const double u = std::clamp((s - s_min) / (s_max - s_min), 0.0, 1.0);
  const double want = lo + u * (hi - lo);

  std::size_t best = 0;
  double best_dist = std::abs(ts[0] - want);
  for (std::size_t i = 1; i < ts.size(); ++i) {
    const double dist = std::abs(ts[i] - want);
    if (dist <= best_dist) {  // later entries are shallower
      best = i;
      best_dist = dist;
    }
  }
  return DenoiseSchedule{ts[best], std::vector<int>(ts.begin() + static_cast<long>(best), ts.end()),
                         best};
}

// ---------------------------------------------------------------------------
// Exact running quantile over all samples seen (two heaps).

class RunningQuantile {
 public:
  explicit RunningQuantile(double q = 0.95) : q_(q) {
    require(q > 0 && q < 1, ErrorCode::invalid_argument, "quantile must lie in (0, 1)");
  }

  void add(double x) {
    if (low_.empty() || x <= low_.top()) {
      low_.push(x);
    } else {
      high_.push(x);
    }
    ++n_;
    const std::size_t want_low = rank();
    while (low_.size() > want_low) {
      high_.push(low_.top());
      low_.pop();
    }
    while (low_.size() < want_low) {
      low_.push(high_.top());
      high_.pop();
    }
  }

  std::size_t count() const { return n_; }
  // Nearest-rank quantile; 0 when empty.
  double value() const { return low_.empty() ? 0.0 : low_.top(); }

 private:
  std::size_t rank() const {
    const auto r = static_cast<std::size_t>(std::ceil(q_ * static_cast<double>(n_)));
    return std::max<std::size_t>(1, r);
  }

  double q_;
  std::size_t n_ = 0;
  std::priority_queue<double> low_;
  std::priority_queue<double, std::vector<double>, std::greater<>> high_;
};

// ---------------------------------------------------------------------------

enum class SigmaMode { fixed, running_p95 };

struct MotionControllerConfig {
  int window_k = 8;
  double lambda = 0.4;
  double s_min = 0.4;
  double s_max = 0.9;
  SigmaMode sigma_mode = SigmaMode::fixed;
  double sigma = 1.0;        // fixed value, and fallback before any motion is seen
  double sigma_floor = 1e-9;
};

struct MotionSample {
  long frame_index = 0;
  double d = 0.0;
  double d_hat = 0.0;
  double s = 0.0;
};

// Single-owner per stream.
class MotionController {
 public:
  explicit MotionController(MotionControllerConfig cfg = {}) : cfg_(cfg) {
    require(cfg_.window_k >= 1, ErrorCode::invalid_argument, "window_k must be >= 1");
    require(cfg_.sigma > 0, ErrorCode::invalid_argument, "sigma must be > 0");
    state_ = NoiseRateState{cfg_.s_max, cfg_.s_min, cfg_.s_max, cfg_.lambda};
    validate(state_);
    window_.window_k = cfg_.window_k;
    window_.scale_sigma = cfg_.sigma;
  }

  // Feeds a new frame; the first frame only primes the difference.
  const MotionSample& observe(const LatentFrame& frame) {
    if (!prev_) {
      prev_ = frame;
      last_ = MotionSample{frame.frame_index, 0.0, 0.0, state_.s_current};
      return last_;
    }
    const double d = motion_intensity(*prev_, frame);
    prev_ = frame;
    return observe_motion(d, frame.frame_index);
  }

  const MotionSample& observe_motion(double d, long frame_index) {
    window_.push(d);
    if (cfg_.sigma_mode == SigmaMode::running_p95) {
      p95_.add(d);
      window_.scale_sigma = p95_.value() > cfg_.sigma_floor ? p95_.value() : cfg_.sigma;
    }
    const double d_hat = normalized_motion(window_);
    state_ = update_noise_rate(state_, d_hat);
    last_ = MotionSample{frame_index, d, d_hat, state_.s_current};
    history_.push_back(last_);
    return last_;
  }

  const NoiseRateState& state() const { return state_; }
  const MotionWindow& window() const { return window_; }
  const std::vector<MotionSample>& history() const { return history_; }

  std::string history_csv() const {
    std::string out = "frame,d,d_hat,s\n";
    char buf[128];
    for (const auto& h : history_) {
      std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", h.frame_index, h.d, h.d_hat, h.s);
      out += buf;
    }
    return out;
  }

 private:
  MotionControllerConfig cfg_;
  NoiseRateState state_;
  MotionWindow window_;
  RunningQuantile p95_{0.95};
  std::optional<LatentFrame> prev_;
  MotionSample last_;
  std::vector<MotionSample> history_;
};

}  // namespace streamserve
