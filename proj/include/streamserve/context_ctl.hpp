#pragma once

// Long-horizon context state: sink-token refresh by cosine threshold, RoPE
// phase reset and a rolling KV cache with a pinned sink prefix.

#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "streamserve/error.hpp"

namespace streamserve {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), ErrorCode::shape_mismatch, "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& a, const Vec& b) {
  const double na = norm(a);
  const double nb = norm(b);
  require(na > 0 && nb > 0, ErrorCode::invalid_argument, "cosine of a zero vector");
  return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------

struct SinkSet {
  std::vector<Vec> sinks;
  double tau = 0.95;
  std::vector<long> last_refresh;  // chunk index per sink, -1 = initial

  std::size_t m() const { return sinks.size(); }
  std::size_t dim() const { return sinks.empty() ? 0 : sinks.front().size(); }
};

inline SinkSet make_sink_set(std::vector<Vec> sinks, double tau = 0.95) {
  require(!sinks.empty(), ErrorCode::invalid_argument, "sink set needs at least one sink");
  require(tau >= -1 && tau <= 1, ErrorCode::invalid_argument, "tau must lie in [-1, 1]");
  for (const auto& s : sinks) {
    require(s.size() == sinks.front().size() && !s.empty(), ErrorCode::shape_mismatch,
            "sinks must share one nonzero dimension");
    require(norm(s) > 0 && std::isfinite(norm(s)), ErrorCode::invalid_argument,
            "sinks must be finite and nonzero");
  }
  const std::size_t m = sinks.size();
  return SinkSet{std::move(sinks), tau, std::vector<long>(m, -1)};
}

// Keeps sink i when cos(h_t, s_i) >= tau, otherwise replaces it with h_t.
inline SinkSet sink_refresh(SinkSet set, const Vec& h_t, long chunk_index = 0) {
  require(h_t.size() == set.dim(), ErrorCode::shape_mismatch, "sink_refresh: dimension mismatch");
  require(norm(h_t) > 0, ErrorCode::invalid_argument, "sink_refresh: zero-norm embedding");
  for (std::size_t i = 0; i < set.sinks.size(); ++i) {
    if (cosine(h_t, set.sinks[i]) < set.tau) {
      set.sinks[i] = h_t;
      set.last_refresh[i] = chunk_index;
    }
  }
  return set;
}

// ---------------------------------------------------------------------------

struct RopeState {
  long t_reset = 1024;
  long current_index = 0;
};

// t for t <= T_reset, otherwise wrapped back into (0, T_reset].
inline long rope_position(long t, const RopeState& state) {
  require(t >= 0, ErrorCode::invalid_argument, "rope_position: negative frame index");
  require(state.t_reset >= 1, ErrorCode::invalid_argument, "t_reset must be >= 1");
  if (t <= state.t_reset) return t;
  return ((t - 1) % state.t_reset) + 1;
}

// ---------------------------------------------------------------------------

struct KvEntry {
  Vec key;
  Vec value;
  long position = 0;
  bool sink = false;
};

class RollingKvCache {
 public:
  RollingKvCache(std::size_t capacity, std::vector<KvEntry> sinks = {})
      : capacity_(capacity), sinks_(std::move(sinks)) {
    require(sinks_.size() <= capacity_, ErrorCode::invalid_argument, "more sinks than capacity");
    for (auto& s : sinks_) {
      check_dims(s);
      s.sink = true;
    }
  }

  // Appends at the tail and evicts the oldest non-sink entries beyond capacity.
  void append(const std::vector<KvEntry>& entries) {
    require(entries.size() <= ring_capacity(), ErrorCode::invalid_argument,
            "kv_append: batch larger than capacity minus pinned slots");
    long last = ring_.empty() ? std::numeric_limits<long>::min() : ring_.back().position;
    for (const auto& e : entries) {
      check_dims(e);
      require(e.position > last, ErrorCode::invalid_argument,
              "kv_append: positions must be strictly increasing");
      last = e.position;
    }
    for (const auto& e : entries) {
      ring_.push_back(e);
      ring_.back().sink = false;
      ++inserted_;
    }
    while (ring_.size() > ring_capacity()) {
      ring_.pop_front();
      ++evicted_;
    }
  }

  void append(const KvEntry& e) { append(std::vector<KvEntry>{e}); }

  // Pinned sinks followed by ring contents oldest first.
  std::vector<KvEntry> window() const {
    std::vector<KvEntry> out(sinks_.begin(), sinks_.end());
    out.insert(out.end(), ring_.begin(), ring_.end());
    return out;
  }

  void set_sink(std::size_t i, KvEntry e) {
    require(i < sinks_.size(), ErrorCode::invalid_argument, "sink index out of range");
    check_dims(e);
    e.sink = true;
    sinks_[i] = std::move(e);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t ring_capacity() const { return capacity_ - sinks_.size(); }
  std::size_t size() const { return sinks_.size() + ring_.size(); }
  std::size_t num_sinks() const { return sinks_.size(); }
  const std::vector<KvEntry>& sinks() const { return sinks_; }
  const std::deque<KvEntry>& ring() const { return ring_; }
  long inserted() const { return inserted_; }
  long evicted() const { return evicted_; }

  std::string dump_csv() const {
    std::string out = "slot,position,sink\n";
    char buf[64];
    std::size_t slot = 0;
    for (const auto& e : window()) {
      std::snprintf(buf, sizeof buf, "%zu,%ld,%d\n", slot++, e.position, e.sink ? 1 : 0);
      out += buf;
    }
    return out;
  }

 private:
  void check_dims(const KvEntry& e) {
    require(!e.key.empty() && e.key.size() == e.value.size(), ErrorCode::shape_mismatch,
            "kv entry: key/value dimensions differ");
    if (dim_ == 0) dim_ = e.key.size();
    require(e.key.size() == dim_, ErrorCode::shape_mismatch, "kv entry: dimension mismatch");
  }

  std::size_t capacity_;
  std::size_t dim_ = 0;
  std::vector<KvEntry> sinks_;
  std::deque<KvEntry> ring_;
  long inserted_ = 0;
  long evicted_ = 0;
};

inline void kv_append(RollingKvCache& cache, const std::vector<KvEntry>& entries) {
  cache.append(entries);
}

inline std::vector<KvEntry> kv_window(const RollingKvCache& cache) { return cache.window(); }

}  // namespace streamserve
