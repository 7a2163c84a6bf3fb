#pragma once

// Contiguous min-max partitioning of DiT blocks across pipeline stages. The
// first stage also carries VAE encode, the last stage VAE decode.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "streamserve/error.hpp"

namespace streamserve {

struct BlockCostProfile {
  std::vector<double> block_times;
  double vae_encode_time = 0.0;
  double vae_decode_time = 0.0;

  int num_blocks() const { return static_cast<int>(block_times.size()); }
  double total() const {
    double s = vae_encode_time + vae_decode_time;
    for (double t : block_times) s += t;
    return s;
  }
};

struct Partition {
  std::vector<int> boundaries;  // K-1 split indices; stage k covers [b[k-1], b[k])
  std::vector<double> stage_times;

  int stages() const { return static_cast<int>(boundaries.size()) + 1; }
  double max_stage_time() const {
    return stage_times.empty() ? 0.0 : *std::max_element(stage_times.begin(), stage_times.end());
  }
  // Block index range [first, last) for a stage.
  std::pair<int, int> stage_range(int stage, int num_blocks) const {
    const int first = stage == 0 ? 0 : boundaries[stage - 1];
    const int last = stage == stages() - 1 ? num_blocks : boundaries[stage];
    return {first, last};
  }
  std::vector<int> stage_sizes(int num_blocks) const {
    std::vector<int> sizes;
    for (int k = 0; k < stages(); ++k) {
      auto [a, b] = stage_range(k, num_blocks);
      sizes.push_back(b - a);
    }
    return sizes;
  }
};

inline void validate(const BlockCostProfile& p) {
  require(!p.block_times.empty(), ErrorCode::invalid_argument, "profile has no blocks");
  require(p.vae_encode_time >= 0 && p.vae_decode_time >= 0, ErrorCode::invalid_argument,
          "VAE times must be >= 0");
  for (double t : p.block_times)
    require(t >= 0 && std::isfinite(t), ErrorCode::invalid_argument, "block times must be >= 0");
}

// Time of stage `stage` of `stages` covering blocks [first, last). Sums left to
// right so every caller gets identical rounding.
inline double stage_time(const BlockCostProfile& p, int first, int last, int stage, int stages) {
  double t = 0.0;
  for (int i = first; i < last; ++i) t += p.block_times[i];
  if (stage == 0) t += p.vae_encode_time;
  if (stage == stages - 1) t += p.vae_decode_time;
  return t;
}

inline Partition make_partition(const BlockCostProfile& p, std::vector<int> boundaries) {
  const int n = p.num_blocks();
  const int stages = static_cast<int>(boundaries.size()) + 1;
  int prev = 0;
  for (int b : boundaries) {
    require(b > prev && b < n, ErrorCode::invalid_argument, "boundaries must be increasing in (0, n)");
    prev = b;
  }
  Partition out{std::move(boundaries), {}};
  for (int k = 0; k < stages; ++k) {
    auto [a, b] = out.stage_range(k, n);
    out.stage_times.push_back(stage_time(p, a, b, k, stages));
  }
  return out;
}

// Equal block counts, remainder to the earliest stages.
inline Partition uniform_partition(const BlockCostProfile& p, int stages) {
  const int n = p.num_blocks();
  require(stages >= 1 && stages <= n, ErrorCode::infeasible, "more stages than blocks");
  std::vector<int> bounds;
  int at = 0;
  for (int k = 0; k < stages - 1; ++k) {
    at += n / stages + (k < n % stages ? 1 : 0);
    bounds.push_back(at);
  }
  return make_partition(p, std::move(bounds));
}

// 1 - mean(stage)/max(stage): idle share of a synchronous pipeline step.
inline double bubble_fraction(const Partition& part) {
  const double mx = part.max_stage_time();
  if (mx <= 0) return 0.0;
  double sum = 0.0;
  for (double t : part.stage_times) sum += t;
  return 1.0 - sum / (part.stages() * mx);
}

// Relative slack when comparing secondary (sum of squares) costs.
inline constexpr double kBalanceTieTolerance = 1e-12;

// Exact min-max contiguous partition by dynamic programming over suffixes:
// best[k][i] = optimal max stage time for blocks [i, n) split into stages
// k..K-1. Ties on the max go to the smallest sum of squared stage times,
// then to the lexicographically largest boundaries (earlier stages take
// more blocks).
inline Partition balance(const BlockCostProfile& profile, int stages) {
  validate(profile);
  const int n = profile.num_blocks();
  require(stages >= 1, ErrorCode::invalid_argument, "stages must be >= 1");
  require(stages <= n, ErrorCode::infeasible, "balance: more stages than blocks");
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> best(stages + 1, std::vector<double>(n + 1, inf));
  best[stages][n] = 0.0;
  for (int k = stages - 1; k >= 0; --k) {
    const int remaining_after = stages - 1 - k;
    for (int i = k; i <= n - 1 - remaining_after; ++i) {
      double v = inf;
      const int j_max = k == stages - 1 ? n : n - remaining_after;
      const int j_min = k == stages - 1 ? n : i + 1;
      for (int j = j_min; j <= j_max; ++j) {
        const double cand = std::max(stage_time(profile, i, j, k, stages), best[k + 1][j]);
        v = std::min(v, cand);
      }
      best[k][i] = v;
    }
  }

  // Second pass: among partitions whose every stage fits under the optimum,
  // minimize the sum of squared stage times.
  const double optimum = best[0][0];
  std::vector<std::vector<double>> sq(stages + 1, std::vector<double>(n + 1, inf));
  sq[stages][n] = 0.0;
  for (int k = stages - 1; k >= 0; --k) {
    const int remaining_after = stages - 1 - k;
    for (int i = k; i <= n - 1 - remaining_after; ++i) {
      const int j_max = k == stages - 1 ? n : n - remaining_after;
      const int j_min = k == stages - 1 ? n : i + 1;
      for (int j = j_min; j <= j_max; ++j) {
        const double t = stage_time(profile, i, j, k, stages);
        if (t <= optimum && sq[k + 1][j] < inf) sq[k][i] = std::min(sq[k][i], t * t + sq[k + 1][j]);
      }
    }
  }

  std::vector<int> bounds;
  int i = 0;
  for (int k = 0; k < stages - 1; ++k) {
    const int remaining_after = stages - 1 - k;
    const double target = sq[k][i] + kBalanceTieTolerance * std::max(1.0, sq[k][i]);
    int chosen = -1;
    for (int j = n - remaining_after; j >= i + 1; --j) {
      const double t = stage_time(profile, i, j, k, stages);
      if (t <= optimum && sq[k + 1][j] < inf && t * t + sq[k + 1][j] <= target) {
        chosen = j;
        break;
      }
    }
    bounds.push_back(chosen);
    i = chosen;
  }
  return make_partition(profile, std::move(bounds));
}

inline constexpr int kBruteForceMaxBlocks = 32;
inline constexpr int kBruteForceMaxStages = 6;

// Exhaustive enumeration of every contiguous partition with the same
// tie-break as balance(). Test oracle.
inline Partition brute_force_partition(const BlockCostProfile& profile, int stages) {
  validate(profile);
  const int n = profile.num_blocks();
  require(n <= kBruteForceMaxBlocks && stages <= kBruteForceMaxStages, ErrorCode::instance_too_large,
          "brute_force_partition: instance too large");
  require(stages >= 1 && stages <= n, ErrorCode::infeasible, "more stages than blocks");

  std::vector<int> cur(stages - 1);
  struct Candidate {
    std::vector<int> bounds;
    double max;
    double sum_sq;
  };
  std::vector<Candidate> all;

  // Enumerates boundary vectors in lexicographic order.
  auto visit = [&](auto&& self, int depth, int start) -> void {
    if (depth == stages - 1) {
      double mx = 0.0;
      double ss = 0.0;
      int a = 0;
      for (int k = 0; k < stages; ++k) {
        const int b = k == stages - 1 ? n : cur[k];
        double t = 0.0;
        for (int x = a; x < b; ++x) t += profile.block_times[x];
        if (k == 0) t += profile.vae_encode_time;
        if (k == stages - 1) t += profile.vae_decode_time;
        mx = std::max(mx, t);
        ss += t * t;
        a = b;
      }
      all.push_back({cur, mx, ss});
      return;
    }
    const int remaining = stages - 1 - depth;
    for (int b = start; b <= n - remaining; ++b) {
      cur[depth] = b;
      self(self, depth + 1, b + 1);
    }
  };
  visit(visit, 0, 1);

  double best_max = std::numeric_limits<double>::infinity();
  for (const auto& c : all) best_max = std::min(best_max, c.max);
  double best_ss = std::numeric_limits<double>::infinity();
  for (const auto& c : all)
    if (c.max == best_max) best_ss = std::min(best_ss, c.sum_sq);
  const double target = best_ss + kBalanceTieTolerance * std::max(1.0, best_ss);
  const std::vector<int>* chosen = nullptr;
  for (const auto& c : all)
    if (c.max == best_max && c.sum_sq <= target) chosen = &c.bounds;
  return make_partition(profile, *chosen);
}

// ---------------------------------------------------------------------------
// Online rebalancing

struct RebalanceConfig {
  double ema_alpha = 0.5;   // weight of the newest measurement
  double hysteresis = 0.05; // minimum relative max-stage improvement to adopt
};

// Adopts balance(profile) only when it beats `current` (evaluated on the same
// profile) by more than `hysteresis` relative.
inline Partition rebalance_online(const Partition& current, const BlockCostProfile& profile,
                                  double hysteresis) {
  const Partition now = make_partition(profile, current.boundaries);
  const Partition cand = balance(profile, now.stages());
  const double before = now.max_stage_time();
  if (before <= 0) return now;
  const double improvement = (before - cand.max_stage_time()) / before;
  return improvement > hysteresis ? cand : now;
}

// Single-owner per pipeline: EMA-smooths measured profiles and rebalances.
class OnlineRebalancer {
 public:
  OnlineRebalancer(BlockCostProfile initial, int stages, RebalanceConfig cfg = {})
      : smoothed_(std::move(initial)), cfg_(cfg) {
    require(cfg_.ema_alpha > 0 && cfg_.ema_alpha <= 1, ErrorCode::invalid_argument,
            "ema_alpha must lie in (0, 1]");
    current_ = balance(smoothed_, stages);
  }

  const Partition& update(const BlockCostProfile& measured) {
    validate(measured);
    require(measured.num_blocks() == smoothed_.num_blocks(), ErrorCode::shape_mismatch,
            "measured profile block count differs");
    const double a = cfg_.ema_alpha;
    for (int i = 0; i < measured.num_blocks(); ++i)
      smoothed_.block_times[i] = a * measured.block_times[i] + (1 - a) * smoothed_.block_times[i];
    smoothed_.vae_encode_time = a * measured.vae_encode_time + (1 - a) * smoothed_.vae_encode_time;
    smoothed_.vae_decode_time = a * measured.vae_decode_time + (1 - a) * smoothed_.vae_decode_time;
    const Partition next = rebalance_online(current_, smoothed_, cfg_.hysteresis);
    if (next.boundaries != current_.boundaries) ++adoptions_;
    current_ = next;
    return current_;
  }

  const Partition& partition() const { return current_; }
  const BlockCostProfile& smoothed() const { return smoothed_; }
  int adoptions() const { return adoptions_; }

 private:
  BlockCostProfile smoothed_;
  RebalanceConfig cfg_;
  Partition current_;
  int adoptions_ = 0;
};

// ---------------------------------------------------------------------------
// CSV: "block,seconds" rows; optional "vae_encode"/"vae_decode" rows.

inline BlockCostProfile profile_from_csv(const std::string& text) {
  BlockCostProfile p;
  std::istringstream in(text);
  std::string line;
  std::vector<std::pair<int, double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorCode::schema_violation, "profile CSV: missing comma: " + line);
    const std::string key = line.substr(0, comma);
    const std::string val = line.substr(comma + 1);
    if (key == "block" || key == "block_index") continue;  // header
    double seconds = 0.0;
    try {
      seconds = std::stod(val);
    } catch (const std::exception&) {
      throw Error(ErrorCode::schema_violation, "profile CSV: bad number: " + line);
    }
    if (key == "vae_encode") {
      p.vae_encode_time = seconds;
    } else if (key == "vae_decode") {
      p.vae_decode_time = seconds;
    } else {
      try {
        rows.emplace_back(std::stoi(key), seconds);
      } catch (const std::exception&) {
        throw Error(ErrorCode::schema_violation, "profile CSV: bad block index: " + line);
      }
    }
  }
  std::sort(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].first == static_cast<int>(i), ErrorCode::schema_violation,
            "profile CSV: block indices must be 0..n-1");
    p.block_times.push_back(rows[i].second);
  }
  validate(p);
  return p;
}

}  // namespace streamserve
