#pragma once

// Scenario runner, synthetic motion streams, sweeps, experiment presets and
// FPS calibration.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "streamserve/block_scheduler.hpp"
#include "streamserve/config.hpp"
#include "streamserve/context_ctl.hpp"
#include "streamserve/costmodel.hpp"
#include "streamserve/motion_ctl.hpp"
#include "streamserve/pipeline_sim.hpp"
#include "streamserve/ref_kernels.hpp"
#include "streamserve/slo_batcher.hpp"
#include "streamserve/tensor.hpp"
#include "streamserve/trace_export.hpp"

namespace streamserve {

inline constexpr int kScenarioSchemaVersion = 1;

enum class ExitCode : int { ok = 0, usage = 1, schema = 2, infeasible_slo = 3, slo_violated = 4 };

// ---------------------------------------------------------------------------
// Synthetic latent stream with a piecewise-constant motion profile

struct MotionSegment {
  int frames = 16;
  double d = 0.0;  // target RMS frame difference
};

struct StreamProfile {
  int channels = 4;
  int height = 16;
  int width = 16;
  std::vector<MotionSegment> segments;

  int total_frames() const {
    int n = 1;
    for (const auto& s : segments) n += s.frames;
    return n;
  }
};

struct SyntheticStream {
  StreamProfile profile;
  std::vector<LatentFrame> frames;
  std::vector<double> target_d;  // per transition; target_d[i] belongs to frame i+1
};

// Frame 0 is Gaussian; every later frame adds Gaussian noise rescaled to the
// segment's exact RMS, so the measured motion equals the profile.
inline SyntheticStream gen_stream(const StreamProfile& profile, std::uint64_t seed) {
  require(profile.channels >= 1 && profile.height >= 1 && profile.width >= 1,
          ErrorCode::invalid_argument, "stream dims must be >= 1");
  for (const auto& s : profile.segments)
    require(s.frames >= 0 && s.d >= 0 && std::isfinite(s.d), ErrorCode::invalid_argument,
            "segment frames and d must be >= 0");
  SyntheticStream out{profile, {}, {}};
  Rng rng(seed);
  LatentFrame f = make_frame(profile.channels, profile.height, profile.width);
  for (auto& v : f.values) v = rng.normal();
  out.frames.push_back(f);
  const double n = static_cast<double>(f.values.size());
  std::vector<double> delta(f.values.size());
  for (const auto& seg : profile.segments) {
    for (int i = 0; i < seg.frames; ++i) {
      double ss = 0.0;
      for (auto& x : delta) {
        x = rng.normal();
        ss += x * x;
      }
      const double k = ss > 0 ? seg.d / std::sqrt(ss / n) : 0.0;
      ++f.frame_index;
      for (std::size_t j = 0; j < delta.size(); ++j) f.values[j] += k * delta[j];
      out.frames.push_back(f);
      out.target_d.push_back(seg.d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
      out += '\n';
    }
    return out;
  }

  std::size_t column(const std::string& h) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == h) return i;
    throw Error(ErrorCode::invalid_argument, "no column " + h);
  }
  double number(std::size_t row, const std::string& h) const { return std::stod(rows.at(row).at(column(h))); }
};

inline std::string num(double v) { return detail::fmt_double(v); }

// ---------------------------------------------------------------------------
// Pipeline assembly shared by scenarios, sweeps and presets

enum class PartitionMode { balanced, uniform, explicit_bounds };

struct PipelineConfig {
  int gpus = 1;
  CommStrategy strategy = CommStrategy::pipeline_p2p;
  bool stream_batch = true;
  bool comm_overlap = true;
  PartitionMode partition = PartitionMode::balanced;
  std::vector<int> boundaries;
  int ring_depth = 0;
  double stage_time_scale = 1.0;
  bool dit_only = false;  // drop VAE costs
};

inline ModelSpec without_vae(ModelSpec m) {
  m.vae_encode_cost = {};
  m.vae_decode_cost = {};
  return m;
}

inline Pipeline assemble_pipeline(const DeviceSpec& dev, const ModelSpec& model_in,
                                  const StreamShape& shape, const PipelineConfig& pc) {
  const ModelSpec model = pc.dit_only ? without_vae(model_in) : model_in;
  PipelineOptions opt;
  opt.mode = pc.stream_batch ? BatchingMode::stream_batch : BatchingMode::sequential;
  opt.comm_overlap = pc.comm_overlap;
  opt.ring_depth = pc.ring_depth;
  opt.stage_time_scale = pc.stage_time_scale;
  if (pc.strategy != CommStrategy::pipeline_p2p)
    return build_sequence_parallel(dev, model, shape, pc.strategy, pc.gpus, opt);
  opt.devices = pc.gpus;
  const BlockCostProfile profile = model_block_profile(dev, model, shape, opt.mode);
  Partition part;
  switch (pc.partition) {
    case PartitionMode::balanced: part = balance(profile, pc.gpus); break;
    case PartitionMode::uniform: part = uniform_partition(profile, pc.gpus); break;
    case PartitionMode::explicit_bounds: part = make_partition(profile, pc.boundaries); break;
  }
  return build_pipeline(part, dev, model, shape, opt);
}

// ---------------------------------------------------------------------------
// Scenario

struct OutputPaths {
  std::string report = "report.json";
  std::string report_csv = "report.csv";
  std::string trace_json = "trace.json";
  std::string trace_csv = "trace.csv";
  std::string motion_csv = "motion.csv";
  std::string kv_csv = "kv_cache.csv";
};

struct ContextConfig {
  bool enabled = false;
  int sinks = 4;
  double tau = 0.95;
  long t_reset = 64;
  int kv_capacity = 32;
};

struct Scenario {
  std::string name = "scenario";
  DeviceSpec device;
  ModelSpec model;
  StreamShape stream;
  bool auto_batch = false;
  int b_max = 8;
  double input_fps = 0.0;
  std::optional<SloTarget> slo;
  PipelineConfig pipeline;
  int groups = 64;
  double max_time = std::numeric_limits<double>::infinity();
  bool motion_enabled = false;
  MotionControllerConfig motion;
  std::vector<int> timesteps = {1000, 750, 500, 250};
  ContextConfig context;
  std::optional<StreamProfile> synthetic;
  OutputPaths outputs;
  std::uint64_t seed = 0;
};

namespace detail {

inline StreamProfile profile_from_json(const json& j) {
  StreamProfile p;
  p.channels = get_or(j, "channels", 4);
  p.height = get_or(j, "height", 16);
  p.width = get_or(j, "width", 16);
  const json segs = get_or(j, "segments", json::array());
  require(segs.is_array(), ErrorCode::schema_violation, "synthetic_stream.segments must be an array");
  for (const auto& s : segs)
    p.segments.push_back(MotionSegment{get_required<int>(s, "frames"), get_required<double>(s, "d")});
  return p;
}

inline std::string output_field(const json& outs, const char* key, const std::string& fallback) {
  auto it = outs.find(key);
  if (it == outs.end()) return fallback;
  if (it->is_null()) return "";
  return it->get<std::string>();
}

}  // namespace detail

inline Scenario scenario_from_json(const json& j, const FixtureStore* store) {
  using detail::get_or;
  using detail::get_required;
  try {
    require(j.is_object(), ErrorCode::schema_violation, "scenario must be a JSON object");
    const int version = get_required<int>(j, "schema_version");
    require(version == kScenarioSchemaVersion, ErrorCode::schema_violation,
            "unsupported schema_version " + std::to_string(version));
    static const std::set<std::string> known = {"schema_version", "name",   "seed",    "device", "model",
                                                "stream",         "input_fps", "slo",   "pipeline", "run",
                                                "motion",         "context", "synthetic_stream", "outputs"};
    for (const auto& [key, value] : j.items())
      require(known.count(key) > 0, ErrorCode::schema_violation, "unknown scenario key: " + key);
    Scenario s;
    s.name = get_or<std::string>(j, "name", "scenario");
    s.seed = get_or<std::uint64_t>(j, "seed", 0);

    const json& dj = j.at("device");
    if (dj.is_string()) {
      require(store != nullptr, ErrorCode::schema_violation, "named device needs a fixture dir");
      s.device = store->device(dj.get<std::string>());
    } else {
      s.device = device_from_json(dj);
    }
    const json& mj = j.at("model");
    if (mj.is_string()) {
      require(store != nullptr, ErrorCode::schema_violation, "named model needs a fixture dir");
      s.model = store->model(mj.get<std::string>());
    } else {
      s.model = model_from_json(mj);
    }

    json stream = get_or(j, "stream", json::object());
    if (auto b = stream.find("batch"); b != stream.end() && b->is_string()) {
      require(b->get<std::string>() == "auto", ErrorCode::schema_violation,
              "stream.batch must be an integer or \"auto\"");
      s.auto_batch = true;
      stream.erase("batch");
    }
    s.b_max = get_or(stream, "b_max", 8);
    stream.erase("b_max");
    s.stream = shape_from_json(stream);
    s.input_fps = get_or(j, "input_fps", 0.0);
    require(s.input_fps >= 0, ErrorCode::schema_violation, "input_fps must be >= 0");

    if (auto it = j.find("slo"); it != j.end() && !it->is_null()) {
      SloTarget t;
      t.target_fps = get_required<double>(*it, "target_fps");
      t.per_frame_deadline = get_or(*it, "per_frame_deadline", 1.0 / t.target_fps);
      t.ttff_budget = get_or(*it, "ttff_budget", 1.0);
      validate(t);
      s.slo = t;
    }

    const json pj = get_or(j, "pipeline", json::object());
    PipelineConfig& pc = s.pipeline;
    pc.gpus = get_or(pj, "gpus", 1);
    require(pc.gpus >= 1, ErrorCode::schema_violation, "pipeline.gpus must be >= 1");
    pc.strategy = parse_comm_strategy(get_or<std::string>(pj, "strategy", "pipeline_p2p"));
    pc.stream_batch = get_or(pj, "stream_batch", true);
    pc.comm_overlap = get_or(pj, "comm_overlap", true);
    pc.ring_depth = get_or(pj, "ring_depth", 0);
    pc.stage_time_scale = get_or(pj, "stage_time_scale", 1.0);
    pc.dit_only = get_or(pj, "dit_only", false);
    if (auto it = pj.find("partition"); it != pj.end()) {
      if (it->is_array()) {
        pc.partition = PartitionMode::explicit_bounds;
        pc.boundaries = it->get<std::vector<int>>();
      } else {
        const std::string mode = it->get<std::string>();
        require(mode == "auto" || mode == "uniform", ErrorCode::schema_violation,
                "pipeline.partition must be \"auto\", \"uniform\" or a boundary list");
        pc.partition = mode == "auto" ? PartitionMode::balanced : PartitionMode::uniform;
      }
    }

    const json rj = get_or(j, "run", json::object());
    s.groups = get_or(rj, "chunks", 64);
    require(s.groups >= 1, ErrorCode::schema_violation, "run.chunks must be >= 1");
    if (auto it = rj.find("max_time"); it != rj.end() && !it->is_null()) s.max_time = it->get<double>();

    if (auto it = j.find("motion"); it != j.end() && !it->is_null()) {
      s.motion_enabled = true;
      MotionControllerConfig& m = s.motion;
      m.window_k = get_or(*it, "window_k", m.window_k);
      m.lambda = get_or(*it, "lambda", m.lambda);
      m.s_min = get_or(*it, "s_min", m.s_min);
      m.s_max = get_or(*it, "s_max", m.s_max);
      m.sigma = get_or(*it, "sigma", m.sigma);
      const std::string mode = get_or<std::string>(*it, "sigma_mode", "fixed");
      require(mode == "fixed" || mode == "running_p95", ErrorCode::schema_violation,
              "motion.sigma_mode must be fixed or running_p95");
      m.sigma_mode = mode == "fixed" ? SigmaMode::fixed : SigmaMode::running_p95;
      s.timesteps = get_or(*it, "timesteps", s.timesteps);
    }
    if (auto it = j.find("context"); it != j.end() && !it->is_null()) {
      ContextConfig& c = s.context;
      c.enabled = true;
      c.sinks = get_or(*it, "sinks", c.sinks);
      c.tau = get_or(*it, "tau", c.tau);
      c.t_reset = get_or(*it, "t_reset", c.t_reset);
      c.kv_capacity = get_or(*it, "kv_capacity", c.kv_capacity);
      require(c.sinks >= 1 && c.kv_capacity > c.sinks && c.t_reset >= 1, ErrorCode::schema_violation,
              "context fields out of range");
    }
    if (auto it = j.find("synthetic_stream"); it != j.end() && !it->is_null())
      s.synthetic = detail::profile_from_json(*it);

    const json oj = get_or(j, "outputs", json::object());
    OutputPaths& o = s.outputs;
    o.report = detail::output_field(oj, "report", o.report);
    o.report_csv = detail::output_field(oj, "report_csv", o.report_csv);
    o.trace_json = detail::output_field(oj, "trace_json", o.trace_json);
    o.trace_csv = detail::output_field(oj, "trace_csv", o.trace_csv);
    o.motion_csv = detail::output_field(oj, "motion_csv", o.motion_csv);
    o.kv_csv = detail::output_field(oj, "kv_csv", o.kv_csv);
    return s;
  } catch (const Error& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
}

struct ContextSummary {
  int sink_refreshes = 0;
  long max_rope_position = 0;
  long kv_evictions = 0;
};

struct ScenarioOutcome {
  ExitCode exit_code = ExitCode::ok;
  std::string message;
  SimReport report;
  SimTrace trace;
  std::optional<BatchDecision> batch;
  std::vector<MotionSample> motion;
  ContextSummary context;
  std::string kv_dump;
  StreamShape stream;
};

namespace detail {

inline void run_motion(const Scenario& s, const SyntheticStream& stream, ScenarioOutcome& out) {
  MotionController ctl(s.motion);
  const double fps = s.input_fps > 0 ? s.input_fps : 1.0;
  const int T = s.stream.chunk_frames_T;
  for (const auto& f : stream.frames) {
    const MotionSample& m = ctl.observe(f);
    if (f.frame_index > 0 && f.frame_index % T == 0) {
      const DenoiseSchedule sched = schedule_for_rate(m.s, s.timesteps, s.motion.s_min, s.motion.s_max);
      out.trace.instants.push_back(TraceInstant{
          static_cast<double>(f.frame_index) / fps, 0, "noise_rate",
          {{"s", m.s}, {"d_hat", m.d_hat}, {"start_timestep", static_cast<double>(sched.start_timestep)},
           {"steps", static_cast<double>(sched.steps.size())}}});
    }
  }
  out.motion = ctl.history();
}

inline void run_context(const Scenario& s, const SyntheticStream& stream, ScenarioOutcome& out) {
  const int T = s.stream.chunk_frames_T;
  const auto& frames = stream.frames;
  std::vector<Vec> embeddings;
  for (std::size_t a = 0; a + T <= frames.size(); a += T) {
    Vec h(frames[a].values.size(), 0.0);
    for (int t = 0; t < T; ++t)
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += frames[a + t].values[i] / T;
    embeddings.push_back(std::move(h));
  }
  if (embeddings.empty()) return;
  std::vector<Vec> init;
  for (int i = 0; i < s.context.sinks; ++i)
    init.push_back(embeddings[std::min<std::size_t>(i, embeddings.size() - 1)]);
  SinkSet sinks = make_sink_set(init, s.context.tau);
  const std::size_t first = std::min<std::size_t>(s.context.sinks, embeddings.size());
  for (std::size_t c = first; c < embeddings.size(); ++c) {
    const auto before = sinks.last_refresh;
    sinks = sink_refresh(std::move(sinks), embeddings[c], static_cast<long>(c));
    for (std::size_t i = 0; i < before.size(); ++i)
      if (sinks.last_refresh[i] != before[i]) ++out.context.sink_refreshes;
  }

  const RopeState rope{s.context.t_reset, 0};
  const std::size_t dim = std::min<std::size_t>(8, frames.front().values.size());
  std::vector<KvEntry> sink_entries;
  for (int i = 0; i < s.context.sinks; ++i) {
    Vec k(sinks.sinks[i].begin(), sinks.sinks[i].begin() + static_cast<long>(dim));
    sink_entries.push_back(KvEntry{k, k, -1 - i, true});
  }
  RollingKvCache cache(static_cast<std::size_t>(s.context.kv_capacity), sink_entries);
  for (std::size_t a = 0; a + T <= frames.size(); a += T) {
    std::vector<KvEntry> chunk;
    for (int t = 0; t < T; ++t) {
      const auto& f = frames[a + t];
      Vec k(f.values.begin(), f.values.begin() + static_cast<long>(dim));
      chunk.push_back(KvEntry{k, k, f.frame_index, false});
      out.context.max_rope_position =
          std::max(out.context.max_rope_position, rope_position(f.frame_index, rope));
    }
    if (chunk.size() <= cache.ring_capacity()) cache.append(chunk);
  }
  out.context.kv_evictions = cache.evicted();
  out.kv_dump = cache.dump_csv();
}

}  // namespace detail

inline ScenarioOutcome run_scenario(const Scenario& s) {
  ScenarioOutcome out;
  StreamShape shape = s.stream;
  if (s.auto_batch) {
    require(s.slo.has_value(), ErrorCode::schema_violation, "stream.batch auto needs an slo block");
    const BatchDecision d =
        select_batch(*s.slo, s.device, s.model, shape, s.b_max * shape.chunk_frames_T, s.b_max);
    out.batch = d;
    if (!d.feasible) {
      out.exit_code = ExitCode::infeasible_slo;
      out.message = "no batch size meets the SLO on one device";
      out.stream = shape;
      return out;
    }
    shape.batch_B = d.batch_B;
  }
  out.stream = shape;
  const Pipeline p = assemble_pipeline(s.device, s.model, shape, s.pipeline);

  if (s.slo) {
    const double capacity = static_cast<double>(p.batch_B) * p.chunk_frames_T / analytic_steady_interval(p);
    if (capacity < s.slo->target_fps) {
      out.exit_code = ExitCode::infeasible_slo;
      char buf[160];
      std::snprintf(buf, sizeof buf, "pipeline capacity %.3f FPS below target %.3f FPS", capacity,
                    s.slo->target_fps);
      out.message = buf;
      return out;
    }
  }

  RunConfig rc;
  rc.groups = s.groups;
  rc.max_time = s.max_time;
  rc.input_fps = s.input_fps;
  rc.slo = s.slo;
  SimResult res = run(p, rc);
  out.report = res.report;
  out.trace = std::move(res.trace);

  if (s.synthetic) {
    const SyntheticStream stream = gen_stream(*s.synthetic, s.seed);
    if (s.motion_enabled) detail::run_motion(s, stream, out);
    if (s.context.enabled) detail::run_context(s, stream, out);
  }
  if (out.report.slo_violations > 0) {
    out.exit_code = ExitCode::slo_violated;
    out.message = std::to_string(out.report.slo_violations) + " SLO violation(s)";
  }
  return out;
}

inline json outcome_json(const Scenario& s, const ScenarioOutcome& o) {
  json j{{"scenario", s.name},
         {"exit_code", static_cast<int>(o.exit_code)},
         {"message", o.message},
         {"stream", to_json(o.stream)},
         {"report", to_json(o.report)}};
  if (o.batch) {
    j["batch_decision"] = {{"batch", o.batch->batch_B},
                           {"predicted_latency", o.batch->predicted_latency},
                           {"predicted_fps", o.batch->predicted_fps},
                           {"regime", std::string(to_string(o.batch->regime))},
                           {"feasible", o.batch->feasible}};
  }
  if (s.context.enabled) {
    j["context"] = {{"sink_refreshes", o.context.sink_refreshes},
                    {"max_rope_position", o.context.max_rope_position},
                    {"kv_evictions", o.context.kv_evictions}};
  }
  return j;
}

inline std::string motion_csv(const std::vector<MotionSample>& samples) {
  std::string out = "frame,d,d_hat,s\n";
  char buf[128];
  for (const auto& h : samples) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", h.frame_index, h.d, h.d_hat, h.s);
    out += buf;
  }
  return out;
}

// Writes the configured outputs under `dir`; returns the written paths.
inline std::vector<std::filesystem::path> write_outputs(const Scenario& s, const ScenarioOutcome& o,
                                                        const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    if (name.empty()) return;
    write_text_file(dir / name, text);
    written.push_back(dir / name);
  };
  emit(s.outputs.report, outcome_json(s, o).dump(2) + "\n");
  emit(s.outputs.report_csv, report_csv_header() + "\n" + report_csv_row(o.report) + "\n");
  emit(s.outputs.trace_json, chrome_trace(o.trace, s.name).dump() + "\n");
  emit(s.outputs.trace_csv, trace_csv(o.trace));
  if (s.motion_enabled && s.synthetic) emit(s.outputs.motion_csv, motion_csv(o.motion));
  if (s.context.enabled && s.synthetic) emit(s.outputs.kv_csv, o.kv_dump);
  return written;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepGrid {
  DeviceSpec device;
  ModelSpec model;
  StreamShape base;
  std::vector<int> gpus = {1, 2, 3, 4};
  std::vector<int> steps = {1, 2, 3, 4};
  std::vector<std::pair<int, int>> resolutions;  // (height, width); empty = base
  std::vector<CommStrategy> strategies = {CommStrategy::pipeline_p2p};
  bool stream_batch = true;
  bool comm_overlap = true;
  bool dit_only = false;
  double input_fps = 0.0;
  int groups = 160;
  double stage_time_scale = 1.0;
};

struct SweepPoint {
  int gpus = 1;
  int steps = 1;
  int height = 0;
  int width = 0;
  CommStrategy strategy = CommStrategy::pipeline_p2p;
  SimReport report;
};

inline SimReport simulate_point(const DeviceSpec& dev, const ModelSpec& model, const StreamShape& shape,
                                const PipelineConfig& pc, double input_fps, int groups) {
  const Pipeline p = assemble_pipeline(dev, model, shape, pc);
  RunConfig rc;
  rc.groups = groups;
  rc.input_fps = input_fps;
  return run(p, rc).report;
}

// Cartesian sweep; points run concurrently, results come back in grid order.
inline std::vector<SweepPoint> sweep(const SweepGrid& g) {
  std::vector<SweepPoint> points;
  const auto res = g.resolutions.empty()
                       ? std::vector<std::pair<int, int>>{{g.base.height_H, g.base.width_W}}
                       : g.resolutions;
  for (int k : g.gpus)
    for (int n : g.steps)
      for (auto [h, w] : res)
        for (CommStrategy st : g.strategies) points.push_back(SweepPoint{k, n, h, w, st, {}});

  std::vector<std::future<SimReport>> futures;
  for (const auto& pt : points) {
    futures.push_back(std::async(std::launch::async, [&g, pt] {
      StreamShape shape = g.base;
      shape.denoise_steps_n = pt.steps;
      shape.height_H = pt.height;
      shape.width_W = pt.width;
      PipelineConfig pc;
      pc.gpus = pt.gpus;
      pc.strategy = pt.strategy;
      pc.stream_batch = g.stream_batch;
      pc.comm_overlap = g.comm_overlap;
      pc.dit_only = g.dit_only;
      pc.stage_time_scale = g.stage_time_scale;
      return simulate_point(g.device, g.model, shape, pc, g.input_fps, g.groups);
    }));
  }
  for (std::size_t i = 0; i < points.size(); ++i) points[i].report = futures[i].get();
  return points;
}

inline Table sweep_table(const std::vector<SweepPoint>& pts, const std::string& name = "sweep") {
  Table t{name,
          {"gpus", "steps", "height", "width", "strategy", "ttff", "steady_fps", "bubble_max",
           "latency_p95", "speedup"},
          {}};
  for (const auto& p : pts) {
    double base = 0.0;
    for (const auto& q : pts)
      if (q.gpus == 1 && q.steps == p.steps && q.height == p.height && q.width == p.width &&
          q.strategy == p.strategy)
        base = q.report.steady_fps;
    double bubble = 0.0;
    for (double b : p.report.bubble_fraction) bubble = std::max(bubble, b);
    t.rows.push_back({std::to_string(p.gpus), std::to_string(p.steps), std::to_string(p.height),
                      std::to_string(p.width), std::string(to_string(p.strategy)), num(p.report.ttff),
                      num(p.report.steady_fps), num(bubble), num(p.report.per_chunk_latency.p95),
                      base > 0 ? num(p.report.steady_fps / base) : ""});
  }
  return t;
}

inline SweepGrid sweep_grid_from_json(const json& j, const FixtureStore& store) {
  using detail::get_or;
  try {
    SweepGrid g;
    g.device = j.at("device").is_string() ? store.device(j.at("device").get<std::string>())
                                          : device_from_json(j.at("device"));
    g.model = j.at("model").is_string() ? store.model(j.at("model").get<std::string>())
                                        : model_from_json(j.at("model"));
    g.base = shape_from_json(get_or(j, "stream", json::object()));
    g.gpus = get_or(j, "gpus", g.gpus);
    g.steps = get_or(j, "steps", g.steps);
    for (const auto& r : get_or(j, "resolutions", json::array()))
      g.resolutions.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
    if (auto it = j.find("strategies"); it != j.end()) {
      g.strategies.clear();
      for (const auto& s : *it) g.strategies.push_back(parse_comm_strategy(s.get<std::string>()));
    }
    g.stream_batch = get_or(j, "stream_batch", g.stream_batch);
    g.comm_overlap = get_or(j, "comm_overlap", g.comm_overlap);
    g.dit_only = get_or(j, "dit_only", g.dit_only);
    g.input_fps = get_or(j, "input_fps", g.input_fps);
    g.groups = get_or(j, "chunks", g.groups);
    return g;
  } catch (const Error& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
}

// ---------------------------------------------------------------------------
// Calibration of absolute FPS targets

struct CalibrationTarget {
  std::string name;
  std::string device;
  std::string model;
  int gpus = 4;
  StreamShape stream;
  double target_fps = 0.0;
  double stage_time_scale = 1.0;
};

inline double calibration_fps(const CalibrationTarget& t, const FixtureStore& store, double scale) {
  PipelineConfig pc;
  pc.gpus = t.gpus;
  pc.stage_time_scale = scale;
  return simulate_point(store.device(t.device), store.model(t.model), t.stream, pc, 0.0, 160).steady_fps;
}

// Bisection on log(scale); simulated FPS falls as the scale grows.
inline double solve_stage_time_scale(const CalibrationTarget& t, const FixtureStore& store) {
  require(t.target_fps > 0, ErrorCode::invalid_argument, "calibration target must be > 0");
  double lo = std::log(1e-3);
  double hi = std::log(1e3);
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (calibration_fps(t, store, std::exp(mid)) > t.target_fps) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

inline std::vector<CalibrationTarget> calibration_targets(const json& j) {
  std::vector<CalibrationTarget> out;
  if (!j.contains("targets")) return out;
  for (const auto& t : j.at("targets")) {
    CalibrationTarget c;
    c.name = detail::get_required<std::string>(t, "name");
    c.device = detail::get_required<std::string>(t, "device");
    c.model = detail::get_required<std::string>(t, "model");
    c.gpus = detail::get_or(t, "gpus", 4);
    c.stream = shape_from_json(detail::get_or(t, "stream", json::object()));
    c.target_fps = detail::get_required<double>(t, "target_fps");
    c.stage_time_scale = detail::get_or(t, "stage_time_scale", 1.0);
    out.push_back(c);
  }
  return out;
}

inline json calibration_json(const std::vector<CalibrationTarget>& targets) {
  json arr = json::array();
  for (const auto& t : targets) {
    arr.push_back({{"name", t.name},
                   {"device", t.device},
                   {"model", t.model},
                   {"gpus", t.gpus},
                   {"stream", to_json(t.stream)},
                   {"target_fps", t.target_fps},
                   {"stage_time_scale", t.stage_time_scale},
                   {"label", "calibrated"}});
  }
  return json{{"fixture_version", kFixtureVersion},
              {"notes",
               "Absolute FPS regression targets. stage_time_scale multiplies every compute span and "
               "is fitted by the calibrate verb; these rows are calibrated, not predicted."},
              {"targets", arr}};
}

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline StreamShape stream_480p(int steps, int frames = 4) {
  StreamShape s;
  s.batch_B = 1;
  s.chunk_frames_T = frames;
  s.height_H = 480;
  s.width_W = 832;
  s.denoise_steps_n = steps;
  return s;
}

inline constexpr const char* kDevice = "h100_sxm";
inline constexpr const char* kSmallModel = "wan2.1-1.3b";

}  // namespace detail

inline Table preset_ttff_bars(const FixtureStore& store) {
  const DeviceSpec dev = store.device(detail::kDevice);
  const ModelSpec model = store.model(detail::kSmallModel);
  struct Row {
    std::string label;
    int frames;
    double fps;
  };
  const std::vector<Row> rows = {{"chunk4_16fps", 4, 16.0},
                                 {"chunk4_30fps", 4, 30.0},
                                 {"chunk81_16fps", 81, 16.0},
                                 {"chunk81_30fps", 81, 30.0}};
  Table t{"ttff_bars",
          {"config", "chunk_frames", "steps", "input_fps", "buffering", "ttff_sim", "ttff_first_frame_law",
           "ratio_vs_chunk4_30fps"},
          {}};
  std::vector<double> ttff;
  for (const auto& r : rows) {
    const StreamShape s = detail::stream_480p(2, r.frames);
    PipelineConfig pc;
    RunConfig rc;
    rc.groups = 2;
    rc.input_fps = r.fps;
    ttff.push_back(run(assemble_pipeline(dev, model, s, pc), rc).report.ttff);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const StreamShape s = detail::stream_480p(2, rows[i].frames);
    t.rows.push_back({rows[i].label, std::to_string(rows[i].frames), "2", num(rows[i].fps),
                      num(rows[i].frames / rows[i].fps), num(ttff[i]),
                      num(ttff_estimate(dev, model, s, rows[i].fps)), num(ttff[i] / ttff[1])});
  }
  return t;
}

inline std::vector<Table> preset_fps_scaling(const FixtureStore& store) {
  SweepGrid g;
  g.device = store.device(detail::kDevice);
  g.model = store.model(detail::kSmallModel);
  g.base = detail::stream_480p(1);
  Table whole = sweep_table(sweep(g), "fps_scaling");
  g.dit_only = true;
  Table dit = sweep_table(sweep(g), "fps_scaling_dit_only");
  return {whole, dit};
}

inline Table preset_balance_before_after(const FixtureStore& store, int gpus = 4) {
  const DeviceSpec dev = store.device(detail::kDevice);
  const ModelSpec model = store.model(detail::kSmallModel);
  const StreamShape s = detail::stream_480p(1);
  const BlockCostProfile prof = model_block_profile(dev, model, s, BatchingMode::stream_batch);
  Table t{"balance_before_after", {"partition", "device", "blocks", "stage_time", "bubble_fraction", "steady_fps"}, {}};
  for (const bool balanced : {false, true}) {
    const Partition part = balanced ? balance(prof, gpus) : uniform_partition(prof, gpus);
    PipelineConfig pc;
    pc.gpus = gpus;
    pc.partition = balanced ? PartitionMode::balanced : PartitionMode::uniform;
    const SimReport r = simulate_point(dev, model, s, pc, 0.0, 160);
    const auto sizes = part.stage_sizes(prof.num_blocks());
    for (int k = 0; k < gpus; ++k)
      t.rows.push_back({balanced ? "balanced" : "uniform", std::to_string(k), std::to_string(sizes[k]),
                        num(part.stage_times[k]), num(bubble_fraction(part)), num(r.steady_fps)});
  }
  return t;
}

inline Table preset_stream_batch(const FixtureStore& store, int gpus = 4) {
  const DeviceSpec dev = store.device(detail::kDevice);
  const ModelSpec model = store.model(detail::kSmallModel);
  Table t{"stream_batch", {"steps", "gpus", "fps_stream_batch", "fps_sequential", "ratio", "gap"}, {}};
  for (int n : {1, 2, 4}) {
    const StreamShape s = detail::stream_480p(n);
    PipelineConfig pc;
    pc.gpus = gpus;
    const double sb = simulate_point(dev, model, s, pc, 0.0, 160).steady_fps;
    pc.stream_batch = false;
    const double seq = simulate_point(dev, model, s, pc, 0.0, 160).steady_fps;
    t.rows.push_back({std::to_string(n), std::to_string(gpus), num(sb), num(seq), num(sb / seq), num(sb - seq)});
  }
  return t;
}

inline std::vector<Table> preset_comm_compare(const FixtureStore& store) {
  const DeviceSpec dev = store.device(detail::kDevice);
  const ModelSpec model = store.model(detail::kSmallModel);
  Table comm{"comm_compare",
             {"gpus", "token_len", "pipeline_p2p", "ulysses_all_to_all", "ring_kv", "ulysses_ratio", "ring_ratio"},
             {}};
  for (int g : {2, 4}) {
    auto cost = [&](CommStrategy st) {
      return comm_cost(CommQuery{st, 1536.0, model.hidden_dim, 2.0, g, model.num_blocks}, dev).seconds;
    };
    const double pp = cost(CommStrategy::pipeline_p2p);
    const double ul = cost(CommStrategy::ulysses_all_to_all);
    const double rg = cost(CommStrategy::ring_kv);
    comm.rows.push_back({std::to_string(g), "1536", num(pp), num(ul), num(rg), num(ul / pp), num(rg / pp)});
  }
  SweepGrid g;
  g.device = dev;
  g.model = model;
  g.base = detail::stream_480p(1);
  g.gpus = {2, 4};
  g.steps = {1};
  g.strategies = {CommStrategy::pipeline_p2p, CommStrategy::ulysses_all_to_all, CommStrategy::ring_kv};
  return {comm, sweep_table(sweep(g), "comm_compare_fps")};
}

inline StreamProfile motion_demo_profile() {
  StreamProfile p;
  p.channels = 4;
  p.height = 16;
  p.width = 16;
  p.segments = {{32, 0.05}, {32, 0.8}, {32, 0.2}, {32, 0.0}};
  return p;
}

inline Table preset_motion_demo(std::uint64_t seed) {
  const SyntheticStream stream = gen_stream(motion_demo_profile(), seed);
  MotionController ctl;
  Table t{"motion_demo", {"frame", "target_d", "d", "d_hat", "s"}, {}};
  for (const auto& f : stream.frames) {
    const MotionSample m = ctl.observe(f);
    if (f.frame_index == 0) continue;
    t.rows.push_back({std::to_string(f.frame_index), num(stream.target_d[f.frame_index - 1]), num(m.d),
                      num(m.d_hat), num(m.s)});
  }
  return t;
}

inline Table preset_calibrated_fps(const FixtureStore& store) {
  Table t{"calibrated_fps", {"name", "model", "stream", "gpus", "stage_time_scale", "target_fps", "sim_fps", "rel_err", "label"}, {}};
  for (const auto& c : calibration_targets(store.optional("calibration.json"))) {
    const double fps = calibration_fps(c, store, c.stage_time_scale);
    char stream[64];
    std::snprintf(stream, sizeof stream, "%dx%d_T%d_n%d", c.stream.width_W, c.stream.height_H,
                  c.stream.chunk_frames_T, c.stream.denoise_steps_n);
    t.rows.push_back({c.name, c.model, stream, std::to_string(c.gpus), num(c.stage_time_scale),
                      num(c.target_fps), num(fps), num(std::abs(fps - c.target_fps) / c.target_fps),
                      "calibrated"});
  }
  return t;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"ttff_bars",    "fps_scaling", "balance_before_after",
                                                 "stream_batch", "comm_compare", "motion_demo",
                                                 "calibrated_fps"};
  return names;
}

inline std::vector<Table> run_preset(const std::string& name, const FixtureStore& store, std::uint64_t seed) {
  if (name == "ttff_bars") return {preset_ttff_bars(store)};
  if (name == "fps_scaling") return preset_fps_scaling(store);
  if (name == "balance_before_after") return {preset_balance_before_after(store)};
  if (name == "stream_batch") return {preset_stream_batch(store)};
  if (name == "comm_compare") return preset_comm_compare(store);
  if (name == "motion_demo") return {preset_motion_demo(seed)};
  if (name == "calibrated_fps") return {preset_calibrated_fps(store)};
  throw Error(ErrorCode::invalid_argument, "unknown preset: " + name);
}

}  // namespace streamserve
