#pragma once

// Trace and report serialization: browser trace-event JSON, CSV timelines and
// CSV/JSON report rows. Output is byte-stable for identical inputs.

#include <cstdio>
#include <string>

#include <json.hpp>

#include "streamserve/pipeline_sim.hpp"

namespace streamserve {

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string members_string(const std::vector<GroupRef>& m) {
  std::string s;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(m[i].group) + ':' + std::to_string(m[i].level);
  }
  return s;
}

}  // namespace detail

// Complete ("X") events in microseconds; one thread per device queue.
inline nlohmann::json chrome_trace(const SimTrace& trace, const std::string& process = "pipeline") {
  using nlohmann::json;
  json events = json::array();
  events.push_back({{"ph", "M"}, {"pid", 0}, {"tid", 0}, {"name", "process_name"},
                    {"args", {{"name", process}}}});
  for (int d = 0; d < trace.num_devices; ++d) {
    for (int q = 0; q < 2; ++q) {
      const std::string label = "gpu" + std::to_string(d) + "/" +
                                std::string(to_string(static_cast<QueueKind>(q)));
      events.push_back({{"ph", "M"}, {"pid", 0}, {"tid", d * 2 + q}, {"name", "thread_name"},
                        {"args", {{"name", label}}}});
    }
  }
  for (const auto& s : trace.spans) {
    std::string name = s.queue == QueueKind::compute ? "step" : "send";
    name += " slot" + std::to_string(s.slot);
    json args = {{"slot", s.slot},
                 {"traversal", s.traversal},
                 {"members", detail::members_string(s.members)}};
    if (s.admitted) args["admitted"] = true;
    if (s.emitted) args["emitted"] = true;
    events.push_back({{"ph", "X"},
                      {"pid", 0},
                      {"tid", s.device * 2 + static_cast<int>(s.queue)},
                      {"name", name},
                      {"cat", std::string(to_string(s.queue))},
                      {"ts", s.start * 1e6},
                      {"dur", (s.end - s.start) * 1e6},
                      {"args", args}});
  }
  const int last_tid = trace.num_devices > 0 ? (trace.num_devices - 1) * 2 : 0;
  for (const auto& e : trace.emissions) {
    events.push_back({{"ph", "i"}, {"s", "t"}, {"pid", 0}, {"tid", last_tid},
                      {"name", "emit"}, {"ts", e.time * 1e6}, {"args", {{"group", e.group}}}});
  }
  for (const auto& in : trace.instants) {
    json args = json::object();
    for (const auto& [k, v] : in.args) args[k] = v;
    events.push_back({{"ph", "i"}, {"s", "t"}, {"pid", 0}, {"tid", in.device * 2},
                      {"name", in.name}, {"ts", in.time * 1e6}, {"args", args}});
  }
  return json{{"traceEvents", events}, {"displayTimeUnit", "ms"}};
}

inline std::string trace_csv(const SimTrace& trace) {
  std::string out = "device,queue,start,end,slot,traversal,members,admitted,emitted\n";
  char buf[128];
  for (const auto& s : trace.spans) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%d,%d,", s.device,
                  std::string(to_string(s.queue)).c_str(), s.start, s.end, s.slot, s.traversal);
    out += buf;
    out += detail::members_string(s.members);
    out += s.admitted ? ",1" : ",0";
    out += s.emitted ? ",1\n" : ",0\n";
  }
  return out;
}

inline std::string report_csv_header() {
  return "ttff,steady_fps,latency_p50,latency_p95,latency_max,bubble_max,slo_violations,"
         "chunks_admitted,chunks_emitted,chunks_in_flight,makespan";
}

inline std::string report_csv_row(const SimReport& r) {
  double bubble = 0.0;
  for (double b : r.bubble_fraction) bubble = std::max(bubble, b);
  char buf[320];
  std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%d,%.9g", r.ttff,
                r.steady_fps, r.per_chunk_latency.p50, r.per_chunk_latency.p95,
                r.per_chunk_latency.max, bubble, r.slo_violations, r.chunks_admitted,
                r.chunks_emitted, r.chunks_in_flight, r.makespan);
  return buf;
}

inline nlohmann::json to_json(const SimReport& r) {
  return nlohmann::json{{"ttff", r.ttff},
                        {"steady_fps", r.steady_fps},
                        {"per_chunk_latency",
                         {{"p50", r.per_chunk_latency.p50},
                          {"p95", r.per_chunk_latency.p95},
                          {"max", r.per_chunk_latency.max}}},
                        {"bubble_fraction", r.bubble_fraction},
                        {"slo_violations", r.slo_violations},
                        {"chunks_admitted", r.chunks_admitted},
                        {"chunks_emitted", r.chunks_emitted},
                        {"chunks_in_flight", r.chunks_in_flight},
                        {"makespan", r.makespan}};
}

}  // namespace streamserve
