#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "streamserve/harness.hpp"
#include "test_support.hpp"

using namespace streamserve;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

json base_scenario() {
  return json::parse(R"({
    "schema_version": 1,
    "name": "unit",
    "device": "h100_sxm",
    "model": "wan2.1-1.3b",
    "stream": {"batch": 1, "chunk_frames": 4, "height": 480, "width": 832, "steps": 2},
    "input_fps": 16,
    "pipeline": {"gpus": 2},
    "run": {"chunks": 12},
    "motion": {"window_k": 4},
    "context": {"sinks": 2, "tau": 0.9, "t_reset": 16, "kv_capacity": 10},
    "synthetic_stream": {"channels": 2, "height": 4, "width": 4,
                         "segments": [{"frames": 12, "d": 0.1}, {"frames": 12, "d": 0.7}]},
    "seed": 3
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("streamserve_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(SyntheticStream, MotionMatchesProfile) {
  StreamProfile prof;
  prof.segments = {{10, 0.05}, {10, 0.8}, {5, 0.0}};
  const SyntheticStream s = gen_stream(prof, 5);
  ASSERT_EQ(static_cast<int>(s.frames.size()), prof.total_frames());
  for (std::size_t i = 1; i < s.frames.size(); ++i) {
    const double d = motion_intensity(s.frames[i - 1], s.frames[i]);
    EXPECT_NEAR(d, s.target_d[i - 1], 0.05 * s.target_d[i - 1] + 1e-12);
  }
  EXPECT_EQ(gen_stream(prof, 5).frames.back().values, s.frames.back().values);
  EXPECT_NE(gen_stream(prof, 6).frames.back().values, s.frames.back().values);
}

TEST(SyntheticStream, StepResponseThroughController) {
  const SyntheticStream s = gen_stream(motion_demo_profile(), 1);
  MotionController c;
  double calm = 0.0, busy = 0.0;
  for (const auto& f : s.frames) {
    const double v = c.observe(f).s;
    if (f.frame_index == 32) calm = v;
    if (f.frame_index == 64) busy = v;
  }
  EXPECT_NEAR(calm, 0.875, 1e-3);
  EXPECT_NEAR(busy, 0.5, 1e-3);
}

TEST(Scenario, ParsesFields) {
  const Scenario s = scenario_from_json(base_scenario(), &store());
  EXPECT_EQ(s.name, "unit");
  EXPECT_EQ(s.stream.denoise_steps_n, 2);
  EXPECT_EQ(s.pipeline.gpus, 2);
  EXPECT_EQ(s.pipeline.partition, PartitionMode::balanced);
  EXPECT_EQ(s.groups, 12);
  EXPECT_TRUE(s.motion_enabled);
  EXPECT_EQ(s.motion.window_k, 4);
  EXPECT_TRUE(s.context.enabled);
  ASSERT_TRUE(s.synthetic.has_value());
  EXPECT_EQ(s.synthetic->segments.size(), 2u);
  EXPECT_EQ(s.seed, 3u);
}

TEST(Scenario, SchemaErrors) {
  auto expect_schema = [](json j, const char* what) {
    try {
      scenario_from_json(j, &store());
      ADD_FAILURE() << what;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::schema_violation) << what;
    }
  };
  json j = base_scenario();
  j["schema_version"] = 2;
  expect_schema(j, "version");
  j = base_scenario();
  j.erase("schema_version");
  expect_schema(j, "missing version");
  j = base_scenario();
  j["pipline"] = json::object();
  expect_schema(j, "unknown key");
  j = base_scenario();
  j["device"] = "tpu";
  expect_schema(j, "unknown device");
  j = base_scenario();
  j["stream"]["batch"] = "many";
  expect_schema(j, "batch");
  j = base_scenario();
  j["pipeline"]["partition"] = "random";
  expect_schema(j, "partition");
  j = base_scenario();
  j["pipeline"]["strategy"] = "nccl";
  expect_schema(j, "strategy");
  j = base_scenario();
  j["run"]["chunks"] = "ten";
  expect_schema(j, "chunks type");
  j = base_scenario();
  j["context"]["kv_capacity"] = 1;
  expect_schema(j, "context");
  expect_schema(json::array(), "not an object");
}

TEST(Scenario, RunsAndWritesDeterministicOutputs) {
  const Scenario s = scenario_from_json(base_scenario(), &store());
  const fs::path a = scratch("a"), b = scratch("b");
  const auto files_a = write_outputs(s, run_scenario(s), a);
  const auto files_b = write_outputs(s, run_scenario(s), b);
  ASSERT_EQ(files_a.size(), 6u);
  for (std::size_t i = 0; i < files_a.size(); ++i) {
    EXPECT_EQ(files_a[i].filename(), files_b[i].filename());
    EXPECT_EQ(slurp(files_a[i]), slurp(files_b[i])) << files_a[i];
  }
  const json report = json::parse(slurp(a / "report.json"));
  EXPECT_EQ(report.at("exit_code"), 0);
  EXPECT_EQ(report.at("report").at("chunks_emitted"), 12);
  EXPECT_TRUE(report.contains("context"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Scenario, SeedChangesStochasticOutputsOnly) {
  Scenario s = scenario_from_json(base_scenario(), &store());
  const ScenarioOutcome o1 = run_scenario(s);
  s.seed = 4;
  const ScenarioOutcome o2 = run_scenario(s);
  EXPECT_EQ(report_csv_row(o1.report), report_csv_row(o2.report));
  EXPECT_NE(motion_csv(o1.motion), motion_csv(o2.motion));
}

TEST(Scenario, ExitCodes) {
  json j = base_scenario();
  j["slo"] = {{"target_fps", 16}, {"ttff_budget", 2.0}};
  EXPECT_EQ(run_scenario(scenario_from_json(j, &store())).exit_code, ExitCode::ok);

  j["slo"] = {{"target_fps", 500}};
  EXPECT_EQ(run_scenario(scenario_from_json(j, &store())).exit_code, ExitCode::infeasible_slo);

  // Feasible capacity but a first-frame budget the buffering alone exceeds.
  j["slo"] = {{"target_fps", 16}, {"ttff_budget", 0.1}};
  EXPECT_EQ(run_scenario(scenario_from_json(j, &store())).exit_code, ExitCode::slo_violated);

  j = base_scenario();
  j["stream"]["batch"] = "auto";
  j["stream"]["b_max"] = 4;
  j["slo"] = {{"target_fps", 16}, {"per_frame_deadline", 1e-4}};
  const ScenarioOutcome o = run_scenario(scenario_from_json(j, &store()));
  EXPECT_EQ(o.exit_code, ExitCode::infeasible_slo);
  ASSERT_TRUE(o.batch.has_value());
  EXPECT_FALSE(o.batch->feasible);
}

TEST(Scenario, AutoBatchPicksFeasibleB) {
  json j = base_scenario();
  j["stream"]["batch"] = "auto";
  j["stream"]["b_max"] = 4;
  j["slo"] = {{"target_fps", 16}, {"ttff_budget", 5.0}};
  const ScenarioOutcome o = run_scenario(scenario_from_json(j, &store()));
  ASSERT_TRUE(o.batch.has_value());
  EXPECT_TRUE(o.batch->feasible);
  EXPECT_EQ(o.stream.batch_B, o.batch->batch_B);
}

TEST(Scenario, ExplicitPartitionMismatchIsRejected) {
  json j = base_scenario();
  j["pipeline"]["partition"] = json::array({10, 20});
  const Scenario s = scenario_from_json(j, &store());
  EXPECT_THROW(run_scenario(s), Error);
  j["pipeline"]["partition"] = json::array({12});
  EXPECT_EQ(run_scenario(scenario_from_json(j, &store())).exit_code, ExitCode::ok);
}

TEST(Sweep, ResultsInGridOrderAndSpeedupColumn) {
  SweepGrid g;
  g.device = h100();
  g.model = wan13();
  g.base = shape480(1);
  g.gpus = {1, 2};
  g.steps = {1, 2};
  g.groups = 40;
  const auto pts = sweep(g);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_EQ(pts[0].gpus, 1);
  EXPECT_EQ(pts[0].steps, 1);
  EXPECT_EQ(pts[3].gpus, 2);
  EXPECT_EQ(pts[3].steps, 2);
  const Table t = sweep_table(pts);
  EXPECT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(sweep_table(sweep(g)).csv(), t.csv());
}

TEST(Calibration, StoredScalesHitTargets) {
  const auto targets = calibration_targets(store().optional("calibration.json"));
  ASSERT_EQ(targets.size(), 4u);
  for (const auto& t : targets) {
    const double fps = calibration_fps(t, store(), t.stage_time_scale);
    EXPECT_NEAR(fps, t.target_fps, 0.10 * t.target_fps) << t.name;
  }
}

TEST(Presets, AllPresetsProduceTables) {
  for (const auto& name : preset_names()) {
    const auto tables = run_preset(name, store(), 1);
    ASSERT_FALSE(tables.empty()) << name;
    for (const auto& t : tables) EXPECT_FALSE(t.rows.empty()) << name;
  }
  EXPECT_THROW(run_preset("nope", store(), 1), Error);
}

TEST(Table, CsvLayout) {
  Table t{"x", {"a", "b"}, {{"1", "2"}, {"3", "4"}}};
  EXPECT_EQ(t.csv(), "a,b\n1,2\n3,4\n");
}
