// streamserve command-line front end.
//
//   streamserve_cli run <scenario.json> [--out DIR] [--seed N]
//   streamserve_cli sweep (--preset NAME | <grid.json>) [--out DIR]
//   streamserve_cli balance <profile.csv> --stages K [--hysteresis H]
//   streamserve_cli calibrate [--out DIR]
//   streamserve_cli gen-fixtures [--out DIR] [--seed N]
//
// --config-dir (or STREAMSERVE_CONFIG_DIR) selects the fixture directory.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "streamserve/harness.hpp"

namespace fs = std::filesystem;
using namespace streamserve;

namespace {

int exit_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::schema_violation: return static_cast<int>(ExitCode::schema);
    case ErrorCode::infeasible_slo: return static_cast<int>(ExitCode::infeasible_slo);
    default: return static_cast<int>(ExitCode::usage);
  }
}

void print_table(const Table& t) {
  std::cout << "# " << t.name << "\n" << t.csv();
}

int cmd_run(const std::string& path, const fs::path& out, std::optional<std::uint64_t> seed,
            const fs::path& config_dir) {
  Scenario s;
  try {
    const json j = read_json_file(path);
    std::optional<FixtureStore> store;
    if (fs::exists(config_dir / "devices.json")) store.emplace(config_dir);
    s = scenario_from_json(j, store ? &*store : nullptr);
  } catch (const Error& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::schema);
  }
  if (seed) s.seed = *seed;
  const ScenarioOutcome o = run_scenario(s);
  write_outputs(s, o, out);
  std::cout << report_csv_header() << "\n" << report_csv_row(o.report) << "\n";
  if (!o.message.empty()) std::cerr << o.message << "\n";
  return static_cast<int>(o.exit_code);
}

int cmd_sweep(const std::string& preset, const std::string& grid, const fs::path& out,
              std::uint64_t seed, const fs::path& config_dir) {
  const FixtureStore store(config_dir);
  std::vector<Table> tables;
  if (!preset.empty()) {
    const std::vector<std::string> names =
        preset == "all" ? preset_names() : std::vector<std::string>{preset};
    for (const auto& n : names)
      for (auto& t : run_preset(n, store, seed)) tables.push_back(std::move(t));
  } else {
    require(!grid.empty(), ErrorCode::invalid_argument, "sweep needs --preset or a grid file");
    tables.push_back(sweep_table(sweep(sweep_grid_from_json(read_json_file(grid), store))));
  }
  for (const auto& t : tables) {
    print_table(t);
    write_text_file(out / (t.name + ".csv"), t.csv());
  }
  return 0;
}

int cmd_balance(const std::string& path, int stages, double hysteresis) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const BlockCostProfile prof = profile_from_csv(ss.str());
  const Partition uni = uniform_partition(prof, stages);
  const Partition bal = balance(prof, stages);
  const Partition adopted = rebalance_online(uni, prof, hysteresis);
  Table t{"balance", {"partition", "stage", "first_block", "last_block", "stage_time", "bubble_fraction"}, {}};
  for (const auto* p : {&uni, &bal, &adopted}) {
    const char* label = p == &uni ? "uniform" : p == &bal ? "balanced" : "adopted";
    for (int k = 0; k < p->stages(); ++k) {
      auto [a, b] = p->stage_range(k, prof.num_blocks());
      t.rows.push_back({label, std::to_string(k), std::to_string(a), std::to_string(b - 1),
                        num(p->stage_times[k]), num(bubble_fraction(*p))});
    }
  }
  print_table(t);
  return 0;
}

int cmd_calibrate(const fs::path& out, const fs::path& config_dir) {
  const FixtureStore store(config_dir);
  auto targets = calibration_targets(store.optional("calibration.json"));
  require(!targets.empty(), ErrorCode::io, "no calibration targets in " + config_dir.string());
  for (auto& t : targets) {
    t.stage_time_scale = solve_stage_time_scale(t, store);
    std::printf("%s target %.2f scale %.9g fps %.4f\n", t.name.c_str(), t.target_fps, t.stage_time_scale,
                calibration_fps(t, store, t.stage_time_scale));
  }
  write_text_file(out / "calibration.json", calibration_json(targets).dump(2) + "\n");
  return 0;
}

// Seeded reference tensors for cross-implementation checks.
int cmd_gen_fixtures(const fs::path& out, std::uint64_t seed, const fs::path& config_dir) {
  fs::create_directories(out);
  Rng rng(seed);
  const AttentionParams ap = AttentionParams::make(16, 2);
  const int n = 12;
  std::vector<long> pos(n);
  for (int i = 0; i < n; ++i) pos[i] = i;
  const Tensor q = random_tensor({n, ap.width()}, rng);
  const Tensor k = random_tensor({n, ap.width()}, rng);
  const Tensor v = random_tensor({n, ap.width()}, rng);
  const Tensor qr = rope_apply(q, pos, ap);
  const Tensor kr = rope_apply(k, pos, ap);
  save_tensor((out / "attn_q.bin").string(), q);
  save_tensor((out / "attn_k.bin").string(), k);
  save_tensor((out / "attn_v.bin").string(), v);
  save_tensor((out / "attn_q_rope.bin").string(), qr);
  save_tensor((out / "attn_out.bin").string(), attention_full(qr, kr, v, pos, ap));

  const Conv3dStack stack = make_conv3d_stack(2, 3, 2, 3, seed);
  const Tensor video = random_tensor({16, 2, 6, 6}, rng);
  save_tensor((out / "conv_in.bin").string(), video);
  save_tensor((out / "conv_out.bin").string(), conv3d_full(video, stack));

  const FixtureStore store(config_dir);
  const StreamShape s = [] {
    StreamShape x;
    x.chunk_frames_T = 4;
    return x;
  }();
  const BlockCostProfile prof =
      model_block_profile(store.device("h100_sxm"), store.model("wan2.1-1.3b"), s, BatchingMode::stream_batch);
  std::string csv = "block,seconds\n";
  char buf[64];
  for (int i = 0; i < prof.num_blocks(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", i, prof.block_times[i]);
    csv += buf;
  }
  std::snprintf(buf, sizeof buf, "vae_encode,%.17g\n", prof.vae_encode_time);
  csv += buf;
  std::snprintf(buf, sizeof buf, "vae_decode,%.17g\n", prof.vae_decode_time);
  csv += buf;
  write_text_file(out / "profile_1.3b_480p.csv", csv);
  std::cout << "wrote fixtures to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamserve: streaming video-diffusion serving simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_dir = default_fixture_dir().string();
  app.add_option("--config-dir", config_dir, "fixture directory");

  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto* run = app.add_subcommand("run", "run one scenario");
  std::string scenario;
  run->add_option("scenario", scenario, "scenario JSON")->required();
  run->add_option("--out", out, "output directory");
  run->add_option("--seed", seed, "override the scenario seed")->each([&](const std::string&) { seed_set = true; });

  auto* sw = app.add_subcommand("sweep", "run a preset or a grid file");
  std::string preset;
  std::string grid;
  sw->add_option("--preset", preset, "preset name or 'all'");
  sw->add_option("grid", grid, "grid JSON");
  sw->add_option("--out", out, "output directory");
  sw->add_option("--seed", seed, "seed for stochastic presets");

  auto* bal = app.add_subcommand("balance", "balance a measured block profile");
  std::string profile;
  int stages = 4;
  double hysteresis = 0.05;
  bal->add_option("profile", profile, "CSV of block,seconds")->required();
  bal->add_option("--stages", stages, "pipeline stages")->required();
  bal->add_option("--hysteresis", hysteresis, "relative improvement needed to adopt");

  auto* cal = app.add_subcommand("calibrate", "fit stage_time_scale for the FPS targets");
  std::string cal_out;
  cal->add_option("--out", cal_out, "directory for calibration.json (default: config dir)");

  auto* gen = app.add_subcommand("gen-fixtures", "write seeded tensor and profile fixtures");
  gen->add_option("--out", out, "output directory");
  gen->add_option("--seed", seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(scenario, out, seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt, config_dir);
    if (*sw) return cmd_sweep(preset, grid, out, seed, config_dir);
    if (*bal) return cmd_balance(profile, stages, hysteresis);
    if (*cal) return cmd_calibrate(cal_out.empty() ? fs::path(config_dir) : fs::path(cal_out), config_dir);
    if (*gen) return cmd_gen_fixtures(out, seed, config_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::usage);
  }
  return static_cast<int>(ExitCode::usage);
}
