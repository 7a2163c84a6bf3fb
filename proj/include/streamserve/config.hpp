#pragma once

// JSON (de)serialization of specs and the on-disk fixture store.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "streamserve/costmodel.hpp"
#include "streamserve/error.hpp"

namespace streamserve {

using json = nlohmann::json;

inline constexpr int kFixtureVersion = 1;

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T get_required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::schema_violation, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline DeviceSpec device_from_json(const json& j, std::string name = "device") {
  DeviceSpec d;
  d.name = detail::get_or<std::string>(j, "name", std::move(name));
  d.peak_flops = detail::get_required<double>(j, "peak_flops");
  d.hbm_bandwidth = detail::get_required<double>(j, "hbm_bandwidth");
  d.bandwidth_utilization_eta = detail::get_or(j, "bandwidth_utilization_eta", 1.0);
  d.link_bandwidth = detail::get_required<double>(j, "link_bandwidth");
  d.link_latency = detail::get_or(j, "link_latency", 0.0);
  d.sustained_flops = detail::get_or(j, "sustained_flops", 0.0);
  validate(d);
  return d;
}

inline json to_json(const DeviceSpec& d) {
  return json{{"name", d.name},
              {"peak_flops", d.peak_flops},
              {"hbm_bandwidth", d.hbm_bandwidth},
              {"bandwidth_utilization_eta", d.bandwidth_utilization_eta},
              {"link_bandwidth", d.link_bandwidth},
              {"link_latency", d.link_latency},
              {"sustained_flops", d.sustained_flops}};
}

inline VaeCostModel vae_from_json(const json& j) {
  VaeCostModel v;
  if (j.is_number()) {
    v.seconds_per_megapixel_frame = j.get<double>();
    return v;
  }
  v.fixed_seconds = detail::get_or(j, "fixed_seconds", 0.0);
  v.seconds_per_megapixel_frame = detail::get_or(j, "seconds_per_megapixel_frame", 0.0);
  return v;
}

inline ModelSpec model_from_json(const json& j, std::string name = "model") {
  ModelSpec m;
  m.name = detail::get_or<std::string>(j, "name", std::move(name));
  m.param_count = detail::get_required<double>(j, "param_count");
  m.bytes_per_param = detail::get_or(j, "bytes_per_param", 2.0);
  m.num_blocks = detail::get_required<int>(j, "num_blocks");
  m.hidden_dim = detail::get_or(j, "hidden_dim", 0);
  m.per_block_flops_per_token = detail::get_or(j, "per_block_flops_per_token", 0.0);
  m.per_block_bytes_per_token = detail::get_or(j, "per_block_bytes_per_token", 0.0);
  m.pixel_to_token_ratio = detail::get_or(j, "pixel_to_token_ratio", 1.0);
  if (auto it = j.find("vae_encode_cost"); it != j.end()) m.vae_encode_cost = vae_from_json(*it);
  if (auto it = j.find("vae_decode_cost"); it != j.end()) m.vae_decode_cost = vae_from_json(*it);
  validate(m);
  return m;
}

inline json to_json(const ModelSpec& m) {
  auto vae = [](const VaeCostModel& v) {
    return json{{"fixed_seconds", v.fixed_seconds},
                {"seconds_per_megapixel_frame", v.seconds_per_megapixel_frame}};
  };
  return json{{"name", m.name},
              {"param_count", m.param_count},
              {"bytes_per_param", m.bytes_per_param},
              {"num_blocks", m.num_blocks},
              {"hidden_dim", m.hidden_dim},
              {"per_block_flops_per_token", m.per_block_flops_per_token},
              {"per_block_bytes_per_token", m.per_block_bytes_per_token},
              {"pixel_to_token_ratio", m.pixel_to_token_ratio},
              {"vae_encode_cost", vae(m.vae_encode_cost)},
              {"vae_decode_cost", vae(m.vae_decode_cost)}};
}

inline StreamShape shape_from_json(const json& j) {
  StreamShape s;
  s.batch_B = detail::get_or(j, "batch", 1);
  s.chunk_frames_T = detail::get_or(j, "chunk_frames", 4);
  s.height_H = detail::get_or(j, "height", 480);
  s.width_W = detail::get_or(j, "width", 832);
  s.denoise_steps_n = detail::get_or(j, "steps", 1);
  s.latent_channels_C = detail::get_or(j, "latent_channels", 16);
  try {
    validate(s);
  } catch (const Error& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
  return s;
}

inline json to_json(const StreamShape& s) {
  return json{{"batch", s.batch_B},       {"chunk_frames", s.chunk_frames_T},
              {"height", s.height_H},     {"width", s.width_W},
              {"steps", s.denoise_steps_n}, {"latent_channels", s.latent_channels_C}};
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
}

// Resolves the fixture directory: explicit argument, then $STREAMSERVE_CONFIG_DIR,
// then the compiled-in default.
inline std::filesystem::path default_fixture_dir() {
  if (const char* env = std::getenv("STREAMSERVE_CONFIG_DIR"); env && *env) return env;
#ifdef STREAMSERVE_DATA_DIR
  return std::filesystem::path(STREAMSERVE_DATA_DIR) / "fixtures";
#else
  return "data/fixtures";
#endif
}

class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir = default_fixture_dir()) : dir_(std::move(dir)) {
    devices_ = load("devices.json").at("devices");
    models_ = load("models.json").at("models");
  }

  const std::filesystem::path& dir() const { return dir_; }

  DeviceSpec device(const std::string& name) const {
    auto it = devices_.find(name);
    if (it == devices_.end()) throw Error(ErrorCode::schema_violation, "unknown device fixture: " + name);
    return device_from_json(*it, name);
  }

  ModelSpec model(const std::string& name) const {
    auto it = models_.find(name);
    if (it == models_.end()) throw Error(ErrorCode::schema_violation, "unknown model fixture: " + name);
    return model_from_json(*it, name);
  }

  // Optional files (calibration.json) are loaded on demand.
  json optional(const std::string& file) const {
    if (!std::filesystem::exists(dir_ / file)) return json::object();
    return load(file);
  }

 private:
  json load(const std::string& file) const {
    json j = read_json_file(dir_ / file);
    const int version = detail::get_or(j, "fixture_version", 0);
    require(version == kFixtureVersion, ErrorCode::schema_violation,
            file + ": unsupported fixture_version " + std::to_string(version));
    return j;
  }

  std::filesystem::path dir_;
  json devices_;
  json models_;
};

}  // namespace streamserve
