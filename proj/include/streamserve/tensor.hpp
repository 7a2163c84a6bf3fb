#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "streamserve/error.hpp"

namespace streamserve {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(numel(shape), fill);
  }

  static std::size_t numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      require(d >= 0, ErrorCode::invalid_argument, "tensor dims must be >= 0");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2-D access.
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * shape[1]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * shape[1]; }
};

inline void validate(const Tensor& t) {
  require(t.data.size() == Tensor::numel(t.shape), ErrorCode::shape_mismatch,
          "tensor data length differs from shape product");
  for (double v : t.data) require(std::isfinite(v), ErrorCode::invalid_argument, "tensor has non-finite values");
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, ErrorCode::shape_mismatch, "max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max |a-b| / max(|b|, floor)
inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  require(a.shape == b.shape, ErrorCode::shape_mismatch, "max_rel_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  return m;
}

// ---------------------------------------------------------------------------
// Seeded generator. The engine is bit-exact by the standard; the mapping to
// doubles is done here so values do not depend on the library's distributions.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// ---------------------------------------------------------------------------
// Binary form: u32 rank, u32 dims[rank], float32 data; all little-endian.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.gcount() == 4, ErrorCode::io, "tensor stream truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const Tensor& t) {
  validate(t);
  detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::put_u32(out, u);
  }
}

inline Tensor read_tensor(std::istream& in) {
  const std::uint32_t rank = detail::get_u32(in);
  require(rank <= 8, ErrorCode::schema_violation, "tensor rank too large");
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(detail::get_u32(in));
  Tensor t(shape);
  for (auto& v : t.data) {
    const std::uint32_t u = detail::get_u32(in);
    float f;
    std::memcpy(&f, &u, 4);
    v = f;
  }
  return t;
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  write_tensor(out, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return read_tensor(in);
}

}  // namespace streamserve
