#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "genau/core/tensor.hpp"

namespace genau {

// Seeded generator whose whole state is the engine, so it can be saved into a
// checkpoint and restored bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  // Box-Muller, one sample per call (no cached second value).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(normal() * stddev);
    return t;
  }

  template <class T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(uniform(lo, hi));
    return t;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw FormatError("numeric-core", "invalid rng state");
  }

  // Independent child stream, e.g. one per training component.
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ull); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace genau
