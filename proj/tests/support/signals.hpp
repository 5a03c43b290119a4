#pragma once

// Deterministic synthetic audio used as a stand-in corpus in tests.

#include <cmath>
#include <cstddef>
#include <numbers>

#include "genau/audio/wav.hpp"
#include "genau/core/random.hpp"

namespace genau::testing {

inline audio::AudioClip sine(double hz, double seconds, double amp = 0.5, int rate = 16000) {
  audio::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / rate));
  return c;
}

inline audio::AudioClip white_noise(double seconds, std::uint64_t seed, double amp = 0.3, int rate = 16000) {
  audio::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(seconds * rate));
  Rng rng(seed);
  for (auto& s : c.samples) s = static_cast<float>(amp * rng.uniform(-1.0, 1.0));
  return c;
}

// Ambient-like texture: a few decaying tones with vibrato, a chirp and
// smoothed noise, all parameterized by the seed.
inline audio::AudioClip ambient(double seconds, std::uint64_t seed, int rate = 16000) {
  Rng rng(seed);
  audio::AudioClip c;
  c.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(seconds * rate);
  c.samples.assign(n, 0.0f);
  const int tones = 2 + static_cast<int>(rng.index(3));
  for (int k = 0; k < tones; ++k) {
    const double f = rng.uniform(150.0, 3000.0);
    const double amp = rng.uniform(0.05, 0.2);
    const double rate_hz = rng.uniform(0.3, 2.0);
    const double phase = rng.uniform(0.0, 6.28);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / rate;
      const double env = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * rate_hz * t + phase);
      c.samples[i] += static_cast<float>(amp * env * std::sin(2 * std::numbers::pi * f * t + 3 * std::sin(5 * t)));
    }
  }
  const double f0 = rng.uniform(200.0, 800.0), f1 = rng.uniform(1000.0, 5000.0);
  double ph = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / n;
    ph += 2 * std::numbers::pi * (f0 + (f1 - f0) * t) / rate;
    c.samples[i] += static_cast<float>(0.08 * std::sin(ph));
  }
  double lp = 0;
  const double alpha = rng.uniform(0.05, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    lp += alpha * (rng.uniform(-1.0, 1.0) - lp);
    c.samples[i] += static_cast<float>(0.1 * lp);
  }
  return c;
}

}  // namespace genau::testing
