#pragma once

// Waveform reconstruction from a log-mel spectrogram: non-negative inversion
// of the mel filterbank followed by Griffin-Lim phase retrieval.

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "genau/audio/mel.hpp"
#include "genau/core/random.hpp"

namespace genau::audio {

inline constexpr int kDefaultGriffinLimIters = 60;

// Non-negative least squares for fb * S = mel, per frame, by multiplicative
// updates. fb is sparse (each bin touches at most two filters), so the
// products are done over the nonzero band of each filter.
inline std::vector<double> mel_to_linear(const MelSpectrogram& mel, const Tensor<double>& fb, int iters = 200) {
  const std::size_t frames = mel.length(), n_mels = fb.dim(0), bins = fb.dim(1);
  std::vector<std::size_t> lo(n_mels), hi(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    lo[m] = bins;
    hi[m] = 0;
    for (std::size_t k = 0; k < bins; ++k)
      if (fb.at(m, k) > 0) lo[m] = std::min(lo[m], k), hi[m] = k + 1;
    if (lo[m] > hi[m]) lo[m] = hi[m] = 0;
  }
  const double floor = mel.config.log_floor;
  std::vector<double> spec(frames * bins, 0.0);
  std::vector<double> target(n_mels), approx(n_mels), numer(bins), denom(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    double* s = spec.data() + t * bins;
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double v = std::exp(static_cast<double>(mel.frames.at(t, m)));
      // Values at the floor carry no energy.
      target[m] = v <= floor * (1.0 + 1e-4) ? 0.0 : v;
    }
    // Start from fb^T target normalized by column sums of fb^T fb.
    std::fill(numer.begin(), numer.end(), 0.0);
    for (std::size_t m = 0; m < n_mels; ++m)
      for (std::size_t k = lo[m]; k < hi[m]; ++k) numer[k] += fb.at(m, k) * target[m];
    for (std::size_t k = 0; k < bins; ++k) s[k] = numer[k];
    for (int it = 0; it < iters; ++it) {
      for (std::size_t m = 0; m < n_mels; ++m) {
        double acc = 0;
        for (std::size_t k = lo[m]; k < hi[m]; ++k) acc += fb.at(m, k) * s[k];
        approx[m] = acc;
      }
      std::fill(denom.begin(), denom.end(), 0.0);
      for (std::size_t m = 0; m < n_mels; ++m)
        for (std::size_t k = lo[m]; k < hi[m]; ++k) denom[k] += fb.at(m, k) * approx[m];
      for (std::size_t k = 0; k < bins; ++k) s[k] = denom[k] > 1e-30 ? s[k] * numer[k] / denom[k] : 0.0;
    }
  }
  return spec;
}

struct GriffinLimResult {
  AudioClip clip;
  // Spectral convergence ||STFT(x_i)| - S| / |S| after each iteration.
  std::vector<double> convergence;
};

// Phase retrieval for a target magnitude [frames, bins]. The output has
// frames * hop samples, i.e. the cropped mel length maps back to the clip
// length it came from.
inline GriffinLimResult griffin_lim_magnitude(const std::vector<double>& target, std::size_t frames, const MelConfig& cfg,
                                              int iters, std::uint64_t seed = 0) {
  if (iters < 1) throw Error("audio-frontend", "griffin_lim needs at least one iteration");
  const std::size_t bins = cfg.bins();
  const std::size_t length = frames * cfg.hop;
  Spectrogram spec{frames, bins, std::vector<std::complex<double>>(frames * bins)};
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.data.size(); ++i)
    spec.data[i] = std::polar(target[i], 2.0 * std::numbers::pi * rng.uniform());
  double target_norm = 0;
  for (double v : target) target_norm += v * v;
  target_norm = std::sqrt(target_norm);
  GriffinLimResult res;
  std::vector<float> samples(length);
  for (int it = 0; it < iters; ++it) {
    const auto x = istft(spec, cfg, length);
    for (std::size_t i = 0; i < length; ++i) samples[i] = static_cast<float>(x[i]);
    const Spectrogram rebuilt = stft(std::span<const float>(samples), cfg);
    double err = 0;
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < bins; ++k) {
        const auto c = rebuilt.at(t, k);
        const double mag = std::abs(c);
        const double d = mag - target[t * bins + k];
        err += d * d;
        spec.at(t, k) = mag > 1e-12 ? c * (target[t * bins + k] / mag) : std::complex<double>(target[t * bins + k], 0.0);
      }
    res.convergence.push_back(target_norm > 0 ? std::sqrt(err) / target_norm : std::sqrt(err));
  }
  const auto x = istft(spec, cfg, length);
  res.clip.sample_rate = cfg.sample_rate;
  res.clip.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i) res.clip.samples[i] = static_cast<float>(std::clamp(x[i], -1.0, 1.0));
  return res;
}

inline GriffinLimResult griffin_lim_detailed(const MelSpectrogram& mel, int iters = kDefaultGriffinLimIters,
                                             std::uint64_t seed = 0) {
  const auto fb = mel_filterbank(mel.config);
  return griffin_lim_magnitude(mel_to_linear(mel, fb), mel.length(), mel.config, iters, seed);
}

inline AudioClip griffin_lim(const MelSpectrogram& mel, int iters = kDefaultGriffinLimIters, std::uint64_t seed = 0) {
  return griffin_lim_detailed(mel, iters, seed).clip;
}

}  // namespace genau::audio
