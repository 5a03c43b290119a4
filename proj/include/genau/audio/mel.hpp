#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "genau/audio/fft.hpp"
#include "genau/audio/wav.hpp"
#include "genau/core/error.hpp"
#include "genau/core/tensor.hpp"

namespace genau::audio {

// 1024-point Hann STFT with a 160-sample hop at 16 kHz gives 100 frames/s.
struct MelConfig {
  int sample_rate = kCanonicalRate;
  std::size_t n_fft = 1024;
  std::size_t hop = 160;
  std::size_t n_mels = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;
  // Mel frame counts are cropped down to a multiple of this (1001 -> 1000).
  std::size_t frame_multiple = 8;

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("mel.sample_rate must be positive");
    if (hop == 0 || hop > n_fft) throw ConfigError("mel.hop must be in [1, n_fft]");
    if (n_fft < 2 || (n_fft & (n_fft - 1))) throw ConfigError("mel.n_fft must be a power of two");
    if (n_mels == 0) throw ConfigError("mel.n_mels must be positive");
    if (!(fmin >= 0 && fmin < fmax)) throw ConfigError("mel.fmin must be in [0, fmax)");
    if (fmax > sample_rate / 2.0) throw ConfigError("mel.fmax must not exceed sample_rate/2");
    if (!(log_floor > 0)) throw ConfigError("mel.log_floor must be positive");
    if (frame_multiple == 0) throw ConfigError("mel.frame_multiple must be positive");
  }

  std::size_t bins() const { return n_fft / 2 + 1; }
};

// Frames of a center-padded STFT: the signal gets n_fft/2 zeros on each side.
inline std::size_t stft_frame_count(std::size_t len, std::size_t n_fft, std::size_t hop) {
  const std::size_t padded = len + 2 * (n_fft / 2);
  return 1 + (padded - n_fft) / hop;
}

inline std::size_t mel_frame_count(std::size_t len, const MelConfig& cfg) {
  const std::size_t raw = stft_frame_count(len, cfg.n_fft, cfg.hop);
  return raw / cfg.frame_multiple * cfg.frame_multiple;
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;  // [frames, bins]

  std::complex<double>& at(std::size_t t, std::size_t k) { return data[t * bins + k]; }
  const std::complex<double>& at(std::size_t t, std::size_t k) const { return data[t * bins + k]; }
};

inline Spectrogram stft(std::span<const float> samples, const MelConfig& cfg) {
  if (samples.empty()) throw Error("audio-frontend", "stft of an empty clip");
  const std::size_t n = cfg.n_fft, half = n / 2;
  Spectrogram s;
  s.frames = stft_frame_count(samples.size(), n, cfg.hop);
  s.bins = cfg.bins();
  s.data.resize(s.frames * s.bins);
  const auto win = hann_window(n);
  RealFft fft(n);
  std::vector<double> frame(n);
  const long len = static_cast<long>(samples.size());
  for (std::size_t t = 0; t < s.frames; ++t) {
    const long start = static_cast<long>(t * cfg.hop) - static_cast<long>(half);
    for (std::size_t i = 0; i < n; ++i) {
      const long pos = start + static_cast<long>(i);
      frame[i] = (pos >= 0 && pos < len) ? samples[static_cast<std::size_t>(pos)] * win[i] : 0.0;
    }
    fft.forward(frame, std::span(s.data).subspan(t * s.bins, s.bins));
  }
  return s;
}

inline Spectrogram stft(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.samples.size() < cfg.n_fft)
    throw Error("audio-frontend", "clip of " + std::to_string(clip.samples.size()) + " samples is shorter than one " +
                                      std::to_string(cfg.n_fft) + "-sample frame");
  return stft(std::span<const float>(clip.samples), cfg);
}

// Least-squares inverse STFT (windowed overlap-add divided by the summed
// squared window). Output has `length` samples.
inline std::vector<double> istft(const Spectrogram& s, const MelConfig& cfg, std::size_t length) {
  const std::size_t n = cfg.n_fft, half = n / 2;
  const auto win = hann_window(n);
  std::vector<double> out(length, 0.0), norm(length, 0.0), frame(n);
  RealFft fft(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    fft.inverse(std::span(s.data).subspan(t * s.bins, s.bins), frame);
    const long start = static_cast<long>(t * cfg.hop) - static_cast<long>(half);
    for (std::size_t i = 0; i < n; ++i) {
      const long pos = start + static_cast<long>(i);
      if (pos < 0 || pos >= static_cast<long>(length)) continue;
      out[pos] += frame[i] * win[i];
      norm[pos] += win[i] * win[i];
    }
  }
  for (std::size_t i = 0; i < length; ++i)
    if (norm[i] > 1e-10) out[i] /= norm[i];
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular HTK-scale filters with unit peak, shape [n_mels, n_fft/2+1].
inline Tensor<double> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.bins();
  std::vector<double> edges(cfg.n_mels + 2);
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  Tensor<double> fb(Shape{cfg.n_mels, bins});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0;
      if (f > left && f <= center)
        w = (f - left) / (center - left);
      else if (f > center && f < right)
        w = (right - f) / (right - center);
      fb.at(m, k) = w;
    }
  }
  return fb;
}

// Natural-log mel magnitudes, shape [T, n_mels].
struct MelSpectrogram {
  Tensor<float> frames;
  MelConfig config;

  std::size_t length() const { return frames.dim(0); }
  std::size_t n_mels() const { return frames.dim(1); }
};

// Applies the filterbank to magnitudes [T, bins] -> log mel [T, n_mels].
inline Tensor<float> magnitudes_to_log_mel(const std::vector<double>& mag, std::size_t frames, const Tensor<double>& fb,
                                           double floor) {
  const std::size_t n_mels = fb.dim(0), bins = fb.dim(1);
  Tensor<float> out(Shape{frames, n_mels});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t m = 0; m < n_mels; ++m) {
      double acc = 0;
      const double* row = fb.ptr() + m * bins;
      const double* spec = mag.data() + t * bins;
      for (std::size_t k = 0; k < bins; ++k) acc += row[k] * spec[k];
      out.at(t, m) = static_cast<float>(std::log(std::max(acc, floor)));
    }
  return out;
}

inline MelSpectrogram waveform_to_mel(const AudioClip& clip, const MelConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate)
    throw Error("audio-frontend", "sample rate " + std::to_string(clip.sample_rate) + " Hz does not match " +
                                      std::to_string(cfg.sample_rate) + " Hz; resample required");
  const Spectrogram s = stft(clip, cfg);
  const std::size_t frames = mel_frame_count(clip.samples.size(), cfg);
  if (frames == 0) throw Error("audio-frontend", "clip too short for a single mel frame block");
  std::vector<double> mag(frames * s.bins);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(s.data[i]);
  return {magnitudes_to_log_mel(mag, frames, mel_filterbank(cfg), cfg.log_floor), cfg};
}

}  // namespace genau::audio
