#pragma once

// RIFF/WAVE reading (PCM16 or IEEE float32, any channel count, mean-downmixed
// to mono) and PCM16 writing.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "genau/core/error.hpp"

namespace genau::audio {

inline constexpr int kCanonicalRate = 16000;
inline constexpr double kCanonicalSeconds = 10.0;

struct AudioClip {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = kCanonicalRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {
inline std::uint32_t u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }
inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}
[[noreturn]] inline void fail(const std::string& chunk, const std::string& what) {
  throw FormatError("audio-frontend", "WAV chunk '" + chunk + "': " + what);
}
}  // namespace detail

inline AudioClip decode_wav(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0) detail::fail("RIFF", "missing RIFF header");
  if (std::memcmp(p + 8, "WAVE", 4) != 0) detail::fail("RIFF", "form type is not WAVE");
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= n) {
    const std::string id(reinterpret_cast<const char*>(p + pos), 4);
    const std::size_t len = detail::u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > n) detail::fail(id, "chunk length " + std::to_string(len) + " runs past end of file");
    if (id == "fmt ") {
      if (len < 16) detail::fail(id, "too short");
      format = detail::u16(p + body);
      channels = detail::u16(p + body + 2);
      rate = detail::u32(p + body + 4);
      bits = detail::u16(p + body + 14);
      if (format == 0xFFFE) {
        if (len < 40) detail::fail(id, "extensible format block too short");
        format = detail::u16(p + body + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      data = p + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) detail::fail("fmt ", "missing");
  if (!data) detail::fail("data", "missing");
  if (channels == 0) detail::fail("fmt ", "zero channels");
  if (rate == 0) detail::fail("fmt ", "zero sample rate");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    detail::fail("fmt ", "unsupported codec (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");
  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_len / (bytes_per * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = data + (i * channels + c) * bytes_per;
      acc += pcm16 ? static_cast<std::int16_t>(detail::u16(s)) / 32768.0 : static_cast<double>(std::bit_cast<float>(detail::u32(s)));
    }
    clip.samples[i] = static_cast<float>(channels == 1 ? acc : acc / channels);
  }
  return clip;
}

inline std::int16_t to_pcm16(float v) {
  const double s = std::round(static_cast<double>(v) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

// Mono PCM16 encoding. Samples decoded from PCM16 re-encode to the same codes.
inline std::string encode_wav(const AudioClip& clip) {
  std::string out;
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out += "RIFF";
  detail::put32(out, 36 + data_len);
  out += "WAVE";
  out += "fmt ";
  detail::put32(out, 16);
  detail::put16(out, 1);
  detail::put16(out, 1);
  detail::put32(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  detail::put16(out, 2);
  detail::put16(out, 16);
  out += "data";
  detail::put32(out, data_len);
  for (float v : clip.samples) detail::put16(out, static_cast<std::uint16_t>(to_pcm16(v)));
  return out;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("audio-frontend", "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError("audio-frontend", path.string() + ": " + e.what());
  }
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("audio-frontend", "cannot open " + path.string() + " for writing");
  const std::string bytes = encode_wav(clip);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Linear-interpolation resampling; output length round(n * target / source).
inline AudioClip resample_linear(const AudioClip& clip, int target_rate) {
  if (clip.sample_rate == target_rate) return clip;
  const std::size_t n = clip.samples.size();
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / static_cast<double>(clip.sample_rate)));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const double step = static_cast<double>(clip.sample_rate) / target_rate;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = i * step;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= n) {
      out.samples[i] = n ? clip.samples[n - 1] : 0.0f;
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = static_cast<float>((1.0 - frac) * clip.samples[i0] + frac * clip.samples[i0 + 1]);
  }
  return out;
}

// Reads a file and brings it to `rate`.
inline AudioClip load_clip(const std::filesystem::path& path, int rate = kCanonicalRate) {
  return resample_linear(read_wav(path), rate);
}

// Zero-pads or truncates to exactly `n` samples.
inline AudioClip fit_length(AudioClip clip, std::size_t n) {
  clip.samples.resize(n, 0.0f);
  return clip;
}

}  // namespace genau::audio
