#pragma once

// A small mining corpus written to disk: transcripts, durations, a caption
// and score fixture, per-video ambient WAVs and a run config. Segment
// boundaries, captions and the fate of every segment are worked out by hand
// below, not by the library.
//
//   vidA 40 s  cues [0,4] [14,16] [30,31] s
//        gaps [4,14] [16,30] [31,40] -> A1 [4,14], A2 [16,26], A3 [26,30], A4 [31,40]
//   vidB 25 s  cues [0,2] [3,5] [4.5,12] [12.5,13] [14,22] s
//        gaps of exactly 1 s and 0.5 s are rejected -> B1 [22,25]
//   vidC 30 s  (SRT, 22.05 kHz audio)  cue [10,20] s -> C1 [0,10], C2 [20,30]
//   vidD no duration listed  cues [0,1] [5,8] s -> D1 [1,5], duration unknown
//   vidE empty transcript -> discarded
//
//   A1 rain, 0.30 -> kept
//   A2, A3 same caption and adjacent -> merged into [16,30], 0.22 -> kept
//   A4 "a man talking in a room" -> keyword
//   B1 0.09 -> clap (strictly below 0.1)
//   C1 0.10 -> kept (boundary)
//   C2 no caption -> caption_error
//   D1 "Singing birds at dawn" -> keyword (case-insensitive)

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "genau/audio/wav.hpp"
#include "genau/core/random.hpp"
#include "support/transcripts.hpp"

namespace genau::testing {

struct ExpectedRecord {
  std::string video_id;
  std::int64_t start_ms, end_ms;
  std::string caption;
  double score;
};

struct AmbientFixture {
  std::filesystem::path root, transcripts, durations, audio, fixture, filters;
  std::size_t segments = 8;
  std::size_t caption_error = 1, merged = 1, keyword = 2, clap = 1;
  std::vector<ExpectedRecord> kept{{"vidA", 4000, 14000, "steady rain falling on a metal roof", 0.30},
                                   {"vidA", 16000, 30000, "wind blowing through trees", 0.22},
                                   {"vidC", 0, 10000, "ocean waves crashing on a beach", 0.10}};
};

namespace detail {

// Noise shaped by a one-pole low-pass and a slow amplitude envelope.
inline audio::AudioClip ambient(std::uint64_t seed, double seconds, int rate, double smooth, double mod_hz) {
  Rng rng(seed);
  audio::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(std::size_t(seconds * rate));
  double y = 0;
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    y = smooth * y + (1 - smooth) * rng.normal();
    const double env = 0.6 + 0.4 * std::sin(2 * M_PI * mod_hz * double(i) / rate);
    c.samples[i] = float(std::clamp(0.5 * env * y / std::sqrt((1 - smooth) / (1 + smooth)) * 0.3, -1.0, 1.0));
  }
  return c;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace detail

inline AmbientFixture write_ambient_fixture(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  using miner::TranscriptCue;
  AmbientFixture f;
  f.root = root;
  f.transcripts = root / "transcripts";
  f.durations = root / "durations.csv";
  f.audio = root / "audio";
  f.fixture = root / "providers.jsonl";
  f.filters = root / "filters.toml";
  fs::remove_all(root);
  fs::create_directories(f.transcripts);
  fs::create_directories(f.audio);

  detail::write_text(f.transcripts / "vidA.vtt",
                     to_vtt({{0, 4000, "hello"}, {14000, 16000, "and so"}, {30000, 31000, "bye"}}));
  detail::write_text(f.transcripts / "vidB.vtt", to_vtt({{0, 2000, "one"},
                                                         {3000, 5000, "two"},
                                                         {4500, 12000, "three"},
                                                         {12500, 13000, "four"},
                                                         {14000, 22000, "five"}}));
  detail::write_text(f.transcripts / "vidC.srt", to_srt({{10000, 20000, "talk"}}));
  detail::write_text(f.transcripts / "vidD.vtt", to_vtt({{0, 1000, "hi"}, {5000, 8000, "there"}}));
  detail::write_text(f.transcripts / "vidE.vtt", "WEBVTT\n\n");
  detail::write_text(f.durations, "video_id,duration_ms\nvidA,40000\nvidB,25000\nvidC,30000\nvidE,12000\n");

  detail::write_text(f.fixture,
                     "{\"video_id\":\"vidA\",\"start_ms\":4000,\"end_ms\":14000,\"caption\":\"steady rain falling on a metal roof\"}\n"
                     "{\"video_id\":\"vidA\",\"start_ms\":4000,\"end_ms\":14000,\"score\":0.30}\n"
                     "{\"video_id\":\"vidA\",\"start_ms\":16000,\"end_ms\":26000,\"caption\":\"wind blowing through trees\"}\n"
                     "{\"video_id\":\"vidA\",\"start_ms\":26000,\"end_ms\":30000,\"caption\":\"wind blowing through trees\"}\n"
                     "{\"video_id\":\"vidA\",\"start_ms\":16000,\"end_ms\":30000,\"score\":0.22}\n"
                     "{\"video_id\":\"vidA\",\"start_ms\":31000,\"end_ms\":40000,\"caption\":\"a man talking in a room\",\"score\":0.40}\n"
                     "{\"video_id\":\"vidB\",\"start_ms\":22000,\"end_ms\":25000,\"caption\":\"birds chirping in the distance\",\"score\":0.09}\n"
                     "{\"video_id\":\"vidC\",\"start_ms\":0,\"end_ms\":10000,\"caption\":\"ocean waves crashing on a beach\",\"score\":0.10}\n"
                     "{\"video_id\":\"vidD\",\"start_ms\":1000,\"end_ms\":5000,\"caption\":\"Singing birds at dawn\",\"score\":0.50}\n");
  detail::write_text(f.filters, "[miner]\nfixture = \"providers.jsonl\"\n");

  audio::write_wav(f.audio / "vidA.wav", detail::ambient(1, 40, 16000, 0.2, 0.3));
  audio::write_wav(f.audio / "vidB.wav", detail::ambient(2, 25, 16000, 0.9, 0.1));
  audio::write_wav(f.audio / "vidC.wav", detail::ambient(3, 30, 22050, 0.97, 0.08));
  audio::write_wav(f.audio / "vidD.wav", detail::ambient(4, 8, 16000, 0.5, 1.0));
  return f;
}

}  // namespace genau::testing
