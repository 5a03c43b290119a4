#pragma once

// Interval algebra for untranscribed gaps.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "genau/core/error.hpp"
#include "genau/miner/transcript.hpp"

namespace genau::miner {

struct Interval {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::int64_t duration() const { return end_ms - start_ms; }
  bool operator==(const Interval&) const = default;
};

struct FilterConfig {
  std::int64_t min_len_ms = 1000;
  std::int64_t max_len_ms = 10000;
  std::vector<std::string> banned_keywords;
  double clap_threshold = 0.1;
  std::int64_t resolution_ms = 10;

  void validate() const {
    if (min_len_ms < 0) throw ConfigError("filters.min_len_ms must be non-negative");
    if (min_len_ms >= max_len_ms) throw ConfigError("filters.min_len_ms must be below filters.max_len_ms");
    if (resolution_ms <= 0) throw ConfigError("filters.resolution_ms must be positive");
  }
};

// Flag bits carried through the pipeline and written to the manifest.
enum Flag : std::uint32_t {
  kDurationUnknown = 1u << 0,
  kMerged = 1u << 2,
  kKeywordPassed = 1u << 3,
  kClapPassed = 1u << 4,
  kUnscored = 1u << 5,
};

inline const std::vector<std::pair<Flag, std::string>>& flag_names() {
  static const std::vector<std::pair<Flag, std::string>> names = {
      {kDurationUnknown, "duration_unknown"}, {kMerged, "merged"},
      {kKeywordPassed, "keyword_passed"},     {kClapPassed, "clap_passed"},   {kUnscored, "unscored"}};
  return names;
}

struct GapSegment {
  std::string video_id;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::uint32_t flags = 0;

  std::int64_t duration_ms() const { return end_ms - start_ms; }
  bool operator==(const GapSegment&) const = default;
};

// Union of the cue intervals as disjoint sorted intervals. Touching intervals
// merge.
inline std::vector<Interval> transcribed_union(const std::vector<TranscriptCue>& cues) {
  std::vector<Interval> iv;
  iv.reserve(cues.size());
  for (const auto& c : cues)
    if (c.end_ms > c.start_ms) iv.push_back({c.start_ms, c.end_ms});
  std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.start_ms < b.start_ms; });
  std::vector<Interval> out;
  for (const auto& x : iv) {
    if (!out.empty() && x.start_ms <= out.back().end_ms)
      out.back().end_ms = std::max(out.back().end_ms, x.end_ms);
    else
      out.push_back(x);
  }
  return out;
}

// Complement of `covered` inside [0, duration_ms], keeping pieces strictly
// longer than min_len_ms. Cover beyond the duration is clipped.
inline std::vector<Interval> complement(const std::vector<Interval>& covered, std::int64_t duration_ms,
                                        std::int64_t min_len_ms) {
  std::vector<Interval> out;
  std::int64_t cursor = 0;
  auto emit = [&](std::int64_t a, std::int64_t b) {
    if (b - a > min_len_ms) out.push_back({a, b});
  };
  for (const auto& c : covered) {
    const std::int64_t a = std::clamp<std::int64_t>(c.start_ms, 0, duration_ms);
    const std::int64_t b = std::clamp<std::int64_t>(c.end_ms, 0, duration_ms);
    if (a > cursor) emit(cursor, a);
    cursor = std::max(cursor, b);
  }
  if (duration_ms > cursor) emit(cursor, duration_ms);
  return out;
}

// duration_ms < 0 means unknown: the last cue end stands in and every
// segment is flagged.
inline std::vector<GapSegment> gap_segments(const std::string& video_id, const std::vector<Interval>& covered,
                                            std::int64_t duration_ms, const FilterConfig& cfg) {
  std::uint32_t flags = 0;
  if (duration_ms < 0) {
    duration_ms = covered.empty() ? 0 : covered.back().end_ms;
    flags |= kDurationUnknown;
  }
  std::vector<GapSegment> out;
  for (const auto& g : complement(covered, duration_ms, cfg.min_len_ms))
    out.push_back({video_id, g.start_ms, g.end_ms, flags});
  return out;
}

// Splits each gap into consecutive max_len windows from its start; a trailing
// remainder survives only if longer than min_len.
inline std::vector<GapSegment> cap_segments(const std::vector<GapSegment>& gaps, const FilterConfig& cfg) {
  std::vector<GapSegment> out;
  for (const auto& g : gaps) {
    for (std::int64_t s = g.start_ms; s < g.end_ms; s += cfg.max_len_ms) {
      const std::int64_t e = std::min(g.end_ms, s + cfg.max_len_ms);
      if (e - s > cfg.min_len_ms) out.push_back({g.video_id, s, e, g.flags});
    }
  }
  return out;
}

}  // namespace genau::miner
