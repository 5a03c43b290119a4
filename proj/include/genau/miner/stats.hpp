#pragma once

// Dataset statistics over a manifest: segments per video, caption length,
// duration and CLAP score histograms, and top caption words.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "genau/miner/filters.hpp"
#include "genau/miner/records.hpp"

namespace genau::miner {

inline const std::set<std::string>& stop_words() {
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",    "at",   "be",   "by",    "for",  "from", "has",  "in",
      "is",   "it",   "its",  "of",   "on",    "or",   "that", "the",   "then", "there", "this", "to",
      "with", "while", "into", "over", "some", "being", "can", "up",   "out",  "off",  "other"};
  return words;
}

inline constexpr double kClapBinWidth = 0.05;

struct StatsReport {
  std::size_t records = 0;
  std::size_t videos = 0;
  std::int64_t total_duration_ms = 0;
  std::map<std::size_t, std::size_t> segments_per_video;  // segments -> videos
  std::map<std::size_t, std::size_t> caption_words;       // words -> records
  std::map<std::int64_t, std::size_t> duration_seconds;   // floor(seconds) -> records
  std::map<std::int64_t, std::size_t> clap_bins;          // floor(score / 0.05) -> records
  std::vector<std::pair<std::string, std::size_t>> top_words;
};

// Word counts over captions, stop words excluded.
inline std::unordered_map<std::string, std::size_t> word_counts(const std::vector<ManifestRecord>& records) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& r : records)
    for (const auto& w : caption_words(r.caption))
      if (!stop_words().count(w)) ++counts[w];
  return counts;
}

inline StatsReport compute_stats(const std::vector<ManifestRecord>& records, std::size_t top_k = 50) {
  StatsReport s;
  s.records = records.size();
  std::map<std::string, std::size_t> per_video;
  for (const auto& r : records) {
    ++per_video[r.video_id];
    s.total_duration_ms += r.duration_ms();
    ++s.caption_words[caption_words(r.caption).size()];
    ++s.duration_seconds[r.duration_ms() / 1000];
    if (r.clap_score) ++s.clap_bins[std::int64_t(std::floor(*r.clap_score / kClapBinWidth))];
  }
  s.videos = per_video.size();
  for (const auto& [_, n] : per_video) ++s.segments_per_video[n];
  const auto counts = word_counts(records);
  s.top_words.assign(counts.begin(), counts.end());
  std::sort(s.top_words.begin(), s.top_words.end(),
            [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  if (s.top_words.size() > top_k) s.top_words.resize(top_k);
  return s;
}

inline ojson to_json(const StatsReport& s, const DropCounters* drops = nullptr) {
  auto hist = [](const auto& m) {
    ojson o = ojson::object();
    for (const auto& [k, v] : m) o[std::to_string(k)] = v;
    return o;
  };
  ojson j;
  j["records"] = s.records;
  j["videos"] = s.videos;
  j["total_duration_s"] = double(s.total_duration_ms) / 1000.0;
  j["segments_per_video"] = hist(s.segments_per_video);
  j["caption_words"] = hist(s.caption_words);
  j["duration_seconds"] = hist(s.duration_seconds);
  ojson clap = ojson::object();
  for (const auto& [k, v] : s.clap_bins) {
    std::ostringstream key;
    key << double(k) * kClapBinWidth;
    clap[key.str()] = v;
  }
  j["clap_score_bins"] = clap;
  j["top_words"] = ojson::array();
  for (const auto& [w, n] : s.top_words) j["top_words"].push_back({w, n});
  if (drops)
    j["drops"] = {{"caption_error", drops->caption_error}, {"merged", drops->merged}, {"keyword", drops->keyword},
                  {"clap", drops->clap}};
  return j;
}

// Long form: kind,key,count.
inline std::string to_csv(const StatsReport& s) {
  std::ostringstream os;
  os << "kind,key,count\n";
  for (const auto& [k, v] : s.segments_per_video) os << "segments_per_video," << k << ',' << v << '\n';
  for (const auto& [k, v] : s.caption_words) os << "caption_words," << k << ',' << v << '\n';
  for (const auto& [k, v] : s.duration_seconds) os << "duration_seconds," << k << ',' << v << '\n';
  for (const auto& [k, v] : s.clap_bins) os << "clap_score_bin," << double(k) * kClapBinWidth << ',' << v << '\n';
  for (const auto& [w, n] : s.top_words) os << "word," << w << ',' << n << '\n';
  return os.str();
}

}  // namespace genau::miner
