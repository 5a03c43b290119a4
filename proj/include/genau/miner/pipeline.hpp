#pragma once

// Directory-level mining: transcripts + durations -> manifest, stats, drops.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "genau/miner/filters.hpp"
#include "genau/miner/segments.hpp"
#include "genau/miner/stats.hpp"
#include "genau/miner/transcript.hpp"

namespace genau::miner {

namespace fs = std::filesystem;

// video_id,duration_ms with an optional header row.
inline std::map<std::string, std::int64_t> read_durations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("transcript-miner", "cannot read durations " + path.string());
  std::map<std::string, std::int64_t> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError("transcript-miner", path.string() + ":" + std::to_string(n) + ": expected video_id,duration_ms");
    const std::string id(detail::trim(std::string_view(line).substr(0, comma)));
    const std::string val(detail::trim(std::string_view(line).substr(comma + 1)));
    if (n == 1 && id == "video_id") continue;
    std::size_t used = 0;
    std::int64_t ms = -1;
    try {
      ms = std::stoll(val, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != val.size() || val.empty() || ms < 0)
      throw FormatError("transcript-miner", path.string() + ":" + std::to_string(n) + ": bad duration '" + val + "'");
    out[id] = ms;
  }
  return out;
}

struct FileWarning {
  std::string file;
  ParseWarning warning;
};

struct MineResult {
  std::vector<ManifestRecord> records;
  DropCounters drops;
  std::vector<DropEntry> drop_log;
  std::vector<FileWarning> warnings;
  std::size_t transcript_files = 0;
  std::size_t videos_without_cues = 0;       // empty transcripts, discarded
  std::size_t videos_without_transcript = 0;  // listed in durations only, discarded
  std::size_t segments = 0;                   // after capping, before captioning
};

// Parse + union + gaps + cap for one transcript.
inline std::vector<GapSegment> segments_for(const std::string& video_id, const std::vector<TranscriptCue>& cues,
                                            std::int64_t duration_ms, const FilterConfig& cfg) {
  return cap_segments(gap_segments(video_id, transcribed_union(cues), duration_ms, cfg), cfg);
}

struct MineOptions {
  FilterConfig filters;
  bool allow_unscored = false;
};

// Runs the stage chain on already-extracted segments.
inline void run_stages(std::vector<GapSegment> segments, Captioner& captioner, Scorer* scorer, const MineOptions& opt,
                       MineResult& out) {
  std::stable_sort(segments.begin(), segments.end(), [](const GapSegment& a, const GapSegment& b) {
    return std::tie(a.video_id, a.start_ms) < std::tie(b.video_id, b.start_ms);
  });
  out.segments += segments.size();
  auto recs = caption_segments(segments, captioner, out.drops, &out.drop_log);
  recs = merge_identical_captions(recs, out.drops, &out.drop_log);
  recs = keyword_filter(recs, opt.filters, out.drops, &out.drop_log);
  recs = clap_filter(recs, scorer, opt.filters, opt.allow_unscored, out.drops, &out.drop_log);
  out.records = std::move(recs);
}

inline MineResult mine_directory(const fs::path& transcripts, const fs::path& durations_csv, Captioner& captioner,
                                 Scorer* scorer, const MineOptions& opt) {
  opt.filters.validate();
  if (!fs::is_directory(transcripts)) throw Error("transcript-miner", "not a directory: " + transcripts.string());
  const auto durations = read_durations(durations_csv);
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::directory_iterator(transcripts)) {
    const auto ext = e.path().extension().string();
    if (!e.is_regular_file() || (ext != ".vtt" && ext != ".srt")) continue;
    const auto id = e.path().stem().string();
    if (files.count(id)) throw FormatError("transcript-miner", "two transcripts for video '" + id + "'");
    files[id] = e.path();
  }
  MineResult out;
  std::vector<GapSegment> segments;
  for (const auto& [id, path] : files) {
    ++out.transcript_files;
    auto parsed = parse_transcript_file(path);
    for (auto& w : parsed.warnings) out.warnings.push_back({path.filename().string(), std::move(w)});
    if (parsed.cues.empty()) {
      ++out.videos_without_cues;
      continue;
    }
    auto it = durations.find(id);
    auto segs = segments_for(id, parsed.cues, it == durations.end() ? -1 : it->second, opt.filters);
    segments.insert(segments.end(), segs.begin(), segs.end());
  }
  for (const auto& [id, _] : durations)
    if (!files.count(id)) ++out.videos_without_transcript;
  run_stages(std::move(segments), captioner, scorer, opt, out);
  return out;
}

inline void write_drops_csv(const std::vector<DropEntry>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("transcript-miner", "cannot write " + path.string());
  out << "video_id,start_ms,end_ms,stage,detail\n";
  for (const auto& d : log) {
    std::string detail = d.detail;
    for (auto& c : detail)
      if (c == ',' || c == '\n' || c == '"') c = ' ';
    out << d.video_id << ',' << d.start_ms << ',' << d.end_ms << ',' << d.stage << ',' << detail << '\n';
  }
}

// manifest.jsonl, stats.json, stats.csv and drops.csv under `dir`.
inline void write_outputs(const MineResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_manifest(r.records, dir / "manifest.jsonl");
  auto j = to_json(compute_stats(r.records), &r.drops);
  j["segments"] = r.segments;
  j["transcript_files"] = r.transcript_files;
  j["videos_without_cues"] = r.videos_without_cues;
  j["videos_without_transcript"] = r.videos_without_transcript;
  j["parse_warnings"] = r.warnings.size();
  std::ofstream(dir / "stats.json") << j.dump(2) << '\n';
  std::ofstream(dir / "stats.csv") << to_csv(compute_stats(r.records));
  write_drops_csv(r.drop_log, dir / "drops.csv");
}

}  // namespace genau::miner
