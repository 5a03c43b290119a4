#pragma once

// Manifest records and their JSON-lines form.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "genau/core/error.hpp"
#include "genau/miner/segments.hpp"

namespace genau::miner {

using ojson = nlohmann::ordered_json;

enum class CaptionSource { kStub, kExternal };

inline std::string to_string(CaptionSource s) { return s == CaptionSource::kStub ? "stub" : "external"; }

struct ManifestRecord {
  std::string video_id;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::string caption;
  CaptionSource caption_source = CaptionSource::kStub;
  std::optional<double> clap_score;
  std::uint32_t flags = 0;

  std::int64_t duration_ms() const { return end_ms - start_ms; }
  bool operator==(const ManifestRecord&) const = default;
};

inline std::vector<std::string> flag_list(std::uint32_t flags) {
  std::vector<std::string> out;
  for (const auto& [bit, name] : flag_names())
    if (flags & bit) out.push_back(name);
  return out;
}

inline std::uint32_t parse_flags(const std::vector<std::string>& names) {
  std::uint32_t f = 0;
  for (const auto& n : names) {
    bool known = false;
    for (const auto& [bit, name] : flag_names())
      if (name == n) f |= bit, known = true;
    if (!known) throw FormatError("transcript-miner", "unknown flag '" + n + "'");
  }
  return f;
}

inline ojson to_json(const ManifestRecord& r) {
  ojson j;
  j["video_id"] = r.video_id;
  j["start_ms"] = r.start_ms;
  j["end_ms"] = r.end_ms;
  j["caption"] = r.caption;
  j["caption_source"] = to_string(r.caption_source);
  j["clap_score"] = r.clap_score ? ojson(*r.clap_score) : ojson(nullptr);
  j["flags"] = flag_list(r.flags);
  return j;
}

inline ManifestRecord record_from_json(const ojson& j) {
  ManifestRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.start_ms = j.at("start_ms").get<std::int64_t>();
  r.end_ms = j.at("end_ms").get<std::int64_t>();
  r.caption = j.at("caption").get<std::string>();
  const auto src = j.at("caption_source").get<std::string>();
  if (src == "stub")
    r.caption_source = CaptionSource::kStub;
  else if (src == "external")
    r.caption_source = CaptionSource::kExternal;
  else
    throw FormatError("transcript-miner", "unknown caption_source '" + src + "'");
  if (j.contains("clap_score") && !j.at("clap_score").is_null()) r.clap_score = j.at("clap_score").get<double>();
  r.flags = parse_flags(j.value("flags", std::vector<std::string>{}));
  if (r.end_ms <= r.start_ms) throw FormatError("transcript-miner", "record end_ms must exceed start_ms");
  return r;
}

inline void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("transcript-miner", "cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw Error("transcript-miner", "write failed for " + path.string());
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("transcript-miner", "cannot read " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(ojson::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError("transcript-miner", path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace genau::miner
