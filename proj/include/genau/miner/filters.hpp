#pragma once

// Captioning, merging, keyword and CLAP stages, plus their pluggable
// providers.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "genau/core/process.hpp"
#include "genau/miner/records.hpp"

namespace genau::miner {

struct DropEntry {
  std::string video_id;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::string stage;
  std::string detail;
};

// Per-stage drop counters. Merging absorbs records, so it counts as a drop
// stage for the input = output + drops balance.
struct DropCounters {
  std::size_t caption_error = 0;
  std::size_t merged = 0;
  std::size_t keyword = 0;
  std::size_t clap = 0;

  std::size_t total() const { return caption_error + merged + keyword + clap; }
  DropCounters& operator+=(const DropCounters& o) {
    caption_error += o.caption_error;
    merged += o.merged;
    keyword += o.keyword;
    clap += o.clap;
    return *this;
  }
};

// ---- fixture table -------------------------------------------------------------

// JSONL rows {video_id, start_ms, end_ms, caption?, score?} keyed by span.
class FixtureTable {
 public:
  using Key = std::tuple<std::string, std::int64_t, std::int64_t>;

  FixtureTable() = default;
  explicit FixtureTable(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("transcript-miner", "cannot read fixture " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        const auto j = ojson::parse(line);
        // Rows for the same span merge; later fields win.
        Row& r = rows_[{j.at("video_id").get<std::string>(), j.at("start_ms").get<std::int64_t>(),
                        j.at("end_ms").get<std::int64_t>()}];
        if (j.contains("caption")) r.caption = j["caption"].get<std::string>();
        if (j.contains("score")) r.score = j["score"].get<double>();
      } catch (const std::exception& e) {
        throw FormatError("transcript-miner", path.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void set_caption(const Key& k, std::string c) { rows_[k].caption = std::move(c); }
  void set_score(const Key& k, double s) { rows_[k].score = s; }

  std::optional<std::string> caption(const Key& k) const {
    auto it = rows_.find(k);
    return it == rows_.end() ? std::nullopt : it->second.caption;
  }
  std::optional<double> score(const Key& k) const {
    auto it = rows_.find(k);
    return it == rows_.end() ? std::nullopt : it->second.score;
  }

 private:
  struct Row {
    std::optional<std::string> caption;
    std::optional<double> score;
  };
  std::map<Key, Row> rows_;
};

// ---- providers ------------------------------------------------------------------

struct CaptionResult {
  std::optional<std::string> caption;
  std::string error;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  // One result per segment, in order.
  virtual std::vector<CaptionResult> caption(const std::vector<GapSegment>& segments) = 0;
  virtual CaptionSource source() const = 0;
};

class FixtureCaptioner final : public Captioner {
 public:
  explicit FixtureCaptioner(FixtureTable table) : table_(std::move(table)) {}
  std::vector<CaptionResult> caption(const std::vector<GapSegment>& segments) override {
    std::vector<CaptionResult> out;
    for (const auto& s : segments) {
      auto c = table_.caption({s.video_id, s.start_ms, s.end_ms});
      out.push_back(c ? CaptionResult{c, ""} : CaptionResult{std::nullopt, "no fixture caption"});
    }
    return out;
  }
  CaptionSource source() const override { return CaptionSource::kStub; }

 private:
  FixtureTable table_;
};

inline ojson span_request(const std::string& video_id, std::int64_t start_ms, std::int64_t end_ms) {
  ojson j;
  j["video_id"] = video_id;
  j["start_ms"] = start_ms;
  j["end_ms"] = end_ms;
  return j;
}

// Request {video_id, start_ms, end_ms}; reply {"caption": ...} or
// {"error": ...}. Failures and timeouts become per-segment errors.
class StdioCaptioner final : public Captioner {
 public:
  StdioCaptioner(const std::vector<std::string>& argv, int timeout_ms) : proc_(argv, "transcript-miner", timeout_ms) {}

  std::vector<CaptionResult> caption(const std::vector<GapSegment>& segments) override {
    std::vector<CaptionResult> out;
    for (const auto& s : segments) {
      try {
        const auto reply = ojson::parse(proc_.request(span_request(s.video_id, s.start_ms, s.end_ms).dump()));
        if (reply.contains("caption") && reply["caption"].is_string())
          out.push_back({reply["caption"].get<std::string>(), ""});
        else
          out.push_back({std::nullopt, reply.value("error", std::string("reply without caption"))});
      } catch (const std::exception& e) {
        out.push_back({std::nullopt, e.what()});
      }
    }
    return out;
  }
  CaptionSource source() const override { return CaptionSource::kExternal; }

 private:
  StdioProcess proc_;
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  // nullopt where no score is available.
  virtual std::vector<std::optional<double>> score(const std::vector<ManifestRecord>& records) = 0;
};

class FixtureScorer final : public Scorer {
 public:
  explicit FixtureScorer(FixtureTable table) : table_(std::move(table)) {}
  std::vector<std::optional<double>> score(const std::vector<ManifestRecord>& records) override {
    std::vector<std::optional<double>> out;
    for (const auto& r : records) out.push_back(table_.score({r.video_id, r.start_ms, r.end_ms}));
    return out;
  }

 private:
  FixtureTable table_;
};

// Request {video_id, start_ms, end_ms, caption}; reply {"score": x}.
class StdioScorer final : public Scorer {
 public:
  StdioScorer(const std::vector<std::string>& argv, int timeout_ms) : proc_(argv, "transcript-miner", timeout_ms) {}

  std::vector<std::optional<double>> score(const std::vector<ManifestRecord>& records) override {
    std::vector<std::optional<double>> out;
    for (const auto& r : records) {
      auto req = span_request(r.video_id, r.start_ms, r.end_ms);
      req["caption"] = r.caption;
      try {
        const auto reply = ojson::parse(proc_.request(req.dump()));
        if (reply.contains("score") && reply["score"].is_number())
          out.push_back(reply["score"].get<double>());
        else
          out.push_back(std::nullopt);
      } catch (const std::exception&) {
        out.push_back(std::nullopt);
      }
    }
    return out;
  }

 private:
  StdioProcess proc_;
};

// ---- stages ---------------------------------------------------------------------

// Captions segments; failed ones are dropped and logged.
inline std::vector<ManifestRecord> caption_segments(const std::vector<GapSegment>& segments, Captioner& captioner,
                                                    DropCounters& drops, std::vector<DropEntry>* log = nullptr) {
  const auto results = captioner.caption(segments);
  if (results.size() != segments.size())
    throw ContractError("transcript-miner", "captioner returned " + std::to_string(results.size()) + " results for " +
                                                std::to_string(segments.size()) + " segments");
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (!results[i].caption) {
      ++drops.caption_error;
      if (log) log->push_back({s.video_id, s.start_ms, s.end_ms, "caption_error", results[i].error});
      continue;
    }
    out.push_back({s.video_id, s.start_ms, s.end_ms, *results[i].caption, captioner.source(), std::nullopt, s.flags});
  }
  return out;
}

inline void sort_records(std::vector<ManifestRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const ManifestRecord& a, const ManifestRecord& b) {
    return std::tie(a.video_id, a.start_ms) < std::tie(b.video_id, b.start_ms);
  });
}

// Joins runs of touching records (end == next start) with byte-identical
// captions in the same video. Input must be sorted by (video_id, start).
inline std::vector<ManifestRecord> merge_identical_captions(const std::vector<ManifestRecord>& records,
                                                            DropCounters& drops, std::vector<DropEntry>* log = nullptr) {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (!out.empty()) {
      auto& last = out.back();
      if (std::tie(r.video_id, r.start_ms) < std::tie(last.video_id, last.start_ms))
        throw ContractError("transcript-miner", "merge needs records sorted by (video_id, start_ms)");
      if (last.video_id == r.video_id && last.end_ms == r.start_ms && last.caption == r.caption) {
        if (log) log->push_back({r.video_id, r.start_ms, r.end_ms, "merged", "into " + std::to_string(last.start_ms)});
        last.end_ms = r.end_ms;
        last.flags |= r.flags | kMerged;
        last.clap_score.reset();
        ++drops.merged;
        continue;
      }
    }
    out.push_back(r);
  }
  return out;
}

// Lowercase alphanumeric words; apostrophes stay inside words.
inline std::vector<std::string> caption_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || (c == '\'' && !cur.empty()) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  for (auto& w : out)
    while (!w.empty() && w.back() == '\'') w.pop_back();
  return out;
}

// Banned entries may be phrases; they match whole-word runs.
class KeywordMatcher {
 public:
  explicit KeywordMatcher(const std::vector<std::string>& keywords) {
    for (const auto& k : keywords) {
      auto words = caption_words(k);
      if (!words.empty()) phrases_.push_back(std::move(words));
    }
  }

  // First banned phrase found in the caption, or nullopt.
  std::optional<std::string> match(std::string_view caption) const {
    const auto words = caption_words(caption);
    for (const auto& p : phrases_)
      for (std::size_t i = 0; i + p.size() <= words.size(); ++i)
        if (std::equal(p.begin(), p.end(), words.begin() + std::ptrdiff_t(i))) {
          std::string s;
          for (const auto& w : p) s += (s.empty() ? "" : " ") + w;
          return s;
        }
    return std::nullopt;
  }

 private:
  std::vector<std::vector<std::string>> phrases_;
};

// One keyword per line; '#' starts a comment.
inline std::vector<std::string> load_keywords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("transcript-miner", "cannot read keyword list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto t = detail::trim(line);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline std::vector<ManifestRecord> keyword_filter(const std::vector<ManifestRecord>& records, const FilterConfig& cfg,
                                                  DropCounters& drops, std::vector<DropEntry>* log = nullptr) {
  const KeywordMatcher m(cfg.banned_keywords);
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (auto hit = m.match(r.caption)) {
      ++drops.keyword;
      if (log) log->push_back({r.video_id, r.start_ms, r.end_ms, "keyword", *hit});
      continue;
    }
    out.push_back(r);
    out.back().flags |= kKeywordPassed;
  }
  return out;
}

// Keeps score >= threshold. With no scorer, or a record without a score, the
// stage errors unless allow_unscored, which keeps and flags the record.
inline std::vector<ManifestRecord> clap_filter(const std::vector<ManifestRecord>& records, Scorer* scorer,
                                               const FilterConfig& cfg, bool allow_unscored, DropCounters& drops,
                                               std::vector<DropEntry>* log = nullptr) {
  if (!scorer && !allow_unscored)
    throw ContractError("transcript-miner", "no CLAP scorer configured; pass --allow-unscored to skip the stage");
  std::vector<std::optional<double>> scores(records.size());
  if (scorer) scores = scorer->score(records);
  if (scores.size() != records.size())
    throw ContractError("transcript-miner", "scorer returned " + std::to_string(scores.size()) + " scores for " +
                                                std::to_string(records.size()) + " records");
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ManifestRecord r = records[i];
    if (!scores[i]) {
      if (!allow_unscored)
        throw ContractError("transcript-miner", "no CLAP score for " + r.video_id + " [" + std::to_string(r.start_ms) +
                                                    ", " + std::to_string(r.end_ms) + "] ms");
      r.flags |= kUnscored;
      r.clap_score.reset();
      out.push_back(std::move(r));
      continue;
    }
    r.clap_score = *scores[i];
    if (*scores[i] < cfg.clap_threshold) {
      ++drops.clap;
      if (log) log->push_back({r.video_id, r.start_ms, r.end_ms, "clap", std::to_string(*scores[i])});
      continue;
    }
    r.flags |= kClapPassed;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace genau::miner
