#pragma once

// WebVTT and SRT subtitle parsing into millisecond cues.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "genau/core/error.hpp"

namespace genau::miner {

struct TranscriptCue {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::string text;

  bool operator==(const TranscriptCue&) const = default;
};

struct ParseWarning {
  std::size_t line = 0;  // 1-based line of the offending timing line
  std::string message;
};

struct ParsedTranscript {
  std::vector<TranscriptCue> cues;
  std::vector<ParseWarning> warnings;
};

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = nl + 1;
  }
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool read_digits(std::string_view s, std::size_t& pos, std::size_t min_n, std::size_t max_n, std::int64_t& out) {
  std::size_t n = 0;
  out = 0;
  while (pos < s.size() && n < max_n && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    out = out * 10 + (s[pos] - '0');
    ++pos;
    ++n;
  }
  return n >= min_n;
}

// [HH:]MM:SS<sep>mmm, hours optional and of any width.
inline std::optional<std::int64_t> parse_timestamp(std::string_view s, char frac_sep) {
  std::int64_t parts[3] = {0, 0, 0};
  std::size_t n_parts = 0, pos = 0;
  for (;;) {
    std::int64_t v;
    if (!read_digits(s, pos, 1, 9, v)) return std::nullopt;
    if (n_parts == 3) return std::nullopt;
    parts[n_parts++] = v;
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      continue;
    }
    break;
  }
  if (n_parts < 2 || pos >= s.size() || s[pos] != frac_sep) return std::nullopt;
  ++pos;
  std::int64_t ms;
  const std::size_t frac_start = pos;
  if (!read_digits(s, pos, 3, 3, ms) || pos != s.size() || pos - frac_start != 3) return std::nullopt;
  const std::int64_t h = n_parts == 3 ? parts[0] : 0, m = parts[n_parts - 2], sec = parts[n_parts - 1];
  if (m >= 60 || sec >= 60) return std::nullopt;
  return ((h * 60 + m) * 60 + sec) * 1000 + ms;
}

// "start --> end [settings]"; nullopt if the line is not a timing line.
inline std::optional<std::pair<std::int64_t, std::int64_t>> parse_timing(std::string_view line, char frac_sep) {
  const auto arrow = line.find("-->");
  if (arrow == std::string_view::npos) return std::nullopt;
  const auto lhs = trim(line.substr(0, arrow));
  auto rhs = trim(line.substr(arrow + 3));
  const auto sp = rhs.find_first_of(" \t");
  if (sp != std::string_view::npos) rhs = rhs.substr(0, sp);
  auto a = parse_timestamp(lhs, frac_sep), b = parse_timestamp(rhs, frac_sep);
  if (!a || !b) return std::pair<std::int64_t, std::int64_t>{-1, -1};
  return std::pair{*a, *b};
}

// Drops <...> markup and {...} override blocks, decodes the basic entities
// and collapses whitespace.
inline std::string clean_text(std::string_view s) {
  std::string raw;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<') {
      const auto close = s.find('>', i);
      if (close != std::string_view::npos) {
        i = close;
        continue;
      }
    }
    if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '\\') {
      const auto close = s.find('}', i);
      if (close != std::string_view::npos) {
        i = close;
        continue;
      }
    }
    raw.push_back(s[i]);
  }
  static const std::pair<std::string_view, std::string_view> entities[] = {
      {"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"}, {"&nbsp;", " "}, {"&quot;", "\""}, {"&#39;", "'"}};
  std::string dec;
  for (std::size_t i = 0; i < raw.size();) {
    bool hit = false;
    if (raw[i] == '&')
      for (const auto& [from, to] : entities)
        if (std::string_view(raw).substr(i, from.size()) == from) {
          dec += to;
          i += from.size();
          hit = true;
          break;
        }
    if (!hit) dec.push_back(raw[i++]);
  }
  std::string out;
  bool space = false;
  for (char c : dec) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out.push_back(' ');
      space = false;
      out.push_back(c);
    }
  }
  return out;
}

inline std::string_view strip_bom(std::string_view s) {
  if (s.size() >= 3 && s.substr(0, 3) == "\xEF\xBB\xBF") s.remove_prefix(3);
  return s;
}

// Shared block walker: a cue is a timing line followed by text lines up to a
// blank line. Lines before the timing line in a block (ids) are ignored.
inline ParsedTranscript parse_blocks(const std::vector<std::string_view>& lines, std::size_t first, char frac_sep) {
  ParsedTranscript out;
  std::size_t i = first;
  while (i < lines.size()) {
    while (i < lines.size() && trim(lines[i]).empty()) ++i;
    if (i >= lines.size()) break;
    const std::size_t block = i;
    std::size_t end = i;
    while (end < lines.size() && !trim(lines[end]).empty()) ++end;
    std::optional<std::pair<std::int64_t, std::int64_t>> timing;
    std::size_t t_line = block;
    for (std::size_t j = block; j < end && j < block + 2; ++j) {
      timing = parse_timing(lines[j], frac_sep);
      if (timing) {
        t_line = j;
        break;
      }
    }
    const std::string_view head = trim(lines[block]);
    const bool vtt_meta = frac_sep == '.' && (head.starts_with("NOTE") || head.starts_with("STYLE") || head.starts_with("REGION"));
    if (!timing) {
      if (!vtt_meta) out.warnings.push_back({block + 1, "block without a timing line skipped"});
    } else if (timing->first < 0) {
      out.warnings.push_back({t_line + 1, "malformed timestamp: " + std::string(trim(lines[t_line]))});
    } else if (timing->second <= timing->first) {
      out.warnings.push_back({t_line + 1, "cue end not after start"});
    } else {
      std::string text;
      for (std::size_t j = t_line + 1; j < end; ++j) {
        if (!text.empty()) text.push_back(' ');
        text += lines[j];
      }
      out.cues.push_back({timing->first, timing->second, clean_text(text)});
    }
    i = end;
  }
  return out;
}

}  // namespace detail

// Empty input gives no cues. A non-empty file must start with WEBVTT.
inline ParsedTranscript parse_vtt(std::string_view bytes) {
  bytes = detail::strip_bom(bytes);
  const auto lines = detail::split_lines(bytes);
  std::size_t first = 0;
  while (first < lines.size() && detail::trim(lines[first]).empty()) ++first;
  if (first == lines.size()) return {};
  const auto head = lines[first];
  if (!(head.starts_with("WEBVTT") && (head.size() == 6 || head[6] == ' ' || head[6] == '\t')))
    throw FormatError("transcript-miner", "missing WEBVTT header");
  // The header block runs to the first blank line.
  std::size_t i = first;
  while (i < lines.size() && !detail::trim(lines[i]).empty()) ++i;
  return detail::parse_blocks(lines, i, '.');
}

inline ParsedTranscript parse_srt(std::string_view bytes) {
  bytes = detail::strip_bom(bytes);
  return detail::parse_blocks(detail::split_lines(bytes), 0, ',');
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("transcript-miner", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Dispatches on the extension (.vtt or .srt).
inline ParsedTranscript parse_transcript_file(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".vtt") return parse_vtt(read_file(path));
  if (ext == ".srt") return parse_srt(read_file(path));
  throw FormatError("transcript-miner", "unsupported transcript extension '" + ext + "' for " + path.string());
}

}  // namespace genau::miner
