#pragma once

// Run directories and metrics CSV files.
//
// Layout of a run directory:
//   config.toml    effective configuration
//   log.txt        log lines
//   metrics.csv    one row per logged step
//   *.ckpt         checkpoints (final one always written)

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "genau/core/error.hpp"

namespace genau::cli {

namespace fs = std::filesystem;

// <root>/<command>-YYYYmmdd-HHMMSS, with a numeric suffix on collision.
// An explicit directory is used as is.
inline fs::path make_run_dir(const fs::path& root, const std::string& command, const fs::path& explicit_dir = {}) {
  if (!explicit_dir.empty()) {
    fs::create_directories(explicit_dir);
    return explicit_dir;
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::path dir = root / (command + "-" + stamp);
  for (int i = 1; fs::exists(dir); ++i) dir = root / (command + "-" + stamp + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

// Fixed columns; values printed with 17 significant digits so reruns can be
// compared byte for byte. With `wall_clock` an elapsed-seconds column is
// appended, which deterministic runs leave out.
class MetricsCsv {
 public:
  MetricsCsv(const fs::path& path, std::vector<std::string> columns, bool wall_clock)
      : out_(path), n_(columns.size()), wall_(wall_clock), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw Error("cli", "cannot write " + path.string());
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    if (wall_) out_ << ",seconds";
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != n_) throw ContractError("cli", "metrics row has the wrong number of columns");
    char buf[40];
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      out_ << (i ? "," : "") << buf;
    }
    if (wall_) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      std::snprintf(buf, sizeof buf, "%.3f", s);
      out_ << ',' << buf;
    }
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::size_t n_;
  bool wall_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace genau::cli
