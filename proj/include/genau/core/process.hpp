#pragma once

// Line-oriented child process over stdin/stdout pipes, used by external
// embedders, captioners and scorers that speak one JSON object per line.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <string>
#include <vector>

#include "genau/core/error.hpp"

extern char** environ;

namespace genau {

class TimeoutError : public Error {
 public:
  TimeoutError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class StdioProcess {
 public:
  // timeout_ms <= 0 waits forever.
  explicit StdioProcess(std::vector<std::string> argv, std::string module = "provider", int timeout_ms = 0)
      : argv_(std::move(argv)), module_(std::move(module)), timeout_ms_(timeout_ms) {
    if (argv_.empty()) throw ContractError(module_, "empty provider command");
    // A dead child must surface as an error, not kill us with SIGPIPE.
    std::signal(SIGPIPE, SIG_IGN);
    spawn();
  }

  StdioProcess(const StdioProcess&) = delete;
  StdioProcess& operator=(const StdioProcess&) = delete;
  ~StdioProcess() { stop(true); }

  // Sends one line and returns the reply line (without the newline). After a
  // timeout the child is killed; the next request starts a fresh one.
  std::string request(const std::string& line) {
    if (pid_ <= 0) spawn();
    std::string msg = line + '\n';
    std::size_t off = 0;
    while (off < msg.size()) {
      const ssize_t n = write(to_child_, msg.data() + off, msg.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        stop(true);
        throw Error(module_, "provider closed its input");
      }
      off += std::size_t(n);
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string reply = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!reply.empty() && reply.back() == '\r') reply.pop_back();
        return reply;
      }
      int wait = -1;
      if (timeout_ms_ > 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        wait = int(std::max<long long>(0, left.count()));
      }
      pollfd p{from_child_, POLLIN, 0};
      const int r = poll(&p, 1, wait);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) {
        stop(true);
        throw TimeoutError(module_, "provider gave no reply within " + std::to_string(timeout_ms_) + " ms");
      }
      char chunk[4096];
      const ssize_t n = read(from_child_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        stop(true);
        throw Error(module_, "provider exited without a reply");
      }
      buffer_.append(chunk, std::size_t(n));
    }
  }

  const std::vector<std::string>& argv() const { return argv_; }

 private:
  void spawn() {
    int in_pipe[2], out_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(module_, "pipe() failed");
    if (pipe2(out_pipe, O_CLOEXEC) != 0) {
      close(in_pipe[0]);
      close(in_pipe[1]);
      throw Error(module_, "pipe() failed");
    }
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, out_pipe[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&fa, in_pipe[1]);
    posix_spawn_file_actions_addclose(&fa, out_pipe[0]);
    std::vector<char*> args;
    for (const auto& a : argv_) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const int rc = posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    close(in_pipe[0]);
    close(out_pipe[1]);
    if (rc != 0) {
      close(in_pipe[1]);
      close(out_pipe[0]);
      pid_ = -1;
      throw Error(module_, "cannot start provider '" + argv_[0] + "'");
    }
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
  }

  void stop(bool kill_child) {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      if (kill_child) kill(pid_, SIGKILL);
      int status = 0;
      waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }

  std::vector<std::string> argv_;
  std::string module_;
  int timeout_ms_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// Splits a command line on whitespace (no quoting).
inline std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : cmd) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace genau
