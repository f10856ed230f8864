// SPDX-License-Identifier: Apache-2.0

#include "synthaug/process.hpp"

#include <csignal>
#include <cerrno>
#include <cstring>

#include <sys/wait.h>
#include <unistd.h>

#include <fmt/core.h>

#include "synthaug/common.hpp"

namespace synthaug {

LineProcess::LineProcess(std::string command) : command_(std::move(command)) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) fail("pipe() failed");
  // A dead child must surface as EPIPE, not kill us.
  std::signal(SIGPIPE, SIG_IGN);
  pid_ = fork();
  if (pid_ < 0) fail("fork() failed");
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

LineProcess::~LineProcess() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

void LineProcess::fail(const std::string& what) const {
  throw BackendError(fmt::format("backend '{}': {} (check the backend command and retry)",
                                 command_, what));
}

void LineProcess::send(const nlohmann::json& message) {
  std::string line = message.dump();
  line.push_back('\n');
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = write(to_child_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(fmt::format("write failed: {}", std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
}

nlohmann::json LineProcess::receive() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      try {
        return nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        fail(fmt::format("malformed response: {}", e.what()));
      }
    }
    char chunk[65536];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail("process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

nlohmann::json LineProcess::call(const nlohmann::json& request) {
  std::lock_guard lock(mutex_);
  send(request);
  auto response = receive();
  if (response.contains("error")) {
    fail(fmt::format("reported error: {}", response["error"].dump()));
  }
  return response;
}

}  // namespace synthaug
