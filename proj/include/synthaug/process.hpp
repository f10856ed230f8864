// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

namespace synthaug {

/// A child process spoken to with newline-delimited JSON over stdin/stdout.
///
/// The command runs under /bin/sh. Any I/O failure or early exit raises
/// BackendError with a retry hint.
class LineProcess {
 public:
  explicit LineProcess(std::string command);
  ~LineProcess();

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  void send(const nlohmann::json& message);
  nlohmann::json receive();

  /// send + receive under one lock; raises BackendError on {"error": ...}.
  nlohmann::json call(const nlohmann::json& request);

  std::mutex& mutex() { return mutex_; }
  const std::string& command() const { return command_; }

 private:
  [[noreturn]] void fail(const std::string& what) const;

  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex mutex_;
};

}  // namespace synthaug
