// SPDX-License-Identifier: Apache-2.0
//
// Syscall trace output: one JSON object per line.
#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

#include <ctime>

#include <json.hpp>

#include "wali/common.hpp"

namespace wali {

inline uint64_t monotonic_ns() {
  timespec ts{};
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<uint64_t>(ts.tv_sec) * 1000000000ull +
         static_cast<uint64_t>(ts.tv_nsec);
}

class TraceWriter {
public:
  explicit TraceWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw ConfigError("cannot open trace file: " + path);
  }

  void record(std::string_view name, std::span<const uint64_t> args, int64_t ret,
              uint64_t start_ns, uint64_t end_ns, uint32_t tid) {
    nlohmann::json j;
    j["ts_ns"] = start_ns;
    j["syscall"] = std::string(name);
    auto arr = nlohmann::json::array();
    for (uint64_t a : args) arr.push_back(a);
    j["args"] = std::move(arr);
    j["ret"] = ret;
    j["dur_ns"] = end_ns - start_ns;
    j["tid"] = tid;
    write_line(j);
  }

  void note(std::string_view message) {
    nlohmann::json j;
    j["ts_ns"] = monotonic_ns();
    j["note"] = std::string(message);
    write_line(j);
  }

private:
  void write_line(const nlohmann::json& j) {
    std::lock_guard<std::mutex> lock(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
  }

  std::ofstream out_;
  std::mutex mu_;
};

} // namespace wali
