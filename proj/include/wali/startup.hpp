// SPDX-License-Identifier: Apache-2.0
//
// Startup parameter transfer: the guest asks for argument/environment sizes,
// allocates, then requests a packed copy. The host writes only into
// guest-provided, bounds-checked ranges and never consults its own process
// environment.
#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "wali/common.hpp"
#include "wali/memory_pool.hpp"

namespace wali {

class StartupParams {
public:
  StartupParams(std::vector<std::string> argv, std::vector<std::string> env)
      : argv_(std::move(argv)), env_(std::move(env)) {
    for (const auto& a : argv_)
      if (a.find('\0') != std::string::npos)
        throw ConfigError("argv entries must not contain NUL bytes");
    for (const auto& e : env_)
      if (e.find('\0') != std::string::npos)
        throw ConfigError("env entries must not contain NUL bytes");
  }

  uint32_t argc() const { return static_cast<uint32_t>(argv_.size()); }
  uint32_t envc() const { return static_cast<uint32_t>(env_.size()); }

  uint32_t argv_len() const { return packed_len(argv_); }
  uint32_t env_len() const { return packed_len(env_); }

  /// Writes packed NUL-terminated strings into buf_addr and their guest
  /// offsets (32-bit, one per entry) into offsets_addr. Returns the count.
  uint32_t copy_argv(EngineMemory& mem, uint64_t offsets_addr,
                     uint64_t buf_addr) const {
    return copy_packed(mem, argv_, offsets_addr, buf_addr);
  }

  uint32_t copy_env(EngineMemory& mem, uint64_t offsets_addr,
                    uint64_t buf_addr) const {
    return copy_packed(mem, env_, offsets_addr, buf_addr);
  }

  const std::vector<std::string>& argv() const { return argv_; }
  const std::vector<std::string>& env() const { return env_; }

private:
  static uint32_t packed_len(const std::vector<std::string>& v) {
    uint64_t total = 0;
    for (const auto& s : v) total += s.size() + 1;
    return static_cast<uint32_t>(total);
  }

  static uint32_t copy_packed(EngineMemory& mem,
                              const std::vector<std::string>& v,
                              uint64_t offsets_addr, uint64_t buf_addr) {
    uint8_t* offsets = translate(mem, offsets_addr, uint64_t{4} * v.size());
    uint8_t* buf = translate(mem, buf_addr, packed_len(v));
    uint64_t pos = buf_addr;
    for (size_t i = 0; i < v.size(); ++i) {
      uint32_t off32 = static_cast<uint32_t>(pos);
      std::memcpy(offsets + 4 * i, &off32, 4);
      std::memcpy(buf + (pos - buf_addr), v[i].data(), v[i].size());
      buf[pos - buf_addr + v[i].size()] = 0;
      pos += v[i].size() + 1;
    }
    return static_cast<uint32_t>(v.size());
  }

  std::vector<std::string> argv_;
  std::vector<std::string> env_;
};

} // namespace wali
