// SPDX-License-Identifier: Apache-2.0
//
// 1-to-1 process model support: environment handoff segments for execve,
// the guest thread registry, and the exit control-flow types.
#pragma once

#include <atomic>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "wali/bridge.hpp"
#include "wali/common.hpp"
#include "wali/signals.hpp"

namespace wali {

// Canonical clone flags (x86-64 values, identical across Linux ports).
namespace guest {
constexpr uint64_t kCloneVm = 0x00000100;
constexpr uint64_t kCloneFs = 0x00000200;
constexpr uint64_t kCloneFiles = 0x00000400;
constexpr uint64_t kCloneSighand = 0x00000800;
constexpr uint64_t kCloneThread = 0x00010000;
constexpr uint64_t kCloneSysvsem = 0x00040000;
constexpr uint64_t kCloneSettls = 0x00080000;
constexpr uint64_t kCloneParentSettid = 0x00100000;
constexpr uint64_t kCloneChildCleartid = 0x00200000;
constexpr uint64_t kCloneChildSettid = 0x01000000;
} // namespace guest

/// Unwinds one guest thread (the `exit` syscall on a spawned thread).
struct ThreadExit {
  int code;
};

/// Unwinds the whole guest (exit_group, or exit on the main thread).
struct ProcessExit {
  int code;
};

inline std::string env_segment_name(pid_t pid) {
  return "/wali.env." + std::to_string(pid);
}

/// Serializes KEY=VALUE entries: little-endian u32 length prefix per entry,
/// a zero length terminates.
inline void write_env_segment(pid_t pid, const std::vector<std::string>& env) {
  std::string name = env_segment_name(pid);
  int fd = ::shm_open(name.c_str(), O_CREAT | O_TRUNC | O_RDWR, 0600);
  if (fd < 0) throw ConfigError("cannot create env segment " + name);
  std::vector<uint8_t> blob;
  for (const auto& e : env) {
    uint32_t len = static_cast<uint32_t>(e.size());
    uint8_t hdr[4];
    std::memcpy(hdr, &len, 4);
    blob.insert(blob.end(), hdr, hdr + 4);
    blob.insert(blob.end(), e.begin(), e.end());
  }
  blob.insert(blob.end(), {0, 0, 0, 0});
  size_t off = 0;
  while (off < blob.size()) {
    ssize_t n = ::write(fd, blob.data() + off, blob.size() - off);
    if (n <= 0) {
      ::close(fd);
      ::shm_unlink(name.c_str());
      throw ConfigError("cannot write env segment " + name);
    }
    off += static_cast<size_t>(n);
  }
  ::close(fd);
}

/// Reads and unlinks this process's handoff segment, if present.
inline std::optional<std::vector<std::string>> consume_env_segment(pid_t pid) {
  std::string name = env_segment_name(pid);
  int fd = ::shm_open(name.c_str(), O_RDONLY, 0);
  if (fd < 0) return std::nullopt;
  std::vector<uint8_t> blob;
  uint8_t buf[4096];
  ssize_t n;
  while ((n = ::read(fd, buf, sizeof buf)) > 0)
    blob.insert(blob.end(), buf, buf + n);
  ::close(fd);
  ::shm_unlink(name.c_str());
  std::vector<std::string> env;
  size_t off = 0;
  while (off + 4 <= blob.size()) {
    uint32_t len;
    std::memcpy(&len, blob.data() + off, 4);
    off += 4;
    if (len == 0) return env;
    if (off + len > blob.size()) break;
    env.emplace_back(reinterpret_cast<const char*>(blob.data() + off), len);
    off += len;
  }
  throw ConfigError("malformed env segment " + name);
}

/// base entries overridden per KEY by `overrides`; new keys appended in order.
inline std::vector<std::string> merge_env(const std::vector<std::string>& base,
                                          const std::vector<std::string>& overrides) {
  auto key_of = [](const std::string& s) { return s.substr(0, s.find('=')); };
  std::vector<std::string> out = base;
  for (const auto& o : overrides) {
    std::string k = key_of(o);
    bool replaced = false;
    for (auto& b : out) {
      if (key_of(b) == k) {
        b = o;
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(o);
  }
  return out;
}

inline bool file_has_wasm_magic(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) return false;
  uint8_t magic[4] = {0, 0, 0, 0};
  ssize_t n = ::read(fd, magic, 4);
  ::close(fd);
  return n == 4 && magic[0] == 0x00 && magic[1] == 0x61 && magic[2] == 0x73 &&
         magic[3] == 0x6D;
}

struct GuestThread {
  uint32_t tid = 0;
  EngineThread* exec = nullptr;
  std::unique_ptr<EngineThread> exec_owned; // spawned threads own their context
  DeferralStack deferrals;
  uint64_t clear_tid_addr = 0; // guest address cleared and futex-woken at exit
  std::thread worker;          // empty for the main thread
};

class ThreadRegistry {
public:
  GuestThread* register_thread(uint32_t tid, EngineThread* exec) {
    std::lock_guard<std::mutex> lock(mu_);
    auto t = std::make_unique<GuestThread>();
    t->tid = tid;
    t->exec = exec;
    GuestThread* raw = t.get();
    threads_[tid] = std::move(t);
    return raw;
  }

  GuestThread* register_thread(uint32_t tid, std::unique_ptr<EngineThread> exec) {
    std::lock_guard<std::mutex> lock(mu_);
    auto t = std::make_unique<GuestThread>();
    t->tid = tid;
    t->exec_owned = std::move(exec);
    t->exec = t->exec_owned.get();
    GuestThread* raw = t.get();
    threads_[tid] = std::move(t);
    return raw;
  }

  /// Detaches the worker and drops the entry (called as a guest thread ends).
  void retire(uint32_t tid) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = threads_.find(tid);
    if (it == threads_.end()) return;
    if (it->second->worker.joinable()) it->second->worker.detach();
    threads_.erase(it);
  }

  /// Rebuilds the registry in a fork child: only the calling thread survives.
  void reset_after_fork(uint32_t tid, EngineThread* exec) {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, t] : threads_)
      if (t->worker.joinable()) t->worker.detach();
    threads_.clear();
    auto t = std::make_unique<GuestThread>();
    t->tid = tid;
    t->exec = exec;
    threads_[tid] = std::move(t);
  }

  GuestThread* find(uint32_t tid) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = threads_.find(tid);
    return it == threads_.end() ? nullptr : it->second.get();
  }

  size_t count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return threads_.size();
  }

  /// Hands the spawning thread's handle to the registry entry so retire() can
  /// detach it later. Returns false when the thread already retired itself;
  /// the caller still owns the handle then.
  bool adopt_worker(uint32_t tid, std::thread&& worker) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = threads_.find(tid);
    if (it == threads_.end()) return false;
    it->second->worker = std::move(worker);
    return true;
  }

private:
  mutable std::mutex mu_;
  std::map<uint32_t, std::unique_ptr<GuestThread>> threads_;
};

} // namespace wali
