// SPDX-License-Identifier: Apache-2.0
//
// Name-bound virtual syscall table. Canonical numbering is anchored to the
// x86-64 native numbers; syscalls absent there would receive fresh numbers
// starting at 1024. Names from the Linux catalogue that are not in the
// implemented set are materialized as behavior=unsupported so policy files
// can still name them.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wali/common.hpp"
#include "wali/layout.hpp"
#include "wali/syscall_names.hpp"

namespace wali {

struct SyscallEnv; // defined by the runtime

enum class ArgKind : uint8_t {
  Scalar32,
  Scalar64,
  AddrIn,
  AddrOut,
  AddrInOut,
  CString,
  RecordIn,
  RecordOut,
  AddrArray,
};

struct ArgDescriptor {
  ArgKind kind = ArgKind::Scalar64;
  std::string record;   // RecordIn/RecordOut/AddrArray element record
  int length_from = -1; // index of the argument carrying the byte length
};

inline ArgDescriptor scalar32() { return {ArgKind::Scalar32, {}, -1}; }
inline ArgDescriptor scalar64() { return {ArgKind::Scalar64, {}, -1}; }
inline ArgDescriptor addr_in(int len_from = -1) {
  return {ArgKind::AddrIn, {}, len_from};
}
inline ArgDescriptor addr_out(int len_from = -1) {
  return {ArgKind::AddrOut, {}, len_from};
}
inline ArgDescriptor addr_inout(int len_from = -1) {
  return {ArgKind::AddrInOut, {}, len_from};
}
inline ArgDescriptor cstring() { return {ArgKind::CString, {}, -1}; }
inline ArgDescriptor record_in(std::string name) {
  return {ArgKind::RecordIn, std::move(name), -1};
}
inline ArgDescriptor record_out(std::string name) {
  return {ArgKind::RecordOut, std::move(name), -1};
}
inline ArgDescriptor addr_array(std::string rec, int len_from = -1) {
  return {ArgKind::AddrArray, std::move(rec), len_from};
}

enum class SyscallBehavior : uint8_t {
  Passthrough,
  TranslatedRecord,
  Stateful,
  EmulatedNop,
  Unsupported,
};

using SyscallHandler =
    std::function<int64_t(SyscallEnv&, std::span<const uint64_t, 6>)>;

struct VirtualSyscallSpec {
  std::string name;
  uint32_t canonical_number = 0;
  std::vector<ArgDescriptor> args;
  SyscallBehavior behavior = SyscallBehavior::Unsupported;
  std::map<std::string, uint32_t> native_numbers;
  SyscallHandler handler;
};

class Registry {
public:
  /// Builds the table: the implemented set with full descriptors plus an
  /// unsupported entry for every other catalogue name.
  static Registry load() {
    Registry r;
    r.add_builtin_specs();
    for (const auto& e : kLinuxSyscallsX86_64)
      if (!r.by_name_.count(e.name))
        r.add(e.name, e.nr, {}, SyscallBehavior::Unsupported, {});
    r.validate(LayoutManifest::builtin());
    return r;
  }

  const VirtualSyscallSpec* lookup(std::string_view name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &specs_[it->second];
  }

  bool knows(std::string_view name) const { return by_name_.count(name) != 0; }

  const std::vector<VirtualSyscallSpec>& specs() const { return specs_; }

  /// Names the runtime actually implements (dispatchable without trapping).
  std::vector<std::string> implemented_names() const {
    std::vector<std::string> out;
    for (const auto& s : specs_)
      if (s.behavior != SyscallBehavior::Unsupported) out.push_back(s.name);
    return out;
  }

  void set_handler(std::string_view name, SyscallHandler fn) {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw ConfigError("set_handler: unknown syscall " + std::string(name));
    specs_[it->second].handler = std::move(fn);
  }

  /// Registers an extension syscall absent from the x86-64 catalogue;
  /// canonical numbers for these start at 1024.
  uint32_t add_extension(const std::string& name, std::vector<ArgDescriptor> args,
                         SyscallBehavior behavior) {
    uint32_t nr = next_extension_++;
    add(name, nr, std::move(args), behavior, {});
    return nr;
  }

  void validate(const LayoutManifest& manifest) const {
    std::map<uint32_t, std::string> numbers;
    for (const auto& s : specs_) {
      if (s.args.size() > 6)
        throw ConfigError("registry: " + s.name + " exceeds 6 arguments");
      auto [it, fresh] = numbers.emplace(s.canonical_number, s.name);
      if (!fresh)
        throw ConfigError(format_msg("registry: number %u assigned to both %s and %s",
                                     s.canonical_number, it->second.c_str(),
                                     s.name.c_str()));
      bool any_record = false;
      for (const auto& a : s.args) {
        if (!a.record.empty()) {
          any_record = true;
          if (!manifest.record(a.record))
            throw ConfigError("registry: " + s.name + " references unknown record " +
                              a.record);
        }
        if (a.length_from >= static_cast<int>(s.args.size()))
          throw ConfigError("registry: " + s.name + " length_from out of range");
      }
      if (s.behavior == SyscallBehavior::TranslatedRecord && !any_record)
        throw ConfigError("registry: " + s.name +
                          " marked translated-record without record args");
    }
  }

private:
  void add(const std::string& name, uint32_t nr, std::vector<ArgDescriptor> args,
           SyscallBehavior behavior, std::optional<uint32_t> generic_nr) {
    if (by_name_.count(name))
      throw ConfigError("registry: duplicate syscall name " + name);
    VirtualSyscallSpec spec;
    spec.name = name;
    spec.canonical_number = nr;
    spec.args = std::move(args);
    spec.behavior = behavior;
    if (auto x86 = linux_syscall_number(name)) spec.native_numbers["x86_64"] = *x86;
    if (generic_nr) {
      spec.native_numbers["arm64"] = *generic_nr;
      spec.native_numbers["riscv64"] = *generic_nr;
    }
    by_name_[name] = specs_.size();
    specs_.push_back(std::move(spec));
  }

  void add_builtin_specs() {
    using B = SyscallBehavior;
    auto P = B::Passthrough;
    auto T = B::TranslatedRecord;
    auto S = B::Stateful;
    auto N = B::EmulatedNop;

    add("read", 0, {scalar32(), addr_out(2), scalar64()}, P, 63);
    add("write", 1, {scalar32(), addr_in(2), scalar64()}, P, 64);
    add("open", 2, {cstring(), scalar32(), scalar32()}, P, std::nullopt);
    add("close", 3, {scalar32()}, P, 57);
    add("stat", 4, {cstring(), record_out("kstat")}, T, std::nullopt);
    add("fstat", 5, {scalar32(), record_out("kstat")}, T, 80);
    add("lstat", 6, {cstring(), record_out("kstat")}, T, std::nullopt);
    add("poll", 7, {addr_array("pollfd", 1), scalar32(), scalar32()}, T,
        std::nullopt);
    add("lseek", 8, {scalar32(), scalar64(), scalar32()}, P, 62);
    add("mmap", 9,
        {scalar64(), scalar64(), scalar32(), scalar32(), scalar32(), scalar64()},
        S, 222);
    add("mprotect", 10, {scalar64(), scalar64(), scalar32()}, S, 226);
    add("munmap", 11, {scalar64(), scalar64()}, S, 215);
    add("brk", 12, {scalar64()}, N, 214);
    add("rt_sigaction", 13,
        {scalar32(), record_in("ksigaction"), record_out("ksigaction"), scalar64()},
        S, 134);
    add("rt_sigprocmask", 14,
        {scalar32(), record_in("sigset"), record_out("sigset"), scalar64()}, S,
        135);
    add("rt_sigreturn", 15, {}, N, 139);
    add("ioctl", 16, {scalar32(), scalar64(), scalar64()}, P, 29);
    add("pread64", 17, {scalar32(), addr_out(2), scalar64(), scalar64()}, P, 67);
    add("writev", 20, {scalar32(), addr_array("iovec", 2), scalar32()}, T, 66);
    add("access", 21, {cstring(), scalar32()}, P, std::nullopt);
    add("pipe", 22, {addr_out()}, P, std::nullopt);
    add("sched_yield", 24, {}, P, 124);
    add("mremap", 25,
        {scalar64(), scalar64(), scalar64(), scalar32(), scalar64()}, S, 216);
    add("dup", 32, {scalar32()}, P, 23);
    add("nanosleep", 35, {record_in("timespec"), record_out("timespec")}, T, 101);
    add("getpid", 39, {}, P, 172);
    add("socket", 41, {scalar32(), scalar32(), scalar32()}, P, 198);
    add("sendto", 44,
        {scalar32(), addr_in(2), scalar64(), scalar32(), addr_in(5), scalar32()},
        P, 206);
    add("recvfrom", 45,
        {scalar32(), addr_out(2), scalar64(), scalar32(), addr_out(), addr_inout()},
        P, 207);
    add("socketpair", 53, {scalar32(), scalar32(), scalar32(), addr_out()}, P,
        199);
    add("clone", 56,
        {scalar64(), scalar64(), addr_out(), addr_out(), scalar64()}, S, 220);
    add("fork", 57, {}, S, std::nullopt);
    add("execve", 59, {cstring(), addr_array(""), addr_array("")}, S, 221);
    add("exit", 60, {scalar32()}, S, 93);
    add("wait4", 61, {scalar32(), addr_out(), scalar32(), record_out("rusage")},
        T, 260);
    add("kill", 62, {scalar32(), scalar32()}, P, 129);
    add("uname", 63, {addr_out()}, P, 160);
    add("fcntl", 72, {scalar32(), scalar32(), scalar64()}, P, 25);
    add("getcwd", 79, {addr_out(1), scalar64()}, P, 17);
    add("gettimeofday", 96, {record_out("timeval"), scalar64()}, T, 169);
    add("getrlimit", 97, {scalar32(), record_out("rlimit")}, T, 163);
    add("getrusage", 98, {scalar32(), record_out("rusage")}, T, 165);
    add("getuid", 102, {}, P, 174);
    add("getgid", 104, {}, P, 176);
    add("geteuid", 107, {}, P, 175);
    add("getegid", 108, {}, P, 177);
    add("getppid", 110, {}, P, 173);
    add("gettid", 186, {}, P, 178);
    add("tkill", 200, {scalar32(), scalar32()}, P, 130);
    add("futex", 202,
        {addr_inout(), scalar32(), scalar32(), record_in("timespec"),
         addr_inout(), scalar32()},
        S, 98);
    add("exit_group", 231, {scalar32()}, S, 94);
    add("clock_gettime", 228, {scalar32(), record_out("timespec")}, T, 113);
    add("openat", 257, {scalar32(), cstring(), scalar32(), scalar32()}, P, 56);
    add("pipe2", 293, {addr_out(), scalar32()}, P, 59);
    add("prlimit64", 302,
        {scalar32(), scalar32(), record_in("rlimit"), record_out("rlimit")}, T,
        261);
  }

  std::vector<VirtualSyscallSpec> specs_;
  std::map<std::string, size_t, std::less<>> by_name_;
  uint32_t next_extension_ = 1024;
};

} // namespace wali
