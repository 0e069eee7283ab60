// SPDX-License-Identifier: Apache-2.0
//
// Small DSL for building guest modules that exercise the syscall surface,
// plus a pipe capture helper for in-process runs.
#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "support/helpers.hpp"
#include "wali/runtime.hpp"

namespace testdsl {

// Guest modules declare imports lazily, so tests list only what they call.
class GuestBuilder {
public:
  GuestBuilder() { b_.add_memory(1); }

  uint32_t sys(const std::string& name, size_t arity) {
    auto key = name + "/" + std::to_string(arity);
    auto it = imports_.find(key);
    if (it != imports_.end()) return it->second;
    uint32_t idx = b_.import_func("wali", name, testutil::sys_type(arity));
    imports_[key] = idx;
    return idx;
  }

  uint32_t startup(const std::string& name, size_t argc) {
    auto it = imports_.find(name);
    if (it != imports_.end()) return it->second;
    wali::wasm::FuncType ft;
    for (size_t i = 0; i < argc; ++i) ft.params.push_back(wali::wasm::ValType::I32);
    ft.results = {wali::wasm::ValType::I32};
    uint32_t idx = b_.import_func("wali", name, ft);
    imports_[name] = idx;
    return idx;
  }

  void data(uint32_t offset, const std::string& bytes) {
    b_.add_data(offset, std::vector<uint8_t>(bytes.begin(), bytes.end()));
  }

  wali::wasm::ModuleBuilder& raw() { return b_; }

  std::shared_ptr<const wali::wasm::Module> finish(
      std::vector<uint8_t> start_code, std::vector<wali::wasm::LocalDecl> locals = {}) {
    auto bytes = finish_bytes(std::move(start_code), std::move(locals));
    auto m = std::make_shared<wali::wasm::Module>(wali::wasm::parse_module(bytes));
    wali::wasm::validate(*m);
    return m;
  }

  std::vector<uint8_t> finish_bytes(std::vector<uint8_t> start_code,
                                    std::vector<wali::wasm::LocalDecl> locals = {}) {
    uint32_t f = b_.add_func({{}, {}}, std::move(locals), std::move(start_code));
    b_.export_func("_start", f);
    return b_.build();
  }

private:
  wali::wasm::ModuleBuilder b_;
  std::map<std::string, uint32_t> imports_;
};

struct Pipe {
  int rd = -1;
  int wr = -1;
  Pipe() {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    rd = fds[0];
    wr = fds[1];
  }
  ~Pipe() {
    if (rd >= 0) ::close(rd);
    if (wr >= 0) ::close(wr);
  }
  Pipe(const Pipe&) = delete;
  Pipe& operator=(const Pipe&) = delete;

  std::string drain() {
    ::close(wr);
    wr = -1;
    std::string out;
    char buf[4096];
    ssize_t n;
    while ((n = ::read(rd, buf, sizeof buf)) > 0) out.append(buf, static_cast<size_t>(n));
    return out;
  }
};

inline wali::RuntimeOptions plain_opts() {
  wali::RuntimeOptions o;
  o.argv = {"prog"};
  o.use_env_segment = false;
  return o;
}

/// write(fd, addr, len) followed by drop.
inline void emit_write(wali::wasm::CodeBuilder& c, uint32_t write_idx, int fd,
                       uint32_t addr, uint32_t len) {
  c.i64_const(fd).i64_const(addr).i64_const(len).call(write_idx)
      .op(wali::wasm::op::kDrop);
}

/// Emits the i64 on top of the stack as 8 little-endian bytes, using
/// `scratch_local` (an i64 local) and `scratch_addr` for staging.
inline void emit_stack_i64(wali::wasm::CodeBuilder& c, uint32_t write_idx, int fd,
                           uint32_t scratch_local, uint32_t scratch_addr) {
  c.local_set(scratch_local);
  c.i32_const(static_cast<int32_t>(scratch_addr)).local_get(scratch_local).i64_store(0);
  emit_write(c, write_idx, fd, scratch_addr, 8);
}

} // namespace testdsl
