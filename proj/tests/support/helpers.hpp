// SPDX-License-Identifier: Apache-2.0
//
// Shared test utilities: subprocess execution with captured output, temp
// directories, file helpers, and small prebuilt guest modules.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "wali/common.hpp"
#include "wali/wasm/builder.hpp"

namespace testutil {

inline std::string fixture_dir() { return WALI_FIXTURE_DIR; }
inline std::string cli_path() { return WALI_CLI_PATH; }

struct ProcResult {
  int exit_code = -1;   // -1 when terminated by a signal
  int term_signal = 0;
  std::string out;
  std::string err;
};

/// Runs argv[0] with the given arguments, feeding `input` to stdin and
/// capturing both output streams.
inline ProcResult run_process(const std::vector<std::string>& argv,
                              const std::string& input = {}) {
  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (pipe(in_pipe) || pipe(out_pipe) || pipe(err_pipe))
    throw std::runtime_error("pipe failed");
  pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    dup2(in_pipe[0], 0);
    dup2(out_pipe[1], 1);
    dup2(err_pipe[1], 2);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]})
      close(fd);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    execv(argv[0].c_str(), args.data());
    perror("execv");
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  close(err_pipe[1]);
  if (!input.empty()) {
    size_t off = 0;
    while (off < input.size()) {
      ssize_t n = write(in_pipe[1], input.data() + off, input.size() - off);
      if (n <= 0) break;
      off += static_cast<size_t>(n);
    }
  }
  close(in_pipe[1]);

  ProcResult res;
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  bool open_fd[2] = {true, true};
  char buf[4096];
  while (open_fd[0] || open_fd[1]) {
    for (int i = 0; i < 2; ++i) fds[i].events = open_fd[i] ? POLLIN : 0;
    if (poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (int i = 0; i < 2; ++i) {
      if (!open_fd[i] || !(fds[i].revents & (POLLIN | POLLHUP))) continue;
      ssize_t n = read(fds[i].fd, buf, sizeof buf);
      if (n > 0)
        (i == 0 ? res.out : res.err).append(buf, static_cast<size_t>(n));
      else
        open_fd[i] = false;
    }
  }
  close(out_pipe[0]);
  close(err_pipe[0]);

  int status = 0;
  waitpid(pid, &status, 0);
  if (WIFEXITED(status)) res.exit_code = WEXITSTATUS(status);
  if (WIFSIGNALED(status)) res.term_signal = WTERMSIG(status);
  return res;
}

class TempDir {
public:
  TempDir() {
    char tmpl[] = "/tmp/wali_test_XXXXXX";
    if (!mkdtemp(tmpl)) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return path_ + "/" + name; }
  const std::string& path() const { return path_; }

private:
  std::string path_;
};

inline void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>{});
}

inline std::string read_text(const std::string& path) {
  auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

// ---- guest module factories ------------------------------------------------

using wali::wasm::CodeBuilder;
using wali::wasm::ModuleBuilder;
using wali::wasm::ValType;

inline wali::wasm::FuncType sys_type(size_t arity) {
  wali::wasm::FuncType t;
  t.params.assign(arity, ValType::I64);
  t.results = {ValType::I64};
  return t;
}

/// A module whose `_start` writes `text` to fd 1 and returns.
inline std::vector<uint8_t> hello_module(const std::string& text,
                                         uint32_t repeat = 1) {
  ModuleBuilder b;
  uint32_t write_fn = b.import_func("wali", "write", sys_type(3));
  b.add_memory(1);
  b.add_data(16, std::vector<uint8_t>(text.begin(), text.end()));
  CodeBuilder c;
  for (uint32_t i = 0; i < repeat; ++i) {
    c.i64_const(1)
        .i64_const(16)
        .i64_const(static_cast<int64_t>(text.size()))
        .call(write_fn)
        .op(wali::wasm::op::kDrop);
  }
  uint32_t start = b.add_func({{}, {}}, {}, c.finish());
  b.export_func("_start", start);
  b.export_memory("memory");
  return b.build();
}

/// A module whose `_start` calls exit_group with the given code.
inline std::vector<uint8_t> exit_module(int code) {
  ModuleBuilder b;
  uint32_t exit_fn = b.import_func("wali", "exit_group", sys_type(1));
  b.add_memory(1);
  CodeBuilder c;
  c.i64_const(code).call(exit_fn).op(wali::wasm::op::kDrop);
  uint32_t start = b.add_func({{}, {}}, {}, c.finish());
  b.export_func("_start", start);
  return b.build();
}

/// A module that traps with an unreachable in `_start`.
inline std::vector<uint8_t> trap_module() {
  ModuleBuilder b;
  b.add_memory(1);
  CodeBuilder c;
  c.op(wali::wasm::op::kUnreachable);
  uint32_t start = b.add_func({{}, {}}, {}, c.finish());
  b.export_func("_start", start);
  return b.build();
}

} // namespace testutil
