// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "support/guest_dsl.hpp"
#include "support/helpers.hpp"
#include "wali/runtime.hpp"

using namespace wali;
using Catch::Matchers::ContainsSubstring;
using testdsl::GuestBuilder;
using testdsl::Pipe;
using testdsl::emit_write;
using testdsl::plain_opts;

TEST_CASE("guest writes land on the host file descriptor") {
  Pipe p;
  GuestBuilder g;
  uint32_t w = g.sys("write", 3);
  g.data(16, "hello");
  wasm::CodeBuilder c;
  emit_write(c, w, p.wr, 16, 5);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Exit);
  CHECK(r.code == 0);
  CHECK(p.drain() == "hello");
}

TEST_CASE("startup imports hand over argv and env") {
  Pipe p;
  GuestBuilder g;
  uint32_t w = g.sys("write", 3);
  uint32_t get_argc = g.startup("get_argc", 0);
  uint32_t get_argv_len = g.startup("get_argv_len", 0);
  uint32_t get_envc = g.startup("get_envc", 0);
  uint32_t get_env_len = g.startup("get_env_len", 0);
  uint32_t copy_argv = g.startup("copy_argv", 2);
  uint32_t copy_env = g.startup("copy_env", 2);

  wasm::CodeBuilder c;
  c.i32_const(0).call(get_argc).i32_store(0);
  c.i32_const(4).call(get_argv_len).i32_store(0);
  c.i32_const(8).call(get_envc).i32_store(0);
  c.i32_const(12).call(get_env_len).i32_store(0);
  c.i32_const(64).i32_const(128).call(copy_argv).op(0x1A);
  c.i32_const(256).i32_const(320).call(copy_env).op(0x1A);
  emit_write(c, w, p.wr, 0, 16);
  emit_write(c, w, p.wr, 128, 17); // "alpha\0beta gamma\0"
  emit_write(c, w, p.wr, 320, 4);  // "K=V\0"

  RuntimeOptions o = plain_opts();
  o.argv = {"alpha", "beta gamma"};
  o.env = {"K=V"};
  WaliRuntime rt(g.finish(c.finish()), o);
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);

  std::string out = p.drain();
  REQUIRE(out.size() == 16 + 17 + 4);
  uint32_t counts[4];
  std::memcpy(counts, out.data(), 16);
  CHECK(counts[0] == 2);  // argc
  CHECK(counts[1] == 17); // packed argv bytes
  CHECK(counts[2] == 1);  // envc
  CHECK(counts[3] == 4);  // packed env bytes
  CHECK(out.substr(16, 17) == std::string("alpha\0beta gamma\0", 17));
  CHECK(out.substr(33, 4) == std::string("K=V\0", 4));
}

TEST_CASE("guest getpid sees the host process id") {
  Pipe p;
  GuestBuilder g;
  uint32_t w = g.sys("write", 3);
  uint32_t getpid_idx = g.sys("getpid", 0);
  wasm::CodeBuilder c;
  c.i32_const(0).call(getpid_idx).i64_store(0);
  emit_write(c, w, p.wr, 0, 8);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  std::string out = p.drain();
  REQUIRE(out.size() == 8);
  int64_t pid;
  std::memcpy(&pid, out.data(), 8);
  CHECK(pid == ::getpid());
}

TEST_CASE("guest fds are host fds: open, read, write, close") {
  testutil::TempDir dir;
  std::string path = dir.path() + "/input.txt";
  testutil::write_text(path, "filedata");

  Pipe p;
  GuestBuilder g;
  uint32_t open_idx = g.sys("open", 3);
  uint32_t read_idx = g.sys("read", 3);
  uint32_t write_idx = g.sys("write", 3);
  uint32_t close_idx = g.sys("close", 1);
  g.data(600, path + std::string(1, '\0'));

  wasm::CodeBuilder c;
  c.i64_const(600).i64_const(0).i64_const(0).call(open_idx).local_set(0);
  c.local_get(0).i64_const(300).i64_const(8).call(read_idx).op(0x1A);
  emit_write(c, write_idx, p.wr, 300, 8);
  c.local_get(0).call(close_idx).op(0x1A);
  WaliRuntime rt(g.finish(c.finish(), {{1, wasm::ValType::I64}}), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  CHECK(p.drain() == "filedata");
}

TEST_CASE("policy denial surfaces as a negative errno in the guest") {
  Pipe p;
  GuestBuilder g;
  uint32_t w = g.sys("write", 3);
  uint32_t getpid_idx = g.sys("getpid", 0);
  wasm::CodeBuilder c;
  c.i32_const(0).call(getpid_idx).i64_store(0);
  emit_write(c, w, p.wr, 0, 8);

  RuntimeOptions o = plain_opts();
  o.policy = std::make_shared<Policy>(Policy::parse("deny getpid EACCES\n"));
  WaliRuntime rt(g.finish(c.finish()), o);
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  std::string out = p.drain();
  REQUIRE(out.size() == 8);
  int64_t ret;
  std::memcpy(&ret, out.data(), 8);
  CHECK(ret == -EACCES);
}

TEST_CASE("policy trap rule aborts the guest") {
  GuestBuilder g;
  uint32_t getpid_idx = g.sys("getpid", 0);
  wasm::CodeBuilder c;
  c.call(getpid_idx).op(0x1A);
  RuntimeOptions o = plain_opts();
  o.policy = std::make_shared<Policy>(Policy::parse("trap getpid\n"));
  WaliRuntime rt(g.finish(c.finish()), o);
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Trap);
  CHECK(r.code == 134);
  CHECK_THAT(r.trap_message, ContainsSubstring("blocked by policy"));
}

TEST_CASE("default deny policy blocks everything not allowed") {
  Pipe p;
  GuestBuilder g;
  uint32_t w = g.sys("write", 3);
  uint32_t getpid_idx = g.sys("getpid", 0);
  wasm::CodeBuilder c;
  c.i32_const(0).call(getpid_idx).i64_store(0);
  emit_write(c, w, p.wr, 0, 8);
  RuntimeOptions o = plain_opts();
  o.policy = std::make_shared<Policy>(Policy::parse("default deny\nallow write\n"));
  WaliRuntime rt(g.finish(c.finish()), o);
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  std::string out = p.drain();
  REQUIRE(out.size() == 8); // write was allowed
  int64_t ret;
  std::memcpy(&ret, out.data(), 8);
  CHECK(ret == -EPERM); // getpid fell to the default
}

TEST_CASE("trace records every dispatched syscall") {
  testutil::TempDir dir;
  std::string trace_path = dir.path() + "/t.jsonl";
  Pipe p;
  {
    GuestBuilder g;
    uint32_t w = g.sys("write", 3);
    uint32_t getpid_idx = g.sys("getpid", 0);
    g.data(16, "x");
    wasm::CodeBuilder c;
    emit_write(c, w, p.wr, 16, 1);
    emit_write(c, w, p.wr, 16, 1);
    emit_write(c, w, p.wr, 16, 1);
    c.call(getpid_idx).op(0x1A);
    RuntimeOptions o = plain_opts();
    o.trace = std::make_shared<TraceWriter>(trace_path);
    WaliRuntime rt(g.finish(c.finish()), o);
    REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  }
  std::istringstream in(testutil::read_text(trace_path));
  std::string line;
  int writes = 0, getpids = 0, other = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("syscall")) continue;
    std::string name = j["syscall"];
    if (name == "write") {
      ++writes;
      CHECK(j["ret"] == 1);
      CHECK(j["args"].size() == 3); // one slot per declared argument
    } else if (name == "getpid") {
      ++getpids;
    } else {
      ++other;
    }
    CHECK(j.contains("dur_ns"));
    CHECK(j.contains("tid"));
  }
  CHECK(writes == 3);
  CHECK(getpids == 1);
  CHECK(other == 0);
}

TEST_CASE("trace rules narrow recording to marked syscalls") {
  testutil::TempDir dir;
  std::string trace_path = dir.path() + "/t.jsonl";
  Pipe p;
  {
    GuestBuilder g;
    uint32_t w = g.sys("write", 3);
    uint32_t getpid_idx = g.sys("getpid", 0);
    g.data(16, "x");
    wasm::CodeBuilder c;
    emit_write(c, w, p.wr, 16, 1);
    c.call(getpid_idx).op(0x1A);
    RuntimeOptions o = plain_opts();
    o.policy = std::make_shared<Policy>(Policy::parse("trace write\n"));
    o.trace = std::make_shared<TraceWriter>(trace_path);
    WaliRuntime rt(g.finish(c.finish()), o);
    REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  }
  std::istringstream in(testutil::read_text(trace_path));
  std::string line;
  int writes = 0, others = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("syscall")) continue;
    (j["syscall"] == "write" ? writes : others)++;
  }
  CHECK(writes == 1);
  CHECK(others == 0);
}

TEST_CASE("catalogued but unimplemented syscalls trap at the call") {
  GuestBuilder g;
  uint32_t idx = g.sys("ptrace", 4);
  wasm::CodeBuilder c;
  c.i64_const(0).i64_const(0).i64_const(0).i64_const(0).call(idx).op(0x1A);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Trap);
  CHECK_THAT(r.trap_message, ContainsSubstring("ptrace"));
}

TEST_CASE("names outside the catalogue fail instantiation") {
  GuestBuilder g;
  uint32_t idx = g.sys("nonexistent", 1);
  wasm::CodeBuilder c;
  c.i64_const(0).call(idx).op(0x1A);
  CHECK_THROWS_WITH(WaliRuntime(g.finish(c.finish()), plain_opts()),
                    ContainsSubstring("nonexistent"));
}

TEST_CASE("exit_group surfaces its status") {
  GuestBuilder g;
  uint32_t idx = g.sys("exit_group", 1);
  wasm::CodeBuilder c;
  c.i64_const(42).call(idx).op(0x1A);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Exit);
  CHECK(r.code == 42);
}

TEST_CASE("exit status is masked to eight bits") {
  GuestBuilder g;
  uint32_t idx = g.sys("exit_group", 1);
  wasm::CodeBuilder c;
  c.i64_const(300).call(idx).op(0x1A);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Exit);
  CHECK(r.code == (300 & 0xFF));
}

TEST_CASE("a guest trap reports code 134") {
  auto bytes = testutil::trap_module();
  auto m = std::make_shared<wasm::Module>(wasm::parse_module(bytes));
  wasm::validate(*m);
  WaliRuntime rt(m, plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Trap);
  CHECK(r.code == 134);
  CHECK_FALSE(r.trap_message.empty());
}

TEST_CASE("NUL bytes in argv are rejected up front") {
  auto bytes = testutil::exit_module(0);
  auto m = std::make_shared<wasm::Module>(wasm::parse_module(bytes));
  wasm::validate(*m);
  RuntimeOptions o = plain_opts();
  o.argv = {std::string("a\0b", 3)};
  CHECK_THROWS_AS(WaliRuntime(m, o), ConfigError);
}

namespace {

// Shared scaffold for the signal tests: installs a table-dispatched handler
// for SIGUSR1 that writes "S" to the pipe.
struct SignalModule {
  GuestBuilder g;
  uint32_t sigaction_idx, kill_idx, getpid_idx, write_idx;
  uint32_t procmask_idx = 0;
  uint32_t handler;

  explicit SignalModule(int fd, bool with_procmask = false) {
    sigaction_idx = g.sys("rt_sigaction", 4);
    kill_idx = g.sys("kill", 2);
    getpid_idx = g.sys("getpid", 0);
    write_idx = g.sys("write", 3);
    if (with_procmask) procmask_idx = g.sys("rt_sigprocmask", 4);
    g.raw().add_table(3);
    g.data(200, "S");
    wasm::CodeBuilder h;
    h.i64_const(fd).i64_const(200).i64_const(1).call(write_idx).op(0x1A);
    handler = g.raw().add_func({{wasm::ValType::I32}, {}}, {}, h.finish());
    // Table slot 2: values 0 and 1 encode SIG_DFL and SIG_IGN.
    g.raw().add_element(2, {handler});
  }

  // act struct at 64: handler table index 2, no flags, empty mask.
  void emit_install(wasm::CodeBuilder& c) {
    c.i32_const(64).i32_const(2).i32_store(0);
    c.i32_const(68).i32_const(0).i32_store(0);
    c.i32_const(80).i64_const(0).i64_store(0);
    c.i64_const(10).i64_const(64).i64_const(0).i64_const(8).call(sigaction_idx).op(0x1A);
  }

  void emit_kill_self(wasm::CodeBuilder& c) {
    c.call(getpid_idx).i64_const(10).call(kill_idx).op(0x1A);
  }
};

} // namespace

TEST_CASE("a raised signal runs its handler at the next syscall boundary") {
  Pipe p;
  SignalModule sm(p.wr);
  sm.g.data(100, "E");
  wasm::CodeBuilder c;
  sm.emit_install(c);
  sm.emit_kill_self(c);
  emit_write(c, sm.write_idx, p.wr, 100, 1);
  WaliRuntime rt(sm.g.finish(c.finish()), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  CHECK(p.drain() == "SE");
}

TEST_CASE("a masked signal stays pending until the mask drops") {
  Pipe p;
  SignalModule sm(p.wr, true);
  sm.g.data(100, "A");
  sm.g.data(104, "E");
  wasm::CodeBuilder c;
  sm.emit_install(c);
  // sigset with bit 9 (SIGUSR1) at address 88.
  c.i32_const(88).i64_const(1ll << 9).i64_store(0);
  c.i64_const(0).i64_const(88).i64_const(0).i64_const(8).call(sm.procmask_idx).op(0x1A);
  sm.emit_kill_self(c);
  emit_write(c, sm.write_idx, p.wr, 100, 1); // runs with the signal pending
  c.i64_const(1).i64_const(88).i64_const(0).i64_const(8).call(sm.procmask_idx).op(0x1A);
  emit_write(c, sm.write_idx, p.wr, 104, 1);
  WaliRuntime rt(sm.g.finish(c.finish()), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  CHECK(p.drain() == "ASE");
}

TEST_CASE("ignored-by-default signals are dropped silently") {
  Pipe p;
  GuestBuilder g;
  uint32_t kill_idx = g.sys("kill", 2);
  uint32_t getpid_idx = g.sys("getpid", 0);
  uint32_t w = g.sys("write", 3);
  g.data(100, "E");
  wasm::CodeBuilder c;
  c.call(getpid_idx).i64_const(SIGCHLD).call(kill_idx).op(0x1A);
  emit_write(c, w, p.wr, 100, 1);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  CHECK(p.drain() == "E");
}

TEST_CASE("terminating-by-default signals abort the guest") {
  GuestBuilder g;
  uint32_t kill_idx = g.sys("kill", 2);
  uint32_t getpid_idx = g.sys("getpid", 0);
  wasm::CodeBuilder c;
  c.call(getpid_idx).i64_const(SIGTERM).call(kill_idx).op(0x1A);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  auto r = rt.run();
  CHECK(r.kind == RunResult::Kind::Trap);
  CHECK_THAT(r.trap_message, ContainsSubstring("TERM"));
}

TEST_CASE("mmap through the syscall surface returns fresh zeroed chunks") {
  Pipe p;
  GuestBuilder g;
  uint32_t mmap_idx = g.sys("mmap", 6);
  uint32_t w = g.sys("write", 3);
  wasm::CodeBuilder c;
  // mmap(0, 65536, PROT_READ|PROT_WRITE, MAP_PRIVATE|MAP_ANONYMOUS, -1, 0)
  c.i32_const(0)
      .i64_const(0)
      .i64_const(65536)
      .i64_const(3)
      .i64_const(0x22)
      .i64_const(-1)
      .i64_const(0)
      .call(mmap_idx)
      .i64_store(0);
  emit_write(c, w, p.wr, 0, 8);
  WaliRuntime rt(g.finish(c.finish()), plain_opts());
  REQUIRE(rt.run().kind == RunResult::Kind::Exit);
  std::string out = p.drain();
  REQUIRE(out.size() == 8);
  int64_t addr;
  std::memcpy(&addr, out.data(), 8);
  CHECK(addr > 0);
  CHECK(addr % 65536 == 0);
}
