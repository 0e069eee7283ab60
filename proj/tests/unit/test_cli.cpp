// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests driving the built command-line binary as a subprocess.
#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "support/helpers.hpp"

using Catch::Matchers::ContainsSubstring;
using testutil::cli_path;
using testutil::run_process;
using testutil::TempDir;

namespace {

// _start copies the packed argv (or env) block into memory and writes it,
// with its dynamic length, to stdout.
std::vector<uint8_t> dump_module(const std::string& which) {
  using namespace wali::wasm;
  ModuleBuilder b;
  uint32_t write_fn = b.import_func("wali", "write", testutil::sys_type(3));
  FuncType len_t{{}, {ValType::I32}};
  FuncType copy_t{{ValType::I32, ValType::I32}, {ValType::I32}};
  uint32_t len_fn = b.import_func("wali", "get_" + which + "_len", len_t);
  uint32_t copy_fn = b.import_func("wali", "copy_" + which, copy_t);
  b.add_memory(1);
  CodeBuilder c;
  c.i32_const(0).call(len_fn).i32_store(0);
  c.i32_const(64).i32_const(128).call(copy_fn).op(op::kDrop);
  c.i64_const(1).i64_const(128);
  c.i32_const(0).memarg(0x35, 0, 2); // i64.load32_u of the stored length
  c.call(write_fn).op(op::kDrop);
  uint32_t start = b.add_func({{}, {}}, {}, c.finish());
  b.export_func("_start", start);
  return b.build();
}

std::string nul_joined(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    out += p;
    out.push_back('\0');
  }
  return out;
}

} // namespace

TEST_CASE("cli run passes the guest exit status through") {
  TempDir dir;
  std::string mod = dir.file("exit7.wasm");
  testutil::write_bytes(mod, testutil::exit_module(7));
  CHECK(run_process({cli_path(), "run", mod}).exit_code == 7);

  testutil::write_bytes(mod, testutil::exit_module(0));
  CHECK(run_process({cli_path(), "run", mod}).exit_code == 0);

  testutil::write_bytes(mod, testutil::exit_module(125));
  CHECK(run_process({cli_path(), "run", mod}).exit_code == 125);
}

TEST_CASE("cli run reports traps as 134") {
  TempDir dir;
  std::string mod = dir.file("trap.wasm");
  testutil::write_bytes(mod, testutil::trap_module());
  auto r = run_process({cli_path(), "run", mod});
  CHECK(r.exit_code == 134);
  CHECK_THAT(r.err, ContainsSubstring("trap"));
}

TEST_CASE("cli run rejects broken input with status 2") {
  TempDir dir;
  std::string bad = dir.file("bad.wasm");
  testutil::write_text(bad, "this is not wasm");
  CHECK(run_process({cli_path(), "run", bad}).exit_code == 2);
  CHECK(run_process({cli_path(), "run", dir.file("missing.wasm")}).exit_code == 2);
}

TEST_CASE("cli run forwards guest stdout") {
  TempDir dir;
  std::string mod = dir.file("hello.wasm");
  testutil::write_bytes(mod, testutil::hello_module("hi there\n"));
  auto r = run_process({cli_path(), "run", mod});
  CHECK(r.exit_code == 0);
  CHECK(r.out == "hi there\n");

  testutil::write_bytes(mod, testutil::hello_module("x", 3));
  CHECK(run_process({cli_path(), "run", mod}).out == "xxx");
}

TEST_CASE("cli run hands argv to the guest") {
  TempDir dir;
  std::string mod = dir.file("argvdump.wasm");
  testutil::write_bytes(mod, dump_module("argv"));

  auto r = run_process({cli_path(), "run", mod, "--", "a", "b c"});
  CHECK(r.exit_code == 0);
  CHECK(r.out == nul_joined({mod, "a", "b c"}));

  auto r2 = run_process({cli_path(), "run", mod, "--argv0", "guestname", "--", "z"});
  CHECK(r2.out == nul_joined({"guestname", "z"}));
}

TEST_CASE("cli run hands --env entries to the guest") {
  TempDir dir;
  std::string mod = dir.file("envdump.wasm");
  testutil::write_bytes(mod, dump_module("env"));

  auto r = run_process(
      {cli_path(), "run", mod, "--env", "A=1", "--env", "B=two words"});
  CHECK(r.exit_code == 0);
  CHECK(r.out == nul_joined({"A=1", "B=two words"}));

  auto bad = run_process({cli_path(), "run", mod, "--env", "NOEQUALS"});
  CHECK(bad.exit_code == 2);
  CHECK_THAT(bad.err, ContainsSubstring("KEY=VALUE"));
}

TEST_CASE("cli run writes a syscall trace") {
  TempDir dir;
  std::string mod = dir.file("hello.wasm");
  std::string trace = dir.file("trace.jsonl");
  testutil::write_bytes(mod, testutil::hello_module("x", 2));
  auto r = run_process({cli_path(), "run", mod, "--trace", trace});
  REQUIRE(r.exit_code == 0);
  std::istringstream in(testutil::read_text(trace));
  std::string line;
  int writes = 0;
  while (std::getline(in, line))
    if (line.find("\"syscall\":\"write\"") != std::string::npos) ++writes;
  CHECK(writes == 2);
}

TEST_CASE("cli run applies policy files") {
  TempDir dir;
  std::string mod = dir.file("hello.wasm");
  testutil::write_bytes(mod, testutil::hello_module("secret"));

  std::string deny = dir.file("deny.policy");
  testutil::write_text(deny, "deny write EPERM\n");
  auto r = run_process({cli_path(), "run", mod, "--policy", deny});
  CHECK(r.exit_code == 0);
  CHECK(r.out.empty());

  std::string trap = dir.file("trap.policy");
  testutil::write_text(trap, "trap write\n");
  auto r2 = run_process({cli_path(), "run", mod, "--policy", trap});
  CHECK(r2.exit_code == 134);
  CHECK(r2.out.empty());

  std::string bad = dir.file("bad.policy");
  testutil::write_text(bad, "allow not_a_syscall\n");
  auto r3 = run_process({cli_path(), "run", mod, "--policy", bad});
  CHECK(r3.exit_code == 2);
  CHECK_THAT(r3.err, ContainsSubstring("not_a_syscall"));
}

TEST_CASE("safepoint schemes do not change observable output") {
  TempDir dir;
  std::string mod = dir.file("hello.wasm");
  testutil::write_bytes(mod, testutil::hello_module("same bytes\n"));
  std::string base;
  for (const char* scheme : {"off", "loop", "function", "all"}) {
    auto r = run_process({cli_path(), "run", mod, "--safepoint-scheme", scheme});
    REQUIRE(r.exit_code == 0);
    if (base.empty())
      base = r.out;
    else
      CHECK(r.out == base);
  }
  CHECK(base == "same bytes\n");

  auto bogus = run_process({cli_path(), "run", mod, "--safepoint-scheme", "bogus"});
  CHECK(bogus.exit_code != 0);
  CHECK(bogus.exit_code != 134);
}

TEST_CASE("cli instrument rewrites modules on disk") {
  TempDir dir;
  std::string mod = dir.file("hello.wasm");
  std::string out = dir.file("hello.sp.wasm");
  testutil::write_bytes(mod, testutil::hello_module("instrumented\n"));

  auto r = run_process(
      {cli_path(), "instrument", mod, "-o", out, "--scheme", "all"});
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.err, ContainsSubstring("safepoints"));

  // The rewritten module runs identically (already instrumented, so the
  // runner's own pass is a no-op).
  auto run_orig = run_process({cli_path(), "run", mod});
  auto run_instr = run_process({cli_path(), "run", out});
  CHECK(run_instr.exit_code == run_orig.exit_code);
  CHECK(run_instr.out == run_orig.out);

  // Instrumenting the output again changes nothing.
  std::string out2 = dir.file("hello.sp2.wasm");
  REQUIRE(run_process({cli_path(), "instrument", out, "-o", out2}).exit_code == 0);
  CHECK(testutil::read_bytes(out2) == testutil::read_bytes(out));

  CHECK(run_process({cli_path(), "instrument", mod}).exit_code != 0); // missing -o
}

TEST_CASE("cli atlas similarity emits the pinned matrix") {
  std::string tbl_dir = testutil::fixture_dir() + "/../../data/syscalls/";
  auto r = run_process({cli_path(), "atlas", "similarity", tbl_dir + "x86_64.tbl",
                        tbl_dir + "arm64.tbl", tbl_dir + "riscv64.tbl"});
  REQUIRE(r.exit_code == 0);
  CHECK_THAT(r.out, ContainsSubstring("table,x86_64,arm64,riscv64"));
  CHECK_THAT(r.out, ContainsSubstring("0.8476"));
  CHECK_THAT(r.out, ContainsSubstring("0.9906"));

  TempDir dir;
  std::string csv = dir.file("sim.csv");
  auto r2 = run_process({cli_path(), "atlas", "similarity", tbl_dir + "x86_64.tbl",
                         tbl_dir + "arm64.tbl", "--csv", csv});
  REQUIRE(r2.exit_code == 0);
  CHECK_THAT(testutil::read_text(csv), ContainsSubstring("0.8476"));

  // One table is not a comparison.
  CHECK(run_process({cli_path(), "atlas", "similarity", tbl_dir + "x86_64.tbl"})
            .exit_code != 0);
}

TEST_CASE("cli atlas profile reports frequencies and coverage") {
  std::string fx = testutil::fixture_dir();
  auto r = run_process({cli_path(), "atlas", "profile", fx + "/strace_app_a.txt",
                        fx + "/strace_app_b.txt"});
  REQUIRE(r.exit_code == 0);
  CHECK_THAT(r.out, ContainsSubstring("syscall,strace_app_a,strace_app_b,aggregate"));
  CHECK_THAT(r.out, ContainsSubstring("\nread,"));
  CHECK_THAT(r.out, ContainsSubstring("\ncoverage,"));

  auto bad = run_process({cli_path(), "atlas", "profile", fx + "/strace_app_a.txt",
                          "--registry", "bogus"});
  CHECK(bad.exit_code == 2);
}

TEST_CASE("cli requires a subcommand") {
  CHECK(run_process({cli_path()}).exit_code != 0);
}
