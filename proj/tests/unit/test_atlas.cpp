// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "support/helpers.hpp"
#include "wali/atlas.hpp"

using namespace wali;
using namespace wali::atlas;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("syscall table parsing handles the kernel tbl format") {
  std::string text =
      "# this is a comment\n"
      "\n"
      "0\tcommon\tread\t\t\tsys_read\n"
      "1\tcommon\twrite\t\t\tsys_write\n"
      "2\t64\topen\t\t\tsys_open\n"
      "3\tx32\tweird\t\t\tcompat_sys_weird\n"
      "4 common close sys_close # trailing comment\n";

  SECTION("empty filter keeps every abi") {
    auto s = parse_syscall_tbl(text, {});
    CHECK(s == std::set<std::string>{"read", "write", "open", "weird", "close"});
  }
  SECTION("abi filter drops rows outside the set") {
    auto s = parse_syscall_tbl(text, {"common", "64"});
    CHECK(s == std::set<std::string>{"read", "write", "open", "close"});
    CHECK_FALSE(s.count("weird"));
  }
  SECTION("two-column minimal rows bypass the abi filter") {
    auto s = parse_syscall_tbl("7 poll\n8 lseek\n", {"common"});
    CHECK(s == std::set<std::string>{"poll", "lseek"});
  }
}

TEST_CASE("syscall table parse errors carry line numbers") {
  CHECK_THROWS_WITH(parse_syscall_tbl("read common 0\n", {}),
                    ContainsSubstring("line 1"));
  CHECK_THROWS_WITH(parse_syscall_tbl("0 common read\nnope\n", {}),
                    ContainsSubstring("line 2"));
  CHECK_THROWS_WITH(parse_syscall_tbl("0 common read\n\n\n9\n", {}),
                    ContainsSubstring("line 4"));
}

TEST_CASE("abi inference from table filenames") {
  auto x86 = infer_abis("data/syscalls/x86_64.tbl");
  REQUIRE(x86.has_value());
  CHECK(*x86 == std::set<std::string>{"common", "64"});

  auto arm = infer_abis("ARM64.tbl");
  REQUIRE(arm.has_value());
  CHECK(arm->count("renameat") == 1);
  CHECK(arm->count("memfd_secret") == 1);
  CHECK(infer_abis("aarch64_syscalls.tbl").has_value());

  auto riscv = infer_abis("/tmp/riscv64.tbl");
  REQUIRE(riscv.has_value());
  CHECK(riscv->count("riscv") == 1);

  CHECK_FALSE(infer_abis("mystery.tbl").has_value());
  CHECK(table_label("/a/b/x86_64.tbl") == "x86_64");
}

TEST_CASE("jaccard similarity on hand-checked sets") {
  std::set<std::string> a{"read", "write", "open"};
  std::set<std::string> b{"write", "open", "close"};
  CHECK_THAT(jaccard(a, b), WithinAbs(0.5, 1e-12));
  CHECK_THAT(jaccard(a, a), WithinAbs(1.0, 1e-12));
  CHECK_THAT(jaccard(a, {}), WithinAbs(0.0, 1e-12));
  CHECK_THAT(jaccard({}, {}), WithinAbs(1.0, 1e-12));
}

TEST_CASE("similarity matrix is symmetric with a unit diagonal") {
  std::mt19937 rng(1234);
  std::vector<SyscallTable> tables;
  for (int t = 0; t < 5; ++t) {
    SyscallTable tab;
    tab.name = "t" + std::to_string(t);
    std::uniform_int_distribution<int> pick(0, 60);
    for (int k = 0; k < 40; ++k) tab.syscalls.insert("sc" + std::to_string(pick(rng)));
    tables.push_back(std::move(tab));
  }
  auto m = similarity_matrix(tables);
  for (size_t i = 0; i < tables.size(); ++i) {
    CHECK(m[i][i] == 1.0);
    for (size_t j = 0; j < tables.size(); ++j) {
      CHECK(m[i][j] == m[j][i]);
      CHECK(m[i][j] >= 0.0);
      CHECK(m[i][j] <= 1.0);
    }
  }
}

TEST_CASE("pinned kernel tables reproduce the recorded similarities") {
  std::string dir = testutil::fixture_dir() + "/../../data/syscalls/";
  auto x86 = load_syscall_table(dir + "x86_64.tbl");
  auto arm = load_syscall_table(dir + "arm64.tbl");
  auto riscv = load_syscall_table(dir + "riscv64.tbl");
  REQUIRE(x86.syscalls.size() > 300);
  REQUIRE(arm.syscalls.size() > 250);
  REQUIRE(riscv.syscalls.size() > 250);

  CHECK_THAT(jaccard(x86.syscalls, arm.syscalls), WithinAbs(0.8476, 5e-5));
  CHECK_THAT(jaccard(x86.syscalls, riscv.syscalls), WithinAbs(0.8404, 5e-5));
  CHECK_THAT(jaccard(arm.syscalls, riscv.syscalls), WithinAbs(0.9906, 5e-5));

  auto m = similarity_matrix({x86, arm, riscv});
  std::ostringstream os;
  write_similarity_csv(os, {x86, arm, riscv}, m);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "table,x86_64,arm64,riscv64");
  std::getline(is, line);
  CHECK_THAT(line, ContainsSubstring("x86_64,1.0000,0.8476,0.8404"));
}

TEST_CASE("strace summary parsing") {
  SECTION("standard five-plus column layout") {
    auto p = parse_strace_summary(testutil::read_text(testutil::fixture_dir() +
                                                      "/strace_app_a.txt"));
    CHECK(p.size() == 8);
    CHECK(p.at("mmap") == 35);
    CHECK(p.at("openat") == 10); // errors column must not displace calls
    CHECK(p.at("execve") == 1);
    CHECK(p.at("faccessat2") == 2);
    CHECK_FALSE(p.count("total"));
    CHECK_FALSE(p.count("syscall"));
  }
  SECTION("duplicate rows accumulate") {
    auto p = parse_strace_summary(testutil::read_text(testutil::fixture_dir() +
                                                      "/strace_app_b.txt"));
    CHECK(p.at("mmap") == 12); // two rows of 6, as strace -f emits per pid
    CHECK(p.at("read") == 40);
  }
  SECTION("drifted four-column layout falls back to the nearest integer") {
    auto p = parse_strace_summary(" 10.00  0.000010   35   mmap\n");
    CHECK(p.at("mmap") == 35);
  }
  SECTION("garbage lines are skipped") {
    auto p = parse_strace_summary("------\n% time calls syscall\n\n 1.0 x y 3zz\n");
    CHECK(p.empty());
  }
}

TEST_CASE("profile report log-normalizes per app and sorts by aggregate") {
  AppProfile a{"appa", {{"read", 7}, {"write", 3}}};
  AppProfile b{"appb", {{"read", 1}}};
  auto rep = profile_report({a, b}, {"read"});

  REQUIRE(rep.apps == std::vector<std::string>{"appa", "appb"});
  REQUIRE(rep.rows.size() == 2);

  // Hottest syscall of each app normalizes to 1.0.
  CHECK(rep.rows[0].syscall == "read");
  CHECK_THAT(rep.rows[0].freq[0], WithinAbs(1.0, 1e-12));
  CHECK_THAT(rep.rows[0].freq[1], WithinAbs(1.0, 1e-12));
  CHECK_THAT(rep.rows[0].aggregate, WithinAbs(2.0, 1e-12));

  double expect_write = std::log1p(3.0) / std::log1p(7.0);
  CHECK(rep.rows[1].syscall == "write");
  CHECK_THAT(rep.rows[1].freq[0], WithinAbs(expect_write, 1e-12));
  CHECK_THAT(rep.rows[1].freq[1], WithinAbs(0.0, 1e-12));
  CHECK_THAT(rep.rows[1].aggregate, WithinAbs(expect_write, 1e-12));

  REQUIRE(rep.coverage.size() == 2);
  CHECK_THAT(rep.coverage[0], WithinAbs(0.5, 1e-12)); // read yes, write no
  CHECK_THAT(rep.coverage[1], WithinAbs(1.0, 1e-12));
}

TEST_CASE("profile report edge cases") {
  AppProfile empty{"idle", {}};
  auto rep = profile_report({empty}, {"read"});
  CHECK(rep.rows.empty());
  REQUIRE(rep.coverage.size() == 1);
  CHECK(rep.coverage[0] == 1.0);

  // Ties sort by name for a stable CSV.
  AppProfile t{"t", {{"b", 5}, {"a", 5}}};
  auto rep2 = profile_report({t}, {});
  REQUIRE(rep2.rows.size() == 2);
  CHECK(rep2.rows[0].syscall == "a");
  CHECK(rep2.rows[1].syscall == "b");
  CHECK(rep2.coverage[0] == 0.0);
}

TEST_CASE("profile csv shape") {
  AppProfile a{"appa", {{"read", 7}, {"write", 3}}};
  AppProfile b{"appb", {{"read", 1}}};
  auto rep = profile_report({a, b}, {"read", "write"});
  std::ostringstream os;
  write_profile_csv(os, rep);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "syscall,appa,appb,aggregate");
  std::getline(is, line);
  CHECK_THAT(line, ContainsSubstring("read,1.0000,1.0000,2.0000"));
  std::getline(is, line);
  CHECK_THAT(line, ContainsSubstring("write,"));
  std::getline(is, line);
  CHECK(line == "coverage,1.0000,1.0000,");
}

TEST_CASE("load_syscall_table reports unreadable paths") {
  CHECK_THROWS_AS(load_syscall_table("/nonexistent/archfile.tbl"), ConfigError);
  CHECK_THROWS_AS(load_strace_summary("/nonexistent/app.txt"), ConfigError);
}
