// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <fcntl.h>
#include <sys/stat.h>

#include "support/helpers.hpp"
#include "wali/layout.hpp"

using namespace wali;

TEST_CASE("manifest parses records and fields") {
  auto m = LayoutManifest::parse(
      "record pair size 8\n"
      "field a 0 4 u\n"
      "field b 4 4 s\n");
  const RecordDef* r = m.record("pair");
  REQUIRE(r != nullptr);
  CHECK(r->size == 8);
  REQUIRE(r->fields.size() == 2);
  CHECK(r->fields[1].is_signed);
  CHECK(m.record("nope") == nullptr);
}

TEST_CASE("manifest rejects malformed input with line numbers") {
  auto has_line = [](const char* text, const char* frag) {
    try {
      LayoutManifest::parse(text);
      return false;
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(frag) != std::string::npos;
    }
  };
  CHECK(has_line("record x size\n", "line 1"));
  CHECK(has_line("field a 0 4 u\n", "field before record"));
  CHECK(has_line("record x size 8\nfield a 0 3 u\n", "1/2/4/8"));
  CHECK(has_line("record x size 8\nfield a 6 4 u\n", "exceeds record size"));
  CHECK(has_line("record x size 8\nfield a 0 4 u\nfield a 4 4 u\n", "duplicate field"));
  CHECK(has_line("record x size 4\nrecord x size 4\n", "duplicate record"));
  CHECK(has_line("bogus\n", "unknown directive"));
}

TEST_CASE("builtin manifest matches the checked-in data file") {
  std::string pinned = testutil::read_text(std::string(WALI_FIXTURE_DIR) +
                                           "/../../data/wali_layouts.manifest");
  CHECK(LayoutManifest::builtin().serialize() == pinned);
}

TEST_CASE("builtin records have the canonical sizes") {
  const auto& m = LayoutManifest::builtin();
  CHECK(m.required("kstat").size == 144);
  CHECK(m.required("iovec").size == 8);
  CHECK(m.required("timespec").size == 16);
  CHECK(m.required("timeval").size == 16);
  CHECK(m.required("ksigaction").size == 24);
  CHECK(m.required("sigset").size == 8);
  CHECK(m.required("rusage").size == 144);
  CHECK(m.required("rlimit").size == 16);
  CHECK(m.required("pollfd").size == 8);
}

TEST_CASE("field store/load round-trips with sign extension") {
  const auto& m = LayoutManifest::builtin();
  const RecordDef& pollfd = m.required("pollfd");
  uint8_t rec[8] = {};
  m.store(rec, pollfd, "fd", static_cast<uint64_t>(-3));
  CHECK(static_cast<int64_t>(m.load(rec, pollfd, "fd")) == -3);
  m.store(rec, pollfd, "events", 0x8001);
  CHECK(m.load(rec, pollfd, "events") == 0x8001);
  CHECK_THROWS_AS(m.store(rec, pollfd, "missing", 0), ConfigError);
}

TEST_CASE("kstat marshal places stat results at manifest offsets") {
  testutil::TempDir td;
  std::string path = td.file("f.txt");
  testutil::write_text(path, "0123456789");
  struct ::stat st{};
  REQUIRE(::stat(path.c_str(), &st) == 0);

  const auto& m = LayoutManifest::builtin();
  std::vector<uint8_t> rec(m.required("kstat").size, 0xFF);
  layout::store_kstat(m, rec.data(), st);
  const RecordDef& k = m.required("kstat");
  CHECK(m.load(rec.data(), k, "size") == 10);
  CHECK(m.load(rec.data(), k, "mode") == st.st_mode);
  CHECK(m.load(rec.data(), k, "uid") == st.st_uid);
  CHECK(m.load(rec.data(), k, "ino") == st.st_ino);
  // Little-endian spot check of the size field at offset 48.
  CHECK(rec[48] == 10);
  CHECK(rec[49] == 0);
}

TEST_CASE("timespec and timeval marshal in both directions") {
  const auto& m = LayoutManifest::builtin();
  uint8_t rec[16];
  struct ::timespec ts{123, 456789};
  layout::store_timespec(m, rec, ts);
  struct ::timespec back = layout::load_timespec(m, rec);
  CHECK(back.tv_sec == 123);
  CHECK(back.tv_nsec == 456789);

  struct ::timeval tv{9, 100};
  layout::store_timeval(m, rec, tv);
  CHECK(m.load(rec, m.required("timeval"), "sec") == 9);
  CHECK(m.load(rec, m.required("timeval"), "usec") == 100);
}

TEST_CASE("sigaction record round-trips") {
  const auto& m = LayoutManifest::builtin();
  uint8_t rec[24];
  layout::GuestSigaction act;
  act.handler = 7;
  act.flags = 0x10000000;
  act.restorer = 0;
  act.mask = 0x5500;
  layout::store_ksigaction(m, rec, act);
  layout::GuestSigaction back = layout::load_ksigaction(m, rec);
  CHECK(back.handler == 7);
  CHECK(back.flags == 0x10000000);
  CHECK(back.mask == 0x5500);
}

TEST_CASE("rlimit and rusage marshal") {
  const auto& m = LayoutManifest::builtin();
  uint8_t rl_rec[16];
  struct ::rlimit rl{100, 200};
  layout::store_rlimit(m, rl_rec, rl);
  struct ::rlimit back = layout::load_rlimit(m, rl_rec);
  CHECK(back.rlim_cur == 100);
  CHECK(back.rlim_max == 200);

  std::vector<uint8_t> ru_rec(144);
  struct ::rusage ru{};
  ru.ru_maxrss = 4096;
  ru.ru_nvcsw = 17;
  layout::store_rusage(m, ru_rec.data(), ru);
  CHECK(m.load(ru_rec.data(), m.required("rusage"), "maxrss") == 4096);
  CHECK(m.load(ru_rec.data(), m.required("rusage"), "nvcsw") == 17);
}

TEST_CASE("iovec and pollfd loads read guest fields") {
  const auto& m = LayoutManifest::builtin();
  uint8_t io_rec[8];
  m.store(io_rec, m.required("iovec"), "base", 0x1000);
  m.store(io_rec, m.required("iovec"), "len", 32);
  layout::GuestIovec io = layout::load_iovec(m, io_rec);
  CHECK(io.base == 0x1000);
  CHECK(io.len == 32);

  uint8_t pf_rec[8];
  m.store(pf_rec, m.required("pollfd"), "fd", 5);
  m.store(pf_rec, m.required("pollfd"), "events", POLLIN);
  struct ::pollfd pf = layout::load_pollfd(m, pf_rec);
  CHECK(pf.fd == 5);
  CHECK(pf.events == POLLIN);
  layout::store_pollfd_revents(m, pf_rec, POLLOUT);
  CHECK(m.load(pf_rec, m.required("pollfd"), "revents") == POLLOUT);
}

TEST_CASE("flag maps translate both directions") {
  FlagMap fm;
  fm.map_bit(0x1, 0x10);
  fm.map_bit(0x2, 0x20);
  CHECK(fm.to_host(0x3) == 0x30);
  CHECK(fm.to_virtual(0x30) == 0x3);
  // Unmapped bits pass through unchanged.
  CHECK(fm.to_host(0x5) == 0x14);
}

TEST_CASE("flag maps handle swapped pairs without loss") {
  FlagMap fm;
  fm.map_bit(0x4000, 0x10000);
  fm.map_bit(0x10000, 0x4000);
  CHECK(fm.to_host(0x4000) == 0x10000);
  CHECK(fm.to_host(0x10000) == 0x4000);
  CHECK(fm.to_host(0x14000) == 0x14000);
  CHECK(fm.to_virtual(fm.to_host(0x4000)) == 0x4000);
}

TEST_CASE("host flag profile is identity on x86-64") {
  auto maps = FlagMaps::for_host();
  CHECK(maps.file_status.to_host(O_CREAT | O_RDWR) ==
        static_cast<uint64_t>(O_CREAT | O_RDWR));
  CHECK(maps.mmap_prot.to_host(5) == 5);
}

TEST_CASE("arm64 profile remaps direct/largefile-class open flags") {
  auto maps = FlagMaps::arm64_profile();
  // Canonical O_DIRECTORY (x86-64 value 0x10000) maps to arm64's 0x4000.
  CHECK(maps.file_status.to_host(0x10000) == 0x4000);
  CHECK(maps.file_status.to_virtual(0x4000) == 0x10000);
  // Bits outside the remapped set are stable.
  CHECK(maps.file_status.to_host(O_CREAT) == static_cast<uint64_t>(O_CREAT));
}
