// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <fcntl.h>
#include <unistd.h>

#include "support/helpers.hpp"
#include "wali/memory_pool.hpp"
#include "wali/wasm/builder.hpp"
#include "wali/wasm/interpreter.hpp"
#include "wali/wasm/parser.hpp"
#include "wali/wasm/validator.hpp"

using namespace wali;

namespace {

constexpr uint64_t kChunk = kWasmPageSize;
constexpr uint64_t kAnonRw = guest::kMapPrivate | guest::kMapAnonymous;
constexpr uint64_t kRw = guest::kProtRead | guest::kProtWrite;

struct PoolFixture {
  std::unique_ptr<EngineInstance> inst;
  std::unique_ptr<MmapPool> pool;
  std::vector<std::string> warnings;

  explicit PoolFixture(uint32_t min_pages = 2, uint32_t max_pages = 32) {
    wasm::ModuleBuilder b;
    b.add_memory(min_pages, max_pages);
    b.export_memory("memory");
    auto bytes = b.build();
    auto m = std::make_shared<wasm::Module>(wasm::parse_module(bytes));
    wasm::validate(*m);
    inst = instantiate(m, {}, {});
    pool = std::make_unique<MmapPool>(
        inst->memory(), inst->memory().byte_size(), FlagMap{}, FlagMap{},
        [this](const std::string& w) { warnings.push_back(w); });
  }

  EngineMemory& mem() { return inst->memory(); }
};

} // namespace

TEST_CASE("anonymous mmap returns aligned chunks and is writable") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, 1000, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  CHECK(static_cast<uint64_t>(a) % kChunk == 0);
  CHECK(static_cast<uint64_t>(a) >= fx.pool->pool_base());

  uint8_t* p = translate(fx.mem(), static_cast<uint64_t>(a), 1000);
  std::memset(p, 0x7E, 1000);
  CHECK(p[999] == 0x7E);

  int64_t b = fx.pool->mmap(0, kChunk + 1, kRw, kAnonRw, -1, 0);
  REQUIRE(b > 0);
  // Second region starts past the first's rounded extent.
  CHECK(static_cast<uint64_t>(b) >= static_cast<uint64_t>(a) + kChunk);
  CHECK(fx.pool->active_regions() == 2);
  CHECK(fx.pool->active_bytes() == 3 * kChunk);
}

TEST_CASE("mmap argument validation") {
  PoolFixture fx;
  CHECK(fx.pool->mmap(0, 0, kRw, kAnonRw, -1, 0) == -EINVAL);
  CHECK(fx.pool->mmap(0, UINT64_MAX - 10, kRw, kAnonRw, -1, 0) == -EINVAL);
  CHECK(fx.pool->mmap(0, 100, kRw, guest::kMapPrivate, -1, 0) == -EBADF);
}

TEST_CASE("munmap zero-fills and makes the range reusable") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  int64_t b = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  REQUIRE(b > 0);
  uint8_t* pa = translate(fx.mem(), static_cast<uint64_t>(a), kChunk);
  std::memset(pa, 0xAA, kChunk);

  CHECK(fx.pool->munmap(static_cast<uint64_t>(a), kChunk) == 0);
  // Freed pages read back as zero, not as stale data and not as a fault.
  pa = translate(fx.mem(), static_cast<uint64_t>(a), kChunk);
  CHECK(pa[0] == 0);
  CHECK(pa[kChunk - 1] == 0);

  // First-fit reuse of the hole.
  int64_t c = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  CHECK(c == a);
}

TEST_CASE("munmap validates alignment and exact region match") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, 2 * kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a) + 5, kChunk) == -EINVAL);
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a), 0) == -EINVAL);
  // Partial unmap is rejected.
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a), kChunk) == -EINVAL);
  // Unknown region is rejected.
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a) + 8 * kChunk, kChunk) == -EINVAL);
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a), 2 * kChunk) == 0);
}

TEST_CASE("MAP_FIXED honors free ranges only") {
  PoolFixture fx;
  uint64_t base = fx.pool->pool_base();
  uint64_t target = base + 4 * kChunk;
  int64_t a = fx.pool->mmap(target, kChunk, kRw, kAnonRw | guest::kMapFixed, -1, 0);
  CHECK(static_cast<uint64_t>(a) == target);
  // Occupied -> -EEXIST rather than silent remap.
  CHECK(fx.pool->mmap(target, kChunk, kRw, kAnonRw | guest::kMapFixed, -1, 0) ==
        -EEXIST);
  CHECK(fx.pool->mmap(target + 1, kChunk, kRw, kAnonRw | guest::kMapFixed, -1, 0) ==
        -EINVAL);
  CHECK(fx.pool->mmap(fx.pool->pool_end() + kChunk, kChunk, kRw,
                      kAnonRw | guest::kMapFixed, -1, 0) == -ENOMEM);
}

TEST_CASE("file-backed mappings expose file bytes") {
  PoolFixture fx;
  testutil::TempDir td;
  std::string path = td.file("data.bin");
  std::vector<uint8_t> content(3 * kChunk);
  for (size_t i = 0; i < content.size(); ++i)
    content[i] = static_cast<uint8_t>(i * 131 + 7);
  testutil::write_bytes(path, content);

  int fd = ::open(path.c_str(), O_RDONLY);
  REQUIRE(fd >= 0);
  int64_t a = fx.pool->mmap(0, 2 * kChunk + 100, guest::kProtRead,
                            guest::kMapPrivate, fd, kChunk);
  ::close(fd); // pool keeps its own descriptor for later operations
  REQUIRE(a > 0);
  const uint8_t* p = translate(fx.mem(), static_cast<uint64_t>(a), 2 * kChunk + 100);
  CHECK(std::memcmp(p, content.data() + kChunk, 2 * kChunk) == 0);
  CHECK(fx.pool->munmap(static_cast<uint64_t>(a), 2 * kChunk + 100) == 0);
}

TEST_CASE("mremap grows in place when the next chunk is free") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  uint8_t* p = translate(fx.mem(), static_cast<uint64_t>(a), kChunk);
  std::memset(p, 0x5A, kChunk);
  int64_t r = fx.pool->mremap(static_cast<uint64_t>(a), kChunk, 2 * kChunk, 0);
  CHECK(r == a);
  p = translate(fx.mem(), static_cast<uint64_t>(a), 2 * kChunk);
  CHECK(p[0] == 0x5A);
  CHECK(p[kChunk - 1] == 0x5A);
  CHECK(p[kChunk] == 0); // fresh extension is zeroed
}

TEST_CASE("mremap moves when blocked and MREMAP_MAYMOVE is set") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  int64_t blocker = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  REQUIRE(blocker == a + static_cast<int64_t>(kChunk));
  uint8_t* p = translate(fx.mem(), static_cast<uint64_t>(a), kChunk);
  for (uint64_t i = 0; i < kChunk; ++i) p[i] = static_cast<uint8_t>(i);

  // Without MAYMOVE the grow fails.
  CHECK(fx.pool->mremap(static_cast<uint64_t>(a), kChunk, 3 * kChunk, 0) == -ENOMEM);
  int64_t moved = fx.pool->mremap(static_cast<uint64_t>(a), kChunk, 3 * kChunk,
                                  guest::kMremapMayMove);
  REQUIRE(moved > 0);
  CHECK(moved != a);
  uint8_t* q = translate(fx.mem(), static_cast<uint64_t>(moved), 3 * kChunk);
  for (uint64_t i = 0; i < 256; ++i) REQUIRE(q[i] == static_cast<uint8_t>(i));
  // The old range reads as zero after the move.
  p = translate(fx.mem(), static_cast<uint64_t>(a), kChunk);
  CHECK(p[1] == 0);
  // MREMAP_FIXED is not supported.
  CHECK(fx.pool->mremap(static_cast<uint64_t>(moved), 3 * kChunk, kChunk,
                        guest::kMremapFixed) == -EINVAL);
}

TEST_CASE("mremap shrink releases the tail") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, 3 * kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  uint8_t* p = translate(fx.mem(), static_cast<uint64_t>(a), 3 * kChunk);
  std::memset(p, 0x33, 3 * kChunk);
  int64_t r = fx.pool->mremap(static_cast<uint64_t>(a), 3 * kChunk, kChunk, 0);
  CHECK(r == a);
  CHECK(fx.pool->active_bytes() == kChunk);
  // Tail is zero and immediately reusable.
  p = translate(fx.mem(), static_cast<uint64_t>(a) + kChunk, kChunk);
  CHECK(p[0] == 0);
  int64_t b = fx.pool->mmap(0, 2 * kChunk, kRw, kAnonRw, -1, 0);
  CHECK(b == a + static_cast<int64_t>(kChunk));
}

TEST_CASE("pool reports -ENOMEM exactly at the page limit") {
  PoolFixture fx(2, 8); // 6 pages of pool headroom past the initial 2
  uint64_t got = 0;
  int64_t r = 0;
  while ((r = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0)) > 0) ++got;
  CHECK(r == -ENOMEM);
  CHECK(got == 6);
  CHECK(fx.mem().pages() == 8);
}

TEST_CASE("MAP_SHARED degrades with a warning") {
  PoolFixture fx;
  int64_t a = fx.pool->mmap(0, kChunk, kRw,
                            guest::kMapShared | guest::kMapAnonymous, -1, 0);
  CHECK(a > 0);
  REQUIRE(fx.warnings.size() == 1);
  CHECK(fx.warnings[0].find("MAP_SHARED") != std::string::npos);
}

TEST_CASE("brk reports the high-water bump pointer") {
  PoolFixture fx;
  uint64_t before = fx.pool->brk();
  CHECK(before == fx.pool->pool_base());
  int64_t a = fx.pool->mmap(0, 2 * kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(a > 0);
  CHECK(fx.pool->brk() == static_cast<uint64_t>(a) + 2 * kChunk);
  // Freeing does not roll the nominal break backwards once others allocate.
  int64_t b = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  REQUIRE(b > 0);
  fx.pool->munmap(static_cast<uint64_t>(a), 2 * kChunk);
  CHECK(fx.pool->brk() == static_cast<uint64_t>(b) + kChunk);
}

TEST_CASE("set_base applies before first allocation only") {
  PoolFixture fx;
  uint64_t new_base = fx.pool->pool_base() + 4 * kChunk;
  fx.pool->set_base(new_base);
  CHECK(fx.pool->pool_base() == new_base);
  int64_t a = fx.pool->mmap(0, kChunk, kRw, kAnonRw, -1, 0);
  CHECK(static_cast<uint64_t>(a) == new_base);
  fx.pool->set_base(new_base + 8 * kChunk);
  CHECK(fx.pool->pool_base() == new_base);
  CHECK_FALSE(fx.warnings.empty());
}

TEST_CASE("translate rejects out-of-bounds guest ranges") {
  PoolFixture fx;
  uint64_t size = fx.mem().byte_size();
  CHECK_NOTHROW(translate(fx.mem(), 0, size));
  CHECK_THROWS_AS(translate(fx.mem(), 0, size + 1), Trap);
  CHECK_THROWS_AS(translate(fx.mem(), size, 1), Trap);
  CHECK_THROWS_AS(translate(fx.mem(), UINT64_MAX, 1), Trap);
}

TEST_CASE("guest C strings are bounded and NUL-terminated") {
  PoolFixture fx;
  uint8_t* p = translate(fx.mem(), 100, 6);
  std::memcpy(p, "hello", 6);
  CHECK(read_guest_cstring(fx.mem(), 100) == "hello");
  // Unterminated region up to max length traps.
  std::vector<uint8_t> junk(5000, 'x');
  std::memcpy(translate(fx.mem(), 200, junk.size()), junk.data(), junk.size());
  CHECK_THROWS_AS(read_guest_cstring(fx.mem(), 200), Trap);
}
