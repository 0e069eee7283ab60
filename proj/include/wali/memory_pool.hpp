// SPDX-License-Identifier: Apache-2.0
//
// Guest address translation and the mmap/munmap/mremap/brk/mprotect family
// over linear memory. Mappings live in a pool above the module's data region:
// 64KiB-aligned starts, bump allocation with first-fit reuse of freed holes,
// no coalescing. Native mappings are placed with MAP_FIXED onto the
// translated host range; freed ranges are re-established as zero-filled
// anonymous pages so every guest load inside linear memory stays valid.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <cerrno>
#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include "wali/bridge.hpp"
#include "wali/common.hpp"
#include "wali/layout.hpp"

namespace wali {

/// Guest offset -> host pointer, valid for exactly `len` bytes.
/// Throws Trap when the range leaves the current linear memory.
inline uint8_t* translate(EngineMemory& mem, uint64_t addr, uint64_t len) {
  uint64_t size = mem.byte_size();
  if (addr > size || len > size - addr)
    throw Trap(format_msg("out of bounds guest address 0x%llx (+%llu)",
                          static_cast<unsigned long long>(addr),
                          static_cast<unsigned long long>(len)));
  return mem.base() + addr;
}

/// Reads a NUL-terminated guest string with bounds checking.
inline std::string read_guest_cstring(EngineMemory& mem, uint64_t addr,
                                      uint64_t max_len = 4096) {
  uint64_t size = mem.byte_size();
  if (addr >= size) throw Trap("out of bounds guest string");
  std::string out;
  for (uint64_t i = addr; i < size && out.size() < max_len; ++i) {
    char c = static_cast<char>(mem.base()[i]);
    if (c == '\0') return out;
    out.push_back(c);
  }
  throw Trap("unterminated guest string");
}

// Canonical (x86-64) mmap flag values as seen from the guest.
namespace guest {
constexpr uint64_t kMapShared = 0x01;
constexpr uint64_t kMapPrivate = 0x02;
constexpr uint64_t kMapFixed = 0x10;
constexpr uint64_t kMapAnonymous = 0x20;
constexpr uint64_t kMremapMayMove = 0x01;
constexpr uint64_t kMremapFixed = 0x02;
constexpr uint64_t kProtRead = 0x1;
constexpr uint64_t kProtWrite = 0x2;
constexpr uint64_t kProtExec = 0x4;
} // namespace guest

class MmapPool {
public:
  static constexpr uint64_t kChunk = kWasmPageSize;

  using WarnFn = std::function<void(const std::string&)>;

  /// The pool spans [pool_base, max_pages * 64KiB). pool_base is rounded up
  /// to a chunk boundary.
  MmapPool(EngineMemory& mem, uint64_t pool_base, FlagMap prot_map = {},
           FlagMap flags_map = {}, WarnFn warn = {})
      : mem_(mem),
        base_(align_up(pool_base)),
        end_(static_cast<uint64_t>(mem.max_pages()) * kWasmPageSize),
        next_(base_),
        prot_map_(std::move(prot_map)),
        flags_map_(std::move(flags_map)),
        warn_(std::move(warn)) {}

  ~MmapPool() {
    for (auto& [off, r] : regions_)
      if (r.fd >= 0) ::close(r.fd);
  }

  MmapPool(const MmapPool&) = delete;
  MmapPool& operator=(const MmapPool&) = delete;

  /// Moves the pool base. Honored only before the first allocation.
  void set_base(uint64_t new_base) {
    std::lock_guard<std::mutex> lock(mu_);
    uint64_t b = align_up(new_base);
    if (!regions_.empty() || next_ != base_) {
      warn("set_mmap_base ignored: pool already active");
      return;
    }
    if (b >= end_) {
      warn("set_mmap_base ignored: base beyond pool end");
      return;
    }
    base_ = next_ = b;
  }

  int64_t mmap(uint64_t addr, uint64_t length, uint64_t prot, uint64_t flags,
               int64_t fd, uint64_t offset) {
    std::lock_guard<std::mutex> lock(mu_);
    if (length == 0) return -EINVAL;
    bool anonymous = (flags & guest::kMapAnonymous) != 0;
    if (!anonymous && fd < 0) return -EBADF;
    uint64_t need = align_up(length);
    if (need == 0) return -EINVAL; // length overflowed the rounding

    uint64_t want = 0;
    if (flags & guest::kMapFixed) {
      if (addr % kChunk != 0) return -EINVAL;
      if (addr < base_ || addr + need > end_ || addr + need < addr) return -ENOMEM;
      if (!range_free(addr, need)) return -EEXIST;
      claim_range(addr, need);
      want = addr;
    } else {
      if (!take_free(need, &want)) {
        if (next_ + need > end_ || next_ + need < next_) return -ENOMEM;
        want = next_;
        next_ += need;
      }
    }
    if (!ensure_committed(want + need)) {
      release_range(want, need);
      return -ENOMEM;
    }

    int host_prot = host_prot_from(prot);
    if (flags_map_.to_host(flags) & guest::kMapShared)
      warn("MAP_SHARED degraded to MAP_PRIVATE");

    uint8_t* dst = mem_.base() + want;
    Region region;
    region.len = need;
    region.prot = host_prot;
    if (anonymous) {
      void* r = ::mmap(dst, need, host_prot,
                       MAP_PRIVATE | MAP_ANONYMOUS | MAP_FIXED, -1, 0);
      if (r == MAP_FAILED) {
        int err = errno;
        release_range(want, need);
        return -err;
      }
    } else {
      void* r = ::mmap(dst, length, host_prot, MAP_PRIVATE | MAP_FIXED,
                       static_cast<int>(fd), static_cast<off_t>(offset));
      if (r == MAP_FAILED) {
        int err = errno;
        release_range(want, need);
        return -err;
      }
      region.file_backed = true;
      region.file_off = offset;
      region.fd = ::fcntl(static_cast<int>(fd), F_DUPFD_CLOEXEC, 0);
    }
    regions_[want] = region;
    return static_cast<int64_t>(want);
  }

  int64_t munmap(uint64_t addr, uint64_t length) {
    std::lock_guard<std::mutex> lock(mu_);
    if (length == 0 || addr % kChunk != 0) return -EINVAL;
    uint64_t need = align_up(length);
    auto it = regions_.find(addr);
    if (it == regions_.end() || it->second.len != need) return -EINVAL;
    restore_zero_pages(addr, need);
    if (it->second.fd >= 0) ::close(it->second.fd);
    regions_.erase(it);
    holes_.push_back({addr, need});
    return 0;
  }

  int64_t mremap(uint64_t old_addr, uint64_t old_len, uint64_t new_len,
                 uint64_t flags) {
    std::lock_guard<std::mutex> lock(mu_);
    if (flags & guest::kMremapFixed) return -EINVAL;
    if (old_len == 0 || new_len == 0 || old_addr % kChunk != 0) return -EINVAL;
    uint64_t old_need = align_up(old_len);
    uint64_t new_need = align_up(new_len);
    auto it = regions_.find(old_addr);
    if (it == regions_.end() || it->second.len != old_need) return -EINVAL;
    if (new_need == old_need) return static_cast<int64_t>(old_addr);

    if (new_need < old_need) {
      restore_zero_pages(old_addr + new_need, old_need - new_need);
      holes_.push_back({old_addr + new_need, old_need - new_need});
      it->second.len = new_need;
      return static_cast<int64_t>(old_addr);
    }

    uint64_t extra = new_need - old_need;
    uint64_t ext_at = old_addr + old_need;
    if (range_free(ext_at, extra)) {
      claim_range(ext_at, extra);
      if (!ensure_committed(ext_at + extra)) {
        release_range(ext_at, extra);
        return -ENOMEM;
      }
      if (!map_extension(it->second, old_addr, old_need, extra)) {
        release_range(ext_at, extra);
        return -ENOMEM;
      }
      it->second.len = new_need;
      return static_cast<int64_t>(old_addr);
    }

    if (!(flags & guest::kMremapMayMove)) return -ENOMEM;
    uint64_t dst = 0;
    if (!take_free(new_need, &dst)) {
      if (next_ + new_need > end_ || next_ + new_need < next_) return -ENOMEM;
      dst = next_;
      next_ += new_need;
    }
    if (!ensure_committed(dst + new_need)) {
      release_range(dst, new_need);
      return -ENOMEM;
    }
    void* r = ::mremap(mem_.base() + old_addr, old_need, old_need,
                       MREMAP_MAYMOVE | MREMAP_FIXED, mem_.base() + dst);
    if (r == MAP_FAILED) {
      int err = errno;
      release_range(dst, new_need);
      return -err;
    }
    restore_zero_pages(old_addr, old_need);
    Region moved = it->second;
    regions_.erase(it);
    holes_.push_back({old_addr, old_need});
    if (!map_extension(moved, dst, old_need, new_need - old_need)) {
      moved.len = old_need;
      regions_[dst] = moved;
      return -ENOMEM;
    }
    moved.len = new_need;
    regions_[dst] = moved;
    return static_cast<int64_t>(dst);
  }

  int64_t mprotect(uint64_t addr, uint64_t length, uint64_t prot) {
    std::lock_guard<std::mutex> lock(mu_);
    if (length == 0) return 0;
    if (addr % 4096 != 0) return -EINVAL;
    uint64_t size = mem_.byte_size();
    if (addr > size || length > size - addr) return -ENOMEM;
    if (::mprotect(mem_.base() + addr, length, host_prot_from(prot)) != 0)
      return -errno;
    return 0;
  }

  /// Nominal program break: reported, never moved.
  uint64_t brk() const {
    std::lock_guard<std::mutex> lock(mu_);
    return next_;
  }

  uint64_t pool_base() const {
    std::lock_guard<std::mutex> lock(mu_);
    return base_;
  }
  uint64_t pool_end() const { return end_; }

  size_t active_regions() const {
    std::lock_guard<std::mutex> lock(mu_);
    return regions_.size();
  }

  uint64_t active_bytes() const {
    std::lock_guard<std::mutex> lock(mu_);
    uint64_t total = 0;
    for (auto& [off, r] : regions_) total += r.len;
    return total;
  }

  struct RegionView {
    uint64_t off;
    uint64_t len;
    bool file_backed;
  };

  std::vector<RegionView> regions() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<RegionView> out;
    out.reserve(regions_.size());
    for (auto& [off, r] : regions_) out.push_back({off, r.len, r.file_backed});
    return out;
  }

private:
  struct Region {
    uint64_t len = 0;
    int prot = PROT_READ | PROT_WRITE;
    bool file_backed = false;
    int fd = -1;
    uint64_t file_off = 0;
  };

  struct Hole {
    uint64_t off;
    uint64_t len;
  };

  static uint64_t align_up(uint64_t v) { return (v + kChunk - 1) & ~(kChunk - 1); }

  void warn(const std::string& msg) {
    if (warn_) warn_(msg);
  }

  // PROT_EXEC is stripped: guest pages are data, never host-executable.
  int host_prot_from(uint64_t guest_prot) const {
    uint64_t p = prot_map_.to_host(guest_prot);
    int out = 0;
    if (p & guest::kProtRead) out |= PROT_READ;
    if (p & guest::kProtWrite) out |= PROT_WRITE;
    return out;
  }

  /// Grows linear memory so [0, end_off) is committed. False when the module
  /// maximum would be exceeded.
  bool ensure_committed(uint64_t end_off) {
    uint64_t size = mem_.byte_size();
    if (end_off <= size) return true;
    uint64_t pages = (end_off - size + kWasmPageSize - 1) / kWasmPageSize;
    return mem_.grow(static_cast<uint32_t>(pages)) >= 0;
  }

  /// Re-establishes zero-filled read-write anonymous pages so subsequent
  /// guest access neither faults nor sees stale bytes.
  void restore_zero_pages(uint64_t off, uint64_t len) {
    ::mmap(mem_.base() + off, len, PROT_READ | PROT_WRITE,
           MAP_PRIVATE | MAP_ANONYMOUS | MAP_FIXED | MAP_NORESERVE, -1, 0);
  }

  /// Extends a region in place by `extra` bytes starting at rel offset
  /// `old_need`. Anonymous growth reuses the freshly grown zero pages;
  /// file growth maps the next file span through the duplicated fd.
  bool map_extension(const Region& r, uint64_t at, uint64_t old_need,
                     uint64_t extra) {
    uint8_t* dst = mem_.base() + at + old_need;
    if (!r.file_backed) {
      return ::mmap(dst, extra, r.prot, MAP_PRIVATE | MAP_ANONYMOUS | MAP_FIXED,
                    -1, 0) != MAP_FAILED;
    }
    if (r.fd < 0) return false;
    return ::mmap(dst, extra, r.prot, MAP_PRIVATE | MAP_FIXED, r.fd,
                  static_cast<off_t>(r.file_off + old_need)) != MAP_FAILED;
  }

  /// True when [off, off+len) overlaps no live region: fully inside one
  /// free hole, or entirely in unallocated bump space. Ranges straddling a
  /// hole boundary are conservatively treated as busy.
  bool range_free(uint64_t off, uint64_t len) const {
    if (off >= next_) return off + len <= end_;
    for (const auto& h : holes_)
      if (off >= h.off && off + len <= h.off + h.len) return true;
    return false;
  }

  void claim_range(uint64_t off, uint64_t len) {
    if (off >= next_) {
      if (off > next_) holes_.push_back({next_, off - next_});
      next_ = off + len;
      return;
    }
    for (size_t i = 0; i < holes_.size(); ++i) {
      Hole h = holes_[i];
      if (off >= h.off && off + len <= h.off + h.len) {
        holes_.erase(holes_.begin() + static_cast<ptrdiff_t>(i));
        if (off > h.off) holes_.push_back({h.off, off - h.off});
        if (off + len < h.off + h.len)
          holes_.push_back({off + len, h.off + h.len - (off + len)});
        return;
      }
    }
  }

  void release_range(uint64_t off, uint64_t len) {
    if (off + len == next_) {
      next_ = off;
      return;
    }
    holes_.push_back({off, len});
  }

  bool take_free(uint64_t need, uint64_t* out) {
    for (size_t i = 0; i < holes_.size(); ++i) {
      if (holes_[i].len >= need) {
        *out = holes_[i].off;
        if (holes_[i].len == need) {
          holes_.erase(holes_.begin() + static_cast<ptrdiff_t>(i));
        } else {
          holes_[i].off += need;
          holes_[i].len -= need;
        }
        return true;
      }
    }
    return false;
  }

  EngineMemory& mem_;
  mutable std::mutex mu_;
  uint64_t base_;
  uint64_t end_;
  uint64_t next_;
  std::map<uint64_t, Region> regions_;
  std::vector<Hole> holes_;
  FlagMap prot_map_;
  FlagMap flags_map_;
  WarnFn warn_;
};

} // namespace wali
