// SPDX-License-Identifier: Apache-2.0
//
// Table-driven layout for structured syscall arguments. Guest-visible record
// layouts are pinned to one canonical shape (64-bit little-endian fields,
// 32-bit guest pointers, 8-byte max alignment) so compiled guests are
// portable across hosts; the host side marshals native structs through the
// manifest instead of memcpying them raw.
#pragma once

#include <cstring>
#include <map>
#include <sstream>
#include <vector>

#include <poll.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/time.h>

#include "wali/common.hpp"

namespace wali {

struct FieldDef {
  std::string name;
  uint32_t offset = 0;
  uint32_t size = 0;
  bool is_signed = false;
};

struct RecordDef {
  std::string name;
  uint32_t size = 0;
  std::vector<FieldDef> fields;

  const FieldDef* field(std::string_view fname) const {
    for (const auto& f : fields)
      if (f.name == fname) return &f;
    return nullptr;
  }
};

/// Record layout table. Parsed from the manifest text format:
///
///   # comment
///   record kstat size 144
///   field dev 0 8 u
///   field size 48 8 s
///
/// or taken from the built-in canonical table.
class LayoutManifest {
public:
  static LayoutManifest parse(std::string_view text) {
    LayoutManifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    RecordDef* cur = nullptr;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string tok;
      if (!(ls >> tok) || tok[0] == '#') continue;
      if (tok == "record") {
        std::string name, kw;
        uint32_t size = 0;
        if (!(ls >> name >> kw >> size) || kw != "size")
          throw ConfigError(format_msg("layout manifest line %d: expected 'record <name> size <n>'",
                                       lineno));
        if (m.records_.count(name))
          throw ConfigError(format_msg("layout manifest line %d: duplicate record '%s'", lineno,
                                       name.c_str()));
        cur = &m.records_[name];
        cur->name = name;
        cur->size = size;
        m.order_.push_back(name);
      } else if (tok == "field") {
        if (!cur)
          throw ConfigError(format_msg("layout manifest line %d: field before record", lineno));
        FieldDef f;
        std::string sign;
        if (!(ls >> f.name >> f.offset >> f.size >> sign) || (sign != "u" && sign != "s"))
          throw ConfigError(format_msg(
              "layout manifest line %d: expected 'field <name> <offset> <size> <u|s>'", lineno));
        f.is_signed = sign == "s";
        if (f.size != 1 && f.size != 2 && f.size != 4 && f.size != 8)
          throw ConfigError(format_msg("layout manifest line %d: field size must be 1/2/4/8",
                                       lineno));
        if (uint64_t(f.offset) + f.size > cur->size)
          throw ConfigError(format_msg("layout manifest line %d: field '%s' exceeds record size",
                                       lineno, f.name.c_str()));
        if (cur->field(f.name))
          throw ConfigError(format_msg("layout manifest line %d: duplicate field '%s'", lineno,
                                       f.name.c_str()));
        cur->fields.push_back(std::move(f));
      } else {
        throw ConfigError(format_msg("layout manifest line %d: unknown directive '%s'", lineno,
                                     tok.c_str()));
      }
    }
    return m;
  }

  /// The canonical manifest text. The checked-in data file carries the same
  /// content; a test pins them together.
  static const char* builtin_text() {
    return
        "# canonical guest record layouts (little endian)\n"
        "record kstat size 144\n"
        "field dev 0 8 u\n"
        "field ino 8 8 u\n"
        "field nlink 16 8 u\n"
        "field mode 24 4 u\n"
        "field uid 28 4 u\n"
        "field gid 32 4 u\n"
        "field rdev 40 8 u\n"
        "field size 48 8 s\n"
        "field blksize 56 8 s\n"
        "field blocks 64 8 s\n"
        "field atime_sec 72 8 s\n"
        "field atime_nsec 80 8 s\n"
        "field mtime_sec 88 8 s\n"
        "field mtime_nsec 96 8 s\n"
        "field ctime_sec 104 8 s\n"
        "field ctime_nsec 112 8 s\n"
        "record iovec size 8\n"
        "field base 0 4 u\n"
        "field len 4 4 u\n"
        "record timespec size 16\n"
        "field sec 0 8 s\n"
        "field nsec 8 8 s\n"
        "record timeval size 16\n"
        "field sec 0 8 s\n"
        "field usec 8 8 s\n"
        "record ksigaction size 24\n"
        "field handler 0 4 u\n"
        "field flags 4 4 u\n"
        "field restorer 8 4 u\n"
        "field mask 16 8 u\n"
        "record sigset size 8\n"
        "field mask 0 8 u\n"
        "record rusage size 144\n"
        "field utime_sec 0 8 s\n"
        "field utime_usec 8 8 s\n"
        "field stime_sec 16 8 s\n"
        "field stime_usec 24 8 s\n"
        "field maxrss 32 8 s\n"
        "field ixrss 40 8 s\n"
        "field idrss 48 8 s\n"
        "field isrss 56 8 s\n"
        "field minflt 64 8 s\n"
        "field majflt 72 8 s\n"
        "field nswap 80 8 s\n"
        "field inblock 88 8 s\n"
        "field oublock 96 8 s\n"
        "field msgsnd 104 8 s\n"
        "field msgrcv 112 8 s\n"
        "field nsignals 120 8 s\n"
        "field nvcsw 128 8 s\n"
        "field nivcsw 136 8 s\n"
        "record rlimit size 16\n"
        "field cur 0 8 u\n"
        "field max 8 8 u\n"
        "record pollfd size 8\n"
        "field fd 0 4 s\n"
        "field events 4 2 u\n"
        "field revents 6 2 u\n";
  }

  static const LayoutManifest& builtin() {
    static const LayoutManifest m = parse(builtin_text());
    return m;
  }

  const RecordDef* record(std::string_view name) const {
    auto it = records_.find(std::string(name));
    return it == records_.end() ? nullptr : &it->second;
  }

  const RecordDef& required(std::string_view name) const {
    const RecordDef* r = record(name);
    if (!r) throw ConfigError(format_msg("layout manifest lacks record '%.*s'",
                                         static_cast<int>(name.size()), name.data()));
    return *r;
  }

  const std::vector<std::string>& record_names() const { return order_; }

  std::string serialize() const {
    std::string out;
    for (const auto& name : order_) {
      const RecordDef& r = records_.at(name);
      out += format_msg("record %s size %u\n", r.name.c_str(), r.size);
      for (const auto& f : r.fields)
        out += format_msg("field %s %u %u %c\n", f.name.c_str(), f.offset, f.size,
                          f.is_signed ? 's' : 'u');
    }
    return out;
  }

  // Field accessors over raw guest record bytes (little-endian host assumed).
  static void store_field(uint8_t* rec, const FieldDef& f, uint64_t value) {
    std::memcpy(rec + f.offset, &value, f.size);
  }

  static uint64_t load_field(const uint8_t* rec, const FieldDef& f) {
    uint64_t v = 0;
    std::memcpy(&v, rec + f.offset, f.size);
    if (f.is_signed && f.size < 8) {
      uint64_t sign_bit = 1ull << (f.size * 8 - 1);
      if (v & sign_bit) v |= ~((sign_bit << 1) - 1);
    }
    return v;
  }

  void store(uint8_t* rec, const RecordDef& r, std::string_view fname, uint64_t value) const {
    const FieldDef* f = r.field(fname);
    if (!f) throw ConfigError(format_msg("record %s has no field '%.*s'", r.name.c_str(),
                                         static_cast<int>(fname.size()), fname.data()));
    store_field(rec, *f, value);
  }

  uint64_t load(const uint8_t* rec, const RecordDef& r, std::string_view fname) const {
    const FieldDef* f = r.field(fname);
    if (!f) throw ConfigError(format_msg("record %s has no field '%.*s'", r.name.c_str(),
                                         static_cast<int>(fname.size()), fname.data()));
    return load_field(rec, *f);
  }

private:
  std::map<std::string, RecordDef> records_;
  std::vector<std::string> order_;
};

namespace layout {

/// Native stat -> guest kstat record.
inline void store_kstat(const LayoutManifest& m, uint8_t* dst, const struct ::stat& st) {
  const RecordDef& r = m.required("kstat");
  std::memset(dst, 0, r.size);
  m.store(dst, r, "dev", st.st_dev);
  m.store(dst, r, "ino", st.st_ino);
  m.store(dst, r, "nlink", st.st_nlink);
  m.store(dst, r, "mode", st.st_mode);
  m.store(dst, r, "uid", st.st_uid);
  m.store(dst, r, "gid", st.st_gid);
  m.store(dst, r, "rdev", st.st_rdev);
  m.store(dst, r, "size", static_cast<uint64_t>(st.st_size));
  m.store(dst, r, "blksize", static_cast<uint64_t>(st.st_blksize));
  m.store(dst, r, "blocks", static_cast<uint64_t>(st.st_blocks));
  m.store(dst, r, "atime_sec", static_cast<uint64_t>(st.st_atim.tv_sec));
  m.store(dst, r, "atime_nsec", static_cast<uint64_t>(st.st_atim.tv_nsec));
  m.store(dst, r, "mtime_sec", static_cast<uint64_t>(st.st_mtim.tv_sec));
  m.store(dst, r, "mtime_nsec", static_cast<uint64_t>(st.st_mtim.tv_nsec));
  m.store(dst, r, "ctime_sec", static_cast<uint64_t>(st.st_ctim.tv_sec));
  m.store(dst, r, "ctime_nsec", static_cast<uint64_t>(st.st_ctim.tv_nsec));
}

inline void store_timespec(const LayoutManifest& m, uint8_t* dst, const struct ::timespec& ts) {
  const RecordDef& r = m.required("timespec");
  m.store(dst, r, "sec", static_cast<uint64_t>(ts.tv_sec));
  m.store(dst, r, "nsec", static_cast<uint64_t>(ts.tv_nsec));
}

inline struct ::timespec load_timespec(const LayoutManifest& m, const uint8_t* src) {
  const RecordDef& r = m.required("timespec");
  struct ::timespec ts{};
  ts.tv_sec = static_cast<time_t>(m.load(src, r, "sec"));
  ts.tv_nsec = static_cast<long>(m.load(src, r, "nsec"));
  return ts;
}

inline void store_timeval(const LayoutManifest& m, uint8_t* dst, const struct ::timeval& tv) {
  const RecordDef& r = m.required("timeval");
  m.store(dst, r, "sec", static_cast<uint64_t>(tv.tv_sec));
  m.store(dst, r, "usec", static_cast<uint64_t>(tv.tv_usec));
}

struct GuestIovec {
  uint32_t base = 0;
  uint32_t len = 0;
};

inline GuestIovec load_iovec(const LayoutManifest& m, const uint8_t* src) {
  const RecordDef& r = m.required("iovec");
  GuestIovec io;
  io.base = static_cast<uint32_t>(m.load(src, r, "base"));
  io.len = static_cast<uint32_t>(m.load(src, r, "len"));
  return io;
}

struct GuestSigaction {
  uint32_t handler = 0; // 0 = default, 1 = ignore, else function table slot
  uint32_t flags = 0;
  uint32_t restorer = 0;
  uint64_t mask = 0;
};

inline GuestSigaction load_ksigaction(const LayoutManifest& m, const uint8_t* src) {
  const RecordDef& r = m.required("ksigaction");
  GuestSigaction a;
  a.handler = static_cast<uint32_t>(m.load(src, r, "handler"));
  a.flags = static_cast<uint32_t>(m.load(src, r, "flags"));
  a.restorer = static_cast<uint32_t>(m.load(src, r, "restorer"));
  a.mask = m.load(src, r, "mask");
  return a;
}

inline void store_ksigaction(const LayoutManifest& m, uint8_t* dst, const GuestSigaction& a) {
  const RecordDef& r = m.required("ksigaction");
  std::memset(dst, 0, r.size);
  m.store(dst, r, "handler", a.handler);
  m.store(dst, r, "flags", a.flags);
  m.store(dst, r, "restorer", a.restorer);
  m.store(dst, r, "mask", a.mask);
}

inline void store_rusage(const LayoutManifest& m, uint8_t* dst, const struct ::rusage& ru) {
  const RecordDef& r = m.required("rusage");
  std::memset(dst, 0, r.size);
  m.store(dst, r, "utime_sec", static_cast<uint64_t>(ru.ru_utime.tv_sec));
  m.store(dst, r, "utime_usec", static_cast<uint64_t>(ru.ru_utime.tv_usec));
  m.store(dst, r, "stime_sec", static_cast<uint64_t>(ru.ru_stime.tv_sec));
  m.store(dst, r, "stime_usec", static_cast<uint64_t>(ru.ru_stime.tv_usec));
  m.store(dst, r, "maxrss", static_cast<uint64_t>(ru.ru_maxrss));
  m.store(dst, r, "ixrss", static_cast<uint64_t>(ru.ru_ixrss));
  m.store(dst, r, "idrss", static_cast<uint64_t>(ru.ru_idrss));
  m.store(dst, r, "isrss", static_cast<uint64_t>(ru.ru_isrss));
  m.store(dst, r, "minflt", static_cast<uint64_t>(ru.ru_minflt));
  m.store(dst, r, "majflt", static_cast<uint64_t>(ru.ru_majflt));
  m.store(dst, r, "nswap", static_cast<uint64_t>(ru.ru_nswap));
  m.store(dst, r, "inblock", static_cast<uint64_t>(ru.ru_inblock));
  m.store(dst, r, "oublock", static_cast<uint64_t>(ru.ru_oublock));
  m.store(dst, r, "msgsnd", static_cast<uint64_t>(ru.ru_msgsnd));
  m.store(dst, r, "msgrcv", static_cast<uint64_t>(ru.ru_msgrcv));
  m.store(dst, r, "nsignals", static_cast<uint64_t>(ru.ru_nsignals));
  m.store(dst, r, "nvcsw", static_cast<uint64_t>(ru.ru_nvcsw));
  m.store(dst, r, "nivcsw", static_cast<uint64_t>(ru.ru_nivcsw));
}

inline void store_rlimit(const LayoutManifest& m, uint8_t* dst, const struct ::rlimit& rl) {
  const RecordDef& r = m.required("rlimit");
  m.store(dst, r, "cur", rl.rlim_cur);
  m.store(dst, r, "max", rl.rlim_max);
}

inline struct ::rlimit load_rlimit(const LayoutManifest& m, const uint8_t* src) {
  const RecordDef& r = m.required("rlimit");
  struct ::rlimit rl{};
  rl.rlim_cur = m.load(src, r, "cur");
  rl.rlim_max = m.load(src, r, "max");
  return rl;
}

inline struct ::pollfd load_pollfd(const LayoutManifest& m, const uint8_t* src) {
  const RecordDef& r = m.required("pollfd");
  struct ::pollfd p{};
  p.fd = static_cast<int>(m.load(src, r, "fd"));
  p.events = static_cast<short>(m.load(src, r, "events"));
  p.revents = 0;
  return p;
}

inline void store_pollfd_revents(const LayoutManifest& m, uint8_t* dst, short revents) {
  const RecordDef& r = m.required("pollfd");
  m.store(dst, r, "revents", static_cast<uint16_t>(revents));
}

} // namespace layout

/// Bitwise flag translation for one domain. Bits without an explicit pair
/// pass through unchanged, so the canonical-host map is simply empty.
class FlagMap {
public:
  void map_bit(uint64_t virtual_bit, uint64_t host_bit) {
    pairs_.push_back({virtual_bit, host_bit});
  }

  uint64_t to_host(uint64_t v) const {
    uint64_t out = v;
    uint64_t add = 0;
    for (const auto& p : pairs_) {
      if (v & p.first) {
        out &= ~p.first;
        add |= p.second;
      }
    }
    return out | add;
  }

  uint64_t to_virtual(uint64_t v) const {
    uint64_t out = v;
    uint64_t add = 0;
    for (const auto& p : pairs_) {
      if (v & p.second) {
        out &= ~p.second;
        add |= p.first;
      }
    }
    return out | add;
  }

  bool empty() const { return pairs_.empty(); }

private:
  std::vector<std::pair<uint64_t, uint64_t>> pairs_;
};

/// Per-domain flag maps for the running host.
struct FlagMaps {
  FlagMap file_status;
  FlagMap mmap_prot;
  FlagMap mmap_flags;
  FlagMap sigaction_flags;
  FlagMap clone_flags;

  /// Guest flag values are pinned to the x86-64 numbering, so an x86-64 host
  /// needs no remapping. Other hosts populate the differing bits.
  static FlagMaps for_host() {
#if defined(__x86_64__)
    return {};
#elif defined(__aarch64__)
    return arm64_profile();
#else
    return {};
#endif
  }

  /// The x86-64 -> arm64 file-status renumbering. Also used by unit tests on
  /// any host.
  static FlagMaps arm64_profile() {
    FlagMaps fm;
    fm.file_status.map_bit(0x4000, 0x10000);  // O_DIRECT
    fm.file_status.map_bit(0x8000, 0x20000);  // O_LARGEFILE
    fm.file_status.map_bit(0x10000, 0x4000);  // O_DIRECTORY
    fm.file_status.map_bit(0x20000, 0x8000);  // O_NOFOLLOW
    return fm;
  }
};

} // namespace wali
