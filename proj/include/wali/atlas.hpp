// SPDX-License-Identifier: Apache-2.0
//
// Syscall-surface analysis: kernel syscall-table parsing, cross-architecture
// similarity, and application profile reports from strace summaries. These
// feed scoping decisions for the virtual syscall layer (which names matter,
// and how portable a single canonical numbering is).
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wali/common.hpp"

namespace wali::atlas {

struct SyscallTable {
  std::string name;              // label, usually the architecture
  std::set<std::string> syscalls;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

} // namespace detail

/// Parses kernel syscall.tbl text: `<number> <abi> <name> [<entry point>...]`
/// per line, `#` comments and blank lines skipped. Rows whose abi is not in
/// `abis` are dropped; an empty filter keeps everything. A two-column
/// `<number> <name>` fallback is accepted for minimal tables.
inline std::set<std::string> parse_syscall_tbl(const std::string& text,
                                               const std::set<std::string>& abis) {
  std::set<std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::vector<std::string> tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (!detail::all_digits(tok[0]))
      throw ConfigError(format_msg("syscall table line %d: expected a syscall "
                                   "number, got \"%s\"",
                                   lineno, tok[0].c_str()));
    if (tok.size() == 2) {
      out.insert(tok[1]);
      continue;
    }
    if (tok.size() < 3)
      throw ConfigError(format_msg(
          "syscall table line %d: expected <number> <abi> <name>", lineno));
    if (abis.empty() || abis.count(tok[1])) out.insert(tok[2]);
  }
  return out;
}

/// ABI tag sets selecting the native 64-bit surface of each architecture.
inline std::optional<std::set<std::string>> infer_abis(const std::string& filename) {
  std::string base = filename;
  if (auto slash = base.find_last_of('/'); slash != std::string::npos)
    base = base.substr(slash + 1);
  for (auto& c : base) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (base.find("x86_64") != std::string::npos || base.find("x86-64") != std::string::npos ||
      base.find("amd64") != std::string::npos)
    return std::set<std::string>{"common", "64"};
  if (base.find("arm64") != std::string::npos || base.find("aarch64") != std::string::npos)
    return std::set<std::string>{"common", "64", "renameat", "rlimit", "memfd_secret"};
  if (base.find("riscv") != std::string::npos)
    return std::set<std::string>{"common", "64", "riscv", "rlimit", "memfd_secret"};
  return std::nullopt;
}

inline std::string table_label(const std::string& filename) {
  std::string base = filename;
  if (auto slash = base.find_last_of('/'); slash != std::string::npos)
    base = base.substr(slash + 1);
  if (auto dot = base.find_last_of('.'); dot != std::string::npos) base = base.substr(0, dot);
  return base;
}

inline SyscallTable load_syscall_table(const std::string& path,
                                       const std::optional<std::set<std::string>>& abi_override = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open syscall table: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::set<std::string> abis;
  if (abi_override)
    abis = *abi_override;
  else if (auto inferred = infer_abis(path))
    abis = *inferred;
  return SyscallTable{table_label(path), parse_syscall_tbl(buf.str(), abis)};
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& s : a) inter += b.count(s);
  size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Pairwise Jaccard similarity; symmetric with a unit diagonal.
inline std::vector<std::vector<double>> similarity_matrix(
    const std::vector<SyscallTable>& tables) {
  size_t n = tables.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    m[i][i] = 1.0;
    for (size_t j = i + 1; j < n; ++j) {
      double v = jaccard(tables[i].syscalls, tables[j].syscalls);
      m[i][j] = v;
      m[j][i] = v;
    }
  }
  return m;
}

inline void write_similarity_csv(std::ostream& os,
                                 const std::vector<SyscallTable>& tables,
                                 const std::vector<std::vector<double>>& m) {
  os << "table";
  for (const auto& t : tables) os << ',' << t.name;
  os << '\n';
  for (size_t i = 0; i < tables.size(); ++i) {
    os << tables[i].name;
    char buf[32];
    for (size_t j = 0; j < tables.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.4f", m[i][j]);
      os << ',' << buf;
    }
    os << '\n';
  }
}

struct AppProfile {
  std::string name;
  std::map<std::string, uint64_t> calls;
};

/// Parses `strace -c [-f]` summary output into per-syscall call counts.
/// Tolerates column drift: the name is the last token, the call count is the
/// fourth column, and separator/header/total rows are skipped.
inline std::map<std::string, uint64_t> parse_strace_summary(const std::string& text) {
  std::map<std::string, uint64_t> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0][0] == '-') continue; // separator row
    const std::string& name = tok.back();
    if (name == "syscall" || name == "total") continue;
    bool name_ok = !name.empty() && (std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_');
    if (!name_ok) continue;
    uint64_t calls = 0;
    bool have = false;
    if (tok.size() >= 5 && detail::all_digits(tok[3])) {
      calls = std::stoull(tok[3]);
      have = true;
    } else {
      // Drifted layouts: take the integer closest to the name from the right.
      for (size_t i = tok.size() - 1; i-- > 0;) {
        if (detail::all_digits(tok[i])) {
          calls = std::stoull(tok[i]);
          have = true;
          break;
        }
      }
    }
    if (have) out[name] += calls;
  }
  return out;
}

inline AppProfile load_strace_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open strace summary: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string label = path;
  if (auto slash = label.find_last_of('/'); slash != std::string::npos)
    label = label.substr(slash + 1);
  if (auto dot = label.find_last_of('.'); dot != std::string::npos) label = label.substr(0, dot);
  return AppProfile{label, parse_strace_summary(buf.str())};
}

struct ProfileRow {
  std::string syscall;
  std::vector<double> freq; // one per app, log-normalized to [0,1]
  double aggregate = 0.0;
};

struct ProfileReport {
  std::vector<std::string> apps;
  std::vector<ProfileRow> rows;     // sorted by aggregate, descending
  std::vector<double> coverage;     // per app: fraction of its syscalls implemented
};

/// Builds a frequency report across applications. Counts are log-scaled
/// (ln(1+n)) and normalized per app by the app's hottest syscall, so heavy
/// apps do not drown out light ones; rows sort by the cross-app aggregate.
/// Coverage is the fraction of each app's distinct syscalls present in
/// `implemented`.
inline ProfileReport profile_report(const std::vector<AppProfile>& apps,
                                    const std::set<std::string>& implemented) {
  ProfileReport rep;
  std::set<std::string> names;
  for (const auto& app : apps) {
    rep.apps.push_back(app.name);
    for (const auto& [name, _] : app.calls) names.insert(name);
  }
  std::vector<double> norm(apps.size(), 1.0);
  for (size_t i = 0; i < apps.size(); ++i) {
    uint64_t mx = 0;
    for (const auto& [_, n] : apps[i].calls) mx = std::max(mx, n);
    norm[i] = mx ? std::log1p(static_cast<double>(mx)) : 1.0;
  }
  for (const auto& name : names) {
    ProfileRow row;
    row.syscall = name;
    for (size_t i = 0; i < apps.size(); ++i) {
      auto it = apps[i].calls.find(name);
      double f = 0.0;
      if (it != apps[i].calls.end() && it->second > 0)
        f = std::log1p(static_cast<double>(it->second)) / norm[i];
      row.freq.push_back(f);
      row.aggregate += f;
    }
    rep.rows.push_back(std::move(row));
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const ProfileRow& a, const ProfileRow& b) {
                     if (a.aggregate != b.aggregate) return a.aggregate > b.aggregate;
                     return a.syscall < b.syscall;
                   });
  for (const auto& app : apps) {
    size_t hit = 0;
    for (const auto& [name, _] : app.calls) hit += implemented.count(name);
    rep.coverage.push_back(app.calls.empty()
                               ? 1.0
                               : static_cast<double>(hit) /
                                     static_cast<double>(app.calls.size()));
  }
  return rep;
}

inline void write_profile_csv(std::ostream& os, const ProfileReport& rep) {
  os << "syscall";
  for (const auto& app : rep.apps) os << ',' << app;
  os << ",aggregate\n";
  char buf[32];
  for (const auto& row : rep.rows) {
    os << row.syscall;
    for (double f : row.freq) {
      std::snprintf(buf, sizeof buf, "%.4f", f);
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.4f", row.aggregate);
    os << ',' << buf << '\n';
  }
  os << "coverage";
  for (double c : rep.coverage) {
    std::snprintf(buf, sizeof buf, "%.4f", c);
    os << ',' << buf;
  }
  os << ",\n";
}

} // namespace wali::atlas
