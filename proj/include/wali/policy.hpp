// SPDX-License-Identifier: Apache-2.0
//
// Syscall policy files. One rule per line:
//
//   default allow|deny|trap
//   allow <name>
//   deny <name> [errno]
//   trap <name>
//   trace <name>
//
// '#' starts a comment. Rule names are validated against the set of
// syscalls the runtime recognizes; unknown names are a load error.
#pragma once

#include <cerrno>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "wali/common.hpp"

namespace wali {

enum class PolicyAction : uint8_t { Allow, Deny, Trap };

struct PolicyRule {
  PolicyAction action = PolicyAction::Allow;
  int deny_errno = EPERM;
};

namespace detail {

inline bool parse_errno_token(const std::string& tok, int* out) {
  if (!tok.empty() && (std::isdigit(static_cast<unsigned char>(tok[0])) != 0)) {
    try {
      *out = std::stoi(tok);
    } catch (...) {
      return false;
    }
    return *out > 0 && *out <= kMaxErrno;
  }
  static const std::map<std::string, int, std::less<>> names = {
      {"EPERM", EPERM},   {"ENOENT", ENOENT}, {"ESRCH", ESRCH},
      {"EINTR", EINTR},   {"EIO", EIO},       {"ENXIO", ENXIO},
      {"E2BIG", E2BIG},   {"ENOEXEC", ENOEXEC}, {"EBADF", EBADF},
      {"ECHILD", ECHILD}, {"EAGAIN", EAGAIN}, {"ENOMEM", ENOMEM},
      {"EACCES", EACCES}, {"EFAULT", EFAULT}, {"EBUSY", EBUSY},
      {"EEXIST", EEXIST}, {"ENODEV", ENODEV}, {"ENOTDIR", ENOTDIR},
      {"EISDIR", EISDIR}, {"EINVAL", EINVAL}, {"ENFILE", ENFILE},
      {"EMFILE", EMFILE}, {"ENOTTY", ENOTTY}, {"ENOSPC", ENOSPC},
      {"ESPIPE", ESPIPE}, {"EROFS", EROFS},   {"EPIPE", EPIPE},
      {"ERANGE", ERANGE}, {"ENOSYS", ENOSYS},
  };
  auto it = names.find(tok);
  if (it == names.end()) return false;
  *out = it->second;
  return true;
}

} // namespace detail

class Policy {
public:
  using KnownFn = std::function<bool(std::string_view)>;

  /// Parses policy text. `known` decides which syscall names are legal in
  /// rules; pass nullptr to accept any name.
  static Policy parse(const std::string& text, const KnownFn& known = nullptr) {
    Policy p;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
      std::istringstream ls(line);
      std::string verb;
      if (!(ls >> verb)) continue;
      auto fail = [&](const std::string& why) -> ConfigError {
        return ConfigError(format_msg("policy line %d: %s", lineno, why.c_str()));
      };
      if (verb == "default") {
        std::string action;
        if (!(ls >> action)) throw fail("missing default action");
        if (action == "allow") {
          p.default_ = {PolicyAction::Allow, EPERM};
        } else if (action == "deny") {
          p.default_ = {PolicyAction::Deny, EPERM};
        } else if (action == "trap") {
          p.default_ = {PolicyAction::Trap, EPERM};
        } else {
          throw fail("unknown default action '" + action + "'");
        }
        continue;
      }
      if (verb != "allow" && verb != "deny" && verb != "trap" && verb != "trace")
        throw fail("unknown directive '" + verb + "'");
      std::string name;
      if (!(ls >> name)) throw fail("missing syscall name");
      if (known && !known(name)) throw fail("unknown syscall name '" + name + "'");
      if (verb == "trace") {
        p.traced_.insert(name);
      } else if (verb == "allow") {
        p.rules_[name] = {PolicyAction::Allow, EPERM};
      } else if (verb == "trap") {
        p.rules_[name] = {PolicyAction::Trap, EPERM};
      } else {
        int err = EPERM;
        std::string tok;
        if (ls >> tok && !detail::parse_errno_token(tok, &err))
          throw fail("bad errno '" + tok + "'");
        p.rules_[name] = {PolicyAction::Deny, err};
      }
      std::string extra;
      if (ls >> extra) throw fail("trailing tokens after rule");
    }
    return p;
  }

  static Policy load_file(const std::string& path, const KnownFn& known = nullptr) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open policy file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), known);
  }

  PolicyRule rule(std::string_view name) const {
    auto it = rules_.find(name);
    return it == rules_.end() ? default_ : it->second;
  }

  bool traced(std::string_view name) const { return traced_.count(name) != 0; }

  /// True when the policy marks specific syscalls for tracing; the trace then
  /// narrows to those names instead of recording everything.
  bool has_trace_rules() const { return !traced_.empty(); }
  bool has_override(std::string_view name) const { return rules_.count(name) != 0; }
  const PolicyRule& default_rule() const { return default_; }

private:
  PolicyRule default_{PolicyAction::Allow, EPERM};
  std::map<std::string, PolicyRule, std::less<>> rules_;
  std::set<std::string, std::less<>> traced_;
};

} // namespace wali
