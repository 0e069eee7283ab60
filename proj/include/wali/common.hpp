// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cerrno>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wali {

using byte_span = std::span<const uint8_t>;
using mutable_byte_span = std::span<uint8_t>;

inline std::string format_msg(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  char buf[512];
  vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return std::string(buf);
}

/// Guest execution aborted; unwinds to the nearest guest entry point.
class Trap : public std::runtime_error {
public:
  explicit Trap(std::string reason) : std::runtime_error(std::move(reason)) {}
};

/// Malformed Wasm binary. `offset` is the byte position of the defect.
class ParseError : public std::runtime_error {
public:
  ParseError(std::string reason, size_t offset)
      : std::runtime_error(format_msg("%s (at byte offset %zu)", reason.c_str(), offset)),
        offset(offset) {}
  size_t offset;
};

/// Well-formed binary that fails type checking or uses an unsupported feature.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(std::string reason) : std::runtime_error(std::move(reason)) {}
};

/// Import resolution or instantiation failure.
class InstantiationError : public std::runtime_error {
public:
  explicit InstantiationError(std::string reason) : std::runtime_error(std::move(reason)) {}
};

/// Startup configuration problems (bad policy file, bad manifest, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::string reason) : std::runtime_error(std::move(reason)) {}
};

// Linux result convention: non-negative success, -errno failure in [-4095,-1].
constexpr int64_t kMaxErrno = 4095;

inline int64_t errno_result(int64_t rc) {
  return rc < 0 ? -static_cast<int64_t>(errno) : rc;
}

inline bool is_errno_result(int64_t v) { return v < 0 && v >= -kMaxErrno; }

constexpr uint32_t kWasmPageSize = 65536;

} // namespace wali
