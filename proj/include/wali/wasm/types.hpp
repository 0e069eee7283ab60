// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace wali::wasm {

enum class ValType : uint8_t {
  I32 = 0x7F,
  I64 = 0x7E,
  F32 = 0x7D,
  F64 = 0x7C,
  FuncRef = 0x70,
};

inline const char* name(ValType t) {
  switch (t) {
    case ValType::I32: return "i32";
    case ValType::I64: return "i64";
    case ValType::F32: return "f32";
    case ValType::F64: return "f64";
    case ValType::FuncRef: return "funcref";
  }
  return "?";
}

struct FuncType {
  std::vector<ValType> params;
  std::vector<ValType> results;

  bool operator==(const FuncType& o) const = default;

  std::string to_string() const {
    std::string s = "(";
    for (size_t i = 0; i < params.size(); ++i) {
      if (i) s += ",";
      s += name(params[i]);
    }
    s += ")->(";
    for (size_t i = 0; i < results.size(); ++i) {
      if (i) s += ",";
      s += name(results[i]);
    }
    return s + ")";
  }
};

struct Limits {
  uint32_t min = 0;
  std::optional<uint32_t> max;
};

enum class ExternKind : uint8_t { Func = 0, Table = 1, Memory = 2, Global = 3 };

} // namespace wali::wasm
