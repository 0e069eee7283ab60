// SPDX-License-Identifier: Apache-2.0
//
// Safepoint instrumentation: rewrites a module so that guest code polls for
// pending virtual signals at bounded intervals. A `("wali","sigcheck")`
// import of type () -> () is added when absent, and calls to it are inserted
// according to the chosen scheme:
//
//   loop      one call as the first instruction inside every loop block
//   function  one call at the entry of every defined function
//   all       one call at entry plus one before every original instruction
//
// The rewrite records itself in a `wali.instrumented` custom section
// (scheme byte followed by the LEB128 function index of the sigcheck
// import), which also makes the pass idempotent.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wali/common.hpp"
#include "wali/wasm/encoder.hpp"
#include "wali/wasm/module.hpp"
#include "wali/wasm/opcodes.hpp"
#include "wali/wasm/parser.hpp"

namespace wali {

enum class SafepointScheme : uint8_t { Loop = 0, Function = 1, All = 2 };

inline const char* to_string(SafepointScheme s) {
  switch (s) {
    case SafepointScheme::Loop: return "loop";
    case SafepointScheme::Function: return "function";
    case SafepointScheme::All: return "all";
  }
  return "?";
}

inline std::optional<SafepointScheme> parse_safepoint_scheme(std::string_view s) {
  if (s == "loop") return SafepointScheme::Loop;
  if (s == "function") return SafepointScheme::Function;
  if (s == "all") return SafepointScheme::All;
  return std::nullopt;
}

struct InstrumentInfo {
  SafepointScheme scheme = SafepointScheme::Loop;
  uint32_t sigcheck_index = 0;
};

namespace detail {

inline constexpr const char* kInstrumentSectionName = "wali.instrumented";

inline uint32_t read_u32_leb(const std::vector<uint8_t>& code, size_t& pos) {
  uint32_t v = 0;
  int shift = 0;
  while (pos < code.size()) {
    uint8_t b = code[pos++];
    v |= static_cast<uint32_t>(b & 0x7F) << shift;
    if (!(b & 0x80)) return v;
    shift += 7;
    if (shift >= 35) break;
  }
  throw ParseError("bad LEB128 in function body", pos);
}

inline void skip_leb(const std::vector<uint8_t>& code, size_t& pos) {
  size_t limit = pos + 10;
  while (pos < code.size() && pos < limit) {
    if (!(code[pos++] & 0x80)) return;
  }
  throw ParseError("bad LEB128 in function body", pos);
}

// Advances `pos` past the immediates of the opcode at code[pos - 1].
inline void skip_immediates(const std::vector<uint8_t>& code, uint8_t opcode,
                            size_t& pos) {
  using namespace wasm::op;
  switch (imm_kind(opcode)) {
    case Imm::None:
      return;
    case Imm::BlockType:
    case Imm::Index:
    case Imm::I32:
    case Imm::I64:
      skip_leb(code, pos);
      return;
    case Imm::IndexIndex:
    case Imm::MemArg:
      skip_leb(code, pos);
      skip_leb(code, pos);
      return;
    case Imm::BrTable: {
      uint32_t n = read_u32_leb(code, pos);
      for (uint32_t i = 0; i <= n; ++i) skip_leb(code, pos);
      return;
    }
    case Imm::MemIndex:
      pos += 1;
      return;
    case Imm::F32:
      pos += 4;
      return;
    case Imm::F64:
      pos += 8;
      return;
    case Imm::SelectT: {
      uint32_t n = read_u32_leb(code, pos);
      pos += n;
      return;
    }
    case Imm::Prefixed: {
      uint32_t sub = read_u32_leb(code, pos);
      if (sub == kFcMemoryCopy)
        pos += 2;
      else if (sub == kFcMemoryFill)
        pos += 1;
      return;
    }
  }
}

inline void emit_call(std::vector<uint8_t>& out, uint32_t func_index) {
  out.push_back(wasm::op::kCall);
  uint32_t v = func_index;
  do {
    uint8_t b = v & 0x7F;
    v >>= 7;
    if (v != 0) b |= 0x80;
    out.push_back(b);
  } while (v != 0);
}

} // namespace detail

/// Reads the instrumentation marker, if present.
inline std::optional<InstrumentInfo> instrumentation_info(const wasm::Module& m) {
  const wasm::CustomSection* c = m.find_custom(detail::kInstrumentSectionName);
  if (!c || c->payload.empty()) return std::nullopt;
  InstrumentInfo info;
  info.scheme = static_cast<SafepointScheme>(c->payload[0]);
  size_t pos = 1;
  info.sigcheck_index = detail::read_u32_leb(c->payload, pos);
  return info;
}

/// Counts sigcheck call sites across all defined function bodies. Returns 0
/// for modules without an instrumentation marker.
inline size_t count_safepoints(const wasm::Module& m) {
  auto info = instrumentation_info(m);
  if (!info) return 0;
  size_t count = 0;
  for (const auto& body : m.bodies) {
    size_t pos = 0;
    while (pos < body.code.size()) {
      uint8_t op = body.code[pos++];
      if (op == wasm::op::kCall) {
        uint32_t idx = detail::read_u32_leb(body.code, pos);
        if (idx == info->sigcheck_index) ++count;
        continue;
      }
      detail::skip_immediates(body.code, op, pos);
    }
  }
  return count;
}

inline size_t count_safepoints(const std::vector<uint8_t>& bytes) {
  return count_safepoints(wasm::parse_module(bytes));
}

/// Total decoded instruction count of all defined function bodies, counting
/// every opcode including block terminators.
inline size_t count_instructions(const wasm::Module& m) {
  size_t count = 0;
  for (const auto& body : m.bodies) {
    size_t pos = 0;
    while (pos < body.code.size()) {
      uint8_t op = body.code[pos++];
      detail::skip_immediates(body.code, op, pos);
      ++count;
    }
  }
  return count;
}

/// Rewrites `bytes` with safepoint calls per `scheme`. Already-instrumented
/// modules are returned unchanged.
inline std::vector<uint8_t> instrument(const std::vector<uint8_t>& bytes,
                                       SafepointScheme scheme) {
  wasm::Module m = wasm::parse_module(bytes);
  if (instrumentation_info(m)) return bytes;

  // Locate or append the ("wali","sigcheck") function import.
  uint32_t sigcheck_idx = 0;
  bool shift = false;
  {
    bool found = false;
    uint32_t func_import_pos = 0;
    for (const auto& imp : m.imports) {
      if (imp.kind != wasm::ExternKind::Func) continue;
      if (imp.module == "wali" && imp.field == "sigcheck" &&
          imp.type_index < m.types.size() && m.types[imp.type_index].params.empty() &&
          m.types[imp.type_index].results.empty()) {
        sigcheck_idx = func_import_pos;
        found = true;
        break;
      }
      ++func_import_pos;
    }
    if (!found) {
      uint32_t type_idx = 0;
      bool have_type = false;
      for (size_t i = 0; i < m.types.size(); ++i) {
        if (m.types[i].params.empty() && m.types[i].results.empty()) {
          type_idx = static_cast<uint32_t>(i);
          have_type = true;
          break;
        }
      }
      if (!have_type) {
        type_idx = static_cast<uint32_t>(m.types.size());
        m.types.push_back(wasm::FuncType{});
      }
      wasm::Import imp;
      imp.module = "wali";
      imp.field = "sigcheck";
      imp.kind = wasm::ExternKind::Func;
      imp.type_index = type_idx;
      // Appending at the end of the import vector makes this the last
      // function import; every defined function index shifts up by one.
      m.imports.push_back(std::move(imp));
      sigcheck_idx = m.imported_func_count;
      shift = true;
    }
  }

  const uint32_t old_imported = m.imported_func_count;
  auto patched_index = [&](uint32_t idx) {
    return (shift && idx >= old_imported) ? idx + 1 : idx;
  };

  for (auto& body : m.bodies) {
    std::vector<uint8_t> out;
    out.reserve(body.code.size() * 2);
    if (scheme == SafepointScheme::Function || scheme == SafepointScheme::All)
      detail::emit_call(out, sigcheck_idx);
    size_t pos = 0;
    while (pos < body.code.size()) {
      if (scheme == SafepointScheme::All) detail::emit_call(out, sigcheck_idx);
      size_t start = pos;
      uint8_t op = body.code[pos++];
      if (op == wasm::op::kCall) {
        uint32_t idx = detail::read_u32_leb(body.code, pos);
        detail::emit_call(out, patched_index(idx));
        continue;
      }
      detail::skip_immediates(body.code, op, pos);
      out.insert(out.end(), body.code.begin() + static_cast<ptrdiff_t>(start),
                 body.code.begin() + static_cast<ptrdiff_t>(pos));
      if (scheme == SafepointScheme::Loop && op == wasm::op::kLoop)
        detail::emit_call(out, sigcheck_idx);
    }
    body.code = std::move(out);
  }

  if (shift) {
    for (auto& e : m.exports)
      if (e.kind == wasm::ExternKind::Func) e.index = patched_index(e.index);
    for (auto& seg : m.elements)
      for (auto& idx : seg.func_indices) idx = patched_index(idx);
    if (m.start) m.start = patched_index(*m.start);
  }

  wasm::CustomSection marker;
  marker.name = detail::kInstrumentSectionName;
  marker.payload.push_back(static_cast<uint8_t>(scheme));
  {
    uint32_t v = sigcheck_idx;
    do {
      uint8_t b = v & 0x7F;
      v >>= 7;
      if (v != 0) b |= 0x80;
      marker.payload.push_back(b);
    } while (v != 0);
  }
  m.customs.push_back(std::move(marker));

  return wasm::encode_module(m);
}

} // namespace wali
