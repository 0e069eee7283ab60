// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>

#include "wali/common.hpp"
#include "wali/wasm/module.hpp"
#include "wali/wasm/opcodes.hpp"

namespace wali::wasm {

/// Append-only byte buffer with LEB128 helpers. All wasm emission in this
/// project funnels through here.
class ByteWriter {
public:
  void u8(uint8_t v) { out_.push_back(v); }

  void u32_leb(uint32_t v) {
    do {
      uint8_t b = v & 0x7F;
      v >>= 7;
      if (v != 0) b |= 0x80;
      out_.push_back(b);
    } while (v != 0);
  }

  void u64_leb(uint64_t v) {
    do {
      uint8_t b = v & 0x7F;
      v >>= 7;
      if (v != 0) b |= 0x80;
      out_.push_back(b);
    } while (v != 0);
  }

  void i32_leb(int32_t v) { i64_leb(v); }

  void i64_leb(int64_t v) {
    bool more = true;
    while (more) {
      uint8_t b = v & 0x7F;
      v >>= 7;
      if ((v == 0 && !(b & 0x40)) || (v == -1 && (b & 0x40))) more = false;
      else b |= 0x80;
      out_.push_back(b);
    }
  }

  void f32_bits(uint32_t bits) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }

  void f64_bits(uint64_t bits) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }

  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  void bytes(byte_span s) { out_.insert(out_.end(), s.begin(), s.end()); }

  void name(const std::string& s) {
    u32_leb(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void valtype(ValType t) { u8(static_cast<uint8_t>(t)); }

  size_t size() const { return out_.size(); }
  const std::vector<uint8_t>& data() const { return out_; }
  std::vector<uint8_t> take() { return std::move(out_); }

  /// Emit a section: id byte, payload size, payload.
  void section(uint8_t id, const ByteWriter& payload) {
    u8(id);
    u32_leb(static_cast<uint32_t>(payload.size()));
    bytes(payload.data().data(), payload.size());
  }

private:
  std::vector<uint8_t> out_;
};

namespace detail {

inline void write_limits(ByteWriter& w, const Limits& lim) {
  w.u8(lim.max ? 1 : 0);
  w.u32_leb(lim.min);
  if (lim.max) w.u32_leb(*lim.max);
}

inline void write_func_type(ByteWriter& w, const FuncType& ft) {
  w.u8(0x60);
  w.u32_leb(static_cast<uint32_t>(ft.params.size()));
  for (ValType t : ft.params) w.valtype(t);
  w.u32_leb(static_cast<uint32_t>(ft.results.size()));
  for (ValType t : ft.results) w.valtype(t);
}

inline void write_const_init(ByteWriter& w, const GlobalDef& g) {
  if (g.init_is_global) {
    w.u8(op::kGlobalGet);
    w.u32_leb(g.init_global_index);
  } else {
    switch (g.type) {
      case ValType::I32:
        w.u8(op::kI32Const);
        w.i32_leb(static_cast<int32_t>(g.init_value));
        break;
      case ValType::I64:
        w.u8(op::kI64Const);
        w.i64_leb(static_cast<int64_t>(g.init_value));
        break;
      case ValType::F32:
        w.u8(op::kF32Const);
        w.f32_bits(static_cast<uint32_t>(g.init_value));
        break;
      case ValType::F64:
        w.u8(op::kF64Const);
        w.f64_bits(g.init_value);
        break;
      default:
        throw ValidationError("cannot encode initializer for reference-typed global");
    }
  }
  w.u8(op::kEnd);
}

inline void write_i32_const_expr(ByteWriter& w, uint64_t value, bool is_global, uint32_t gidx) {
  if (is_global) {
    w.u8(op::kGlobalGet);
    w.u32_leb(gidx);
  } else {
    w.u8(op::kI32Const);
    w.i32_leb(static_cast<int32_t>(value));
  }
  w.u8(op::kEnd);
}

} // namespace detail

/// Serialize a Module back to wasm binary form. Sections with no entries are
/// omitted. Custom sections are emitted after the data section, which is
/// sufficient for this project's needs (instrumentation markers).
inline std::vector<uint8_t> encode_module(const Module& m) {
  ByteWriter w;
  static const uint8_t header[8] = {0x00, 0x61, 0x73, 0x6D, 0x01, 0x00, 0x00, 0x00};
  w.bytes(header, 8);

  if (!m.types.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.types.size()));
    for (const auto& t : m.types) detail::write_func_type(s, t);
    w.section(kTypeSection, s);
  }

  if (!m.imports.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.imports.size()));
    for (const auto& im : m.imports) {
      s.name(im.module);
      s.name(im.field);
      s.u8(static_cast<uint8_t>(im.kind));
      switch (im.kind) {
        case ExternKind::Func: s.u32_leb(im.type_index); break;
        case ExternKind::Table:
          s.u8(0x70);
          detail::write_limits(s, im.limits);
          break;
        case ExternKind::Memory: detail::write_limits(s, im.limits); break;
        case ExternKind::Global:
          s.valtype(im.global_type);
          s.u8(im.global_mutable ? 1 : 0);
          break;
      }
    }
    w.section(kImportSection, s);
  }

  if (!m.function_type_indices.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.function_type_indices.size()));
    for (uint32_t ti : m.function_type_indices) s.u32_leb(ti);
    w.section(kFunctionSection, s);
  }

  if (!m.tables.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.tables.size()));
    for (const auto& t : m.tables) {
      s.u8(0x70);
      detail::write_limits(s, t);
    }
    w.section(kTableSection, s);
  }

  if (!m.memories.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.memories.size()));
    for (const auto& mem : m.memories) detail::write_limits(s, mem);
    w.section(kMemorySection, s);
  }

  if (!m.globals.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.globals.size()));
    for (const auto& g : m.globals) {
      s.valtype(g.type);
      s.u8(g.mutable_ ? 1 : 0);
      detail::write_const_init(s, g);
    }
    w.section(kGlobalSection, s);
  }

  if (!m.exports.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.exports.size()));
    for (const auto& e : m.exports) {
      s.name(e.name);
      s.u8(static_cast<uint8_t>(e.kind));
      s.u32_leb(e.index);
    }
    w.section(kExportSection, s);
  }

  if (m.start) {
    ByteWriter s;
    s.u32_leb(*m.start);
    w.section(kStartSection, s);
  }

  if (!m.elements.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.elements.size()));
    for (const auto& seg : m.elements) {
      s.u32_leb(0); // active, table 0, funcref vector
      detail::write_i32_const_expr(s, seg.offset, seg.offset_is_global, seg.offset);
      s.u32_leb(static_cast<uint32_t>(seg.func_indices.size()));
      for (uint32_t f : seg.func_indices) s.u32_leb(f);
    }
    w.section(kElementSection, s);
  }

  if (!m.bodies.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.bodies.size()));
    for (const auto& b : m.bodies) {
      ByteWriter body;
      body.u32_leb(static_cast<uint32_t>(b.locals.size()));
      for (const auto& d : b.locals) {
        body.u32_leb(d.count);
        body.valtype(d.type);
      }
      body.bytes(b.code.data(), b.code.size());
      s.u32_leb(static_cast<uint32_t>(body.size()));
      s.bytes(body.data().data(), body.size());
    }
    w.section(kCodeSection, s);
  }

  if (!m.data.empty()) {
    ByteWriter s;
    s.u32_leb(static_cast<uint32_t>(m.data.size()));
    for (const auto& seg : m.data) {
      s.u32_leb(0); // active, memory 0
      detail::write_i32_const_expr(s, seg.offset, seg.offset_is_global, seg.offset);
      s.u32_leb(static_cast<uint32_t>(seg.bytes.size()));
      s.bytes(seg.bytes.data(), seg.bytes.size());
    }
    w.section(kDataSection, s);
  }

  for (const auto& c : m.customs) {
    ByteWriter s;
    s.name(c.name);
    s.bytes(c.payload.data(), c.payload.size());
    w.section(kCustomSection, s);
  }

  return w.take();
}

} // namespace wali::wasm
