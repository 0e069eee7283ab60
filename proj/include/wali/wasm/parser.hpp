// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>

#include "wali/common.hpp"
#include "wali/wasm/module.hpp"
#include "wali/wasm/opcodes.hpp"

namespace wali::wasm {

// LEB128/byte cursor over a module image. Shared by the parser, the validator
// and the instrumentation pass.
class ByteReader {
public:
  ByteReader(const uint8_t* data, size_t size, size_t base_offset = 0)
      : data_(data), size_(size), base_(base_offset) {}
  explicit ByteReader(byte_span bytes) : ByteReader(bytes.data(), bytes.size()) {}

  size_t pos() const { return pos_; }
  size_t offset() const { return base_ + pos_; } // absolute position for diagnostics
  size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ >= size_; }
  const uint8_t* cursor() const { return data_ + pos_; }

  uint8_t u8() {
    if (pos_ >= size_) fail("unexpected end of input");
    return data_[pos_++];
  }

  uint8_t peek() const {
    if (pos_ >= size_) fail("unexpected end of input");
    return data_[pos_];
  }

  uint32_t u32_leb() { return static_cast<uint32_t>(leb(32, false)); }
  uint64_t u64_leb() { return leb(64, false); }
  int32_t i32_leb() { return static_cast<int32_t>(leb(32, true)); }
  int64_t i64_leb() { return static_cast<int64_t>(leb(64, true)); }

  uint32_t f32_bits() {
    uint32_t v;
    copy(&v, 4);
    return v;
  }
  uint64_t f64_bits() {
    uint64_t v;
    copy(&v, 8);
    return v;
  }

  byte_span bytes(size_t n) {
    if (remaining() < n) fail("unexpected end of input");
    byte_span s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

  std::string utf8_name() {
    uint32_t len = u32_leb();
    byte_span s = bytes(len);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
  }

  void skip(size_t n) {
    if (remaining() < n) fail("unexpected end of input");
    pos_ += n;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError(why, offset());
  }

private:
  void copy(void* out, size_t n) {
    if (remaining() < n) fail("unexpected end of input");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  uint64_t leb(int bits, bool is_signed) {
    uint64_t result = 0;
    int shift = 0;
    while (true) {
      if (pos_ >= size_) fail("truncated LEB128 value");
      uint8_t byte = data_[pos_++];
      if (shift >= bits) {
        // Only padding bits may remain.
        uint8_t low = byte & 0x7F;
        bool ok = is_signed ? (low == 0 || low == 0x7F) : (low == 0);
        if (!ok || shift >= bits + 7) fail("LEB128 value out of range");
      } else {
        result |= uint64_t(byte & 0x7F) << shift;
      }
      if ((byte & 0x80) == 0) {
        if (is_signed && shift + 7 < bits && (byte & 0x40))
          result |= ~uint64_t(0) << (shift + 7);
        return result;
      }
      shift += 7;
    }
  }

  const uint8_t* data_;
  size_t size_;
  size_t base_;
  size_t pos_ = 0;
};

namespace detail {

inline ValType read_valtype(ByteReader& r) {
  uint8_t b = r.u8();
  switch (b) {
    case 0x7F: return ValType::I32;
    case 0x7E: return ValType::I64;
    case 0x7D: return ValType::F32;
    case 0x7C: return ValType::F64;
    case 0x70: return ValType::FuncRef;
    default: r.fail(format_msg("invalid value type 0x%02x", b));
  }
}

inline Limits read_limits(ByteReader& r) {
  uint8_t flags = r.u8();
  if (flags > 1) r.fail("unsupported limits flags (shared or 64-bit memories)");
  Limits lim;
  lim.min = r.u32_leb();
  if (flags & 1) {
    lim.max = r.u32_leb();
    if (*lim.max < lim.min) r.fail("limits maximum below minimum");
  }
  return lim;
}

// Constant expressions are restricted to what this engine instantiates:
// t.const or global.get of an imported immutable global, terminated by end.
struct ConstExpr {
  ValType type;
  uint64_t value = 0;
  bool is_global = false;
  uint32_t global_index = 0;
};

inline ConstExpr read_const_expr(ByteReader& r) {
  ConstExpr e{ValType::I32};
  uint8_t op = r.u8();
  switch (op) {
    case op::kI32Const:
      e.type = ValType::I32;
      e.value = static_cast<uint32_t>(r.i32_leb());
      break;
    case op::kI64Const:
      e.type = ValType::I64;
      e.value = static_cast<uint64_t>(r.i64_leb());
      break;
    case op::kF32Const:
      e.type = ValType::F32;
      e.value = r.f32_bits();
      break;
    case op::kF64Const:
      e.type = ValType::F64;
      e.value = r.f64_bits();
      break;
    case op::kGlobalGet:
      e.is_global = true;
      e.global_index = r.u32_leb();
      break;
    default:
      r.fail(format_msg("unsupported constant expression opcode 0x%02x", op));
  }
  if (r.u8() != op::kEnd) r.fail("constant expression not terminated by end");
  return e;
}

} // namespace detail

/// Decodes a binary module. Structural errors throw ParseError with the byte
/// offset; type checking is the validator's job.
inline Module parse_module(byte_span bytes) {
  ByteReader r(bytes);
  if (r.remaining() < 8) r.fail("not a wasm module (too short)");
  static const uint8_t kMagic[4] = {0x00, 0x61, 0x73, 0x6D};
  static const uint8_t kVersion[4] = {0x01, 0x00, 0x00, 0x00};
  if (std::memcmp(r.bytes(4).data(), kMagic, 4) != 0) r.fail("bad wasm magic");
  if (std::memcmp(r.bytes(4).data(), kVersion, 4) != 0) r.fail("unsupported wasm version");

  Module m;
  int last_section = -1;
  bool seen_datacount = false;
  uint32_t declared_data_count = 0;

  while (!r.done()) {
    uint8_t id = r.u8();
    uint32_t section_len = r.u32_leb();
    if (r.remaining() < section_len) r.fail("section extends past end of module");
    size_t section_start = r.pos();
    ByteReader s(r.cursor(), section_len, r.offset());

    if (id != kCustomSection) {
      // Non-custom sections must appear in order, at most once. Data-count
      // slots between element and code.
      int order = (id == kDataCountSection) ? kElementSection * 2 + 1 : id * 2;
      if (order <= last_section) r.fail(format_msg("section id %u out of order", id));
      last_section = order;
    }

    switch (id) {
      case kCustomSection: {
        CustomSection c;
        c.name = s.utf8_name();
        c.payload.assign(s.cursor(), s.cursor() + s.remaining());
        m.customs.push_back(std::move(c));
        break;
      }
      case kTypeSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          if (s.u8() != 0x60) s.fail("expected function type tag 0x60");
          FuncType ft;
          uint32_t np = s.u32_leb();
          for (uint32_t j = 0; j < np; ++j) ft.params.push_back(detail::read_valtype(s));
          uint32_t nr = s.u32_leb();
          for (uint32_t j = 0; j < nr; ++j) ft.results.push_back(detail::read_valtype(s));
          m.types.push_back(std::move(ft));
        }
        break;
      }
      case kImportSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          Import im;
          im.module = s.utf8_name();
          im.field = s.utf8_name();
          uint8_t kind = s.u8();
          switch (kind) {
            case 0:
              im.kind = ExternKind::Func;
              im.type_index = s.u32_leb();
              break;
            case 1:
              im.kind = ExternKind::Table;
              if (detail::read_valtype(s) != ValType::FuncRef)
                s.fail("only funcref tables are supported");
              im.limits = detail::read_limits(s);
              break;
            case 2:
              im.kind = ExternKind::Memory;
              im.limits = detail::read_limits(s);
              break;
            case 3:
              im.kind = ExternKind::Global;
              im.global_type = detail::read_valtype(s);
              im.global_mutable = s.u8() != 0;
              break;
            default:
              s.fail(format_msg("invalid import kind %u", kind));
          }
          m.imports.push_back(std::move(im));
        }
        break;
      }
      case kFunctionSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) m.function_type_indices.push_back(s.u32_leb());
        break;
      }
      case kTableSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          if (detail::read_valtype(s) != ValType::FuncRef)
            s.fail("only funcref tables are supported");
          m.tables.push_back(detail::read_limits(s));
        }
        break;
      }
      case kMemorySection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) m.memories.push_back(detail::read_limits(s));
        break;
      }
      case kGlobalSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          GlobalDef g;
          g.type = detail::read_valtype(s);
          g.mutable_ = s.u8() != 0;
          auto e = detail::read_const_expr(s);
          if (e.is_global) {
            g.init_is_global = true;
            g.init_global_index = e.global_index;
          } else {
            g.init_value = e.value;
            if (e.type != g.type)
              s.fail("global initializer type does not match global type");
          }
          m.globals.push_back(g);
        }
        break;
      }
      case kExportSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          Export ex;
          ex.name = s.utf8_name();
          uint8_t kind = s.u8();
          if (kind > 3) s.fail(format_msg("invalid export kind %u", kind));
          ex.kind = static_cast<ExternKind>(kind);
          ex.index = s.u32_leb();
          m.exports.push_back(std::move(ex));
        }
        break;
      }
      case kStartSection:
        m.start = s.u32_leb();
        break;
      case kElementSection: {
        uint32_t count = s.u32_leb();
        for (uint32_t i = 0; i < count; ++i) {
          uint32_t flags = s.u32_leb();
          if (flags != 0)
            s.fail("only active funcref element segments are supported");
          ElementSegment seg;
          auto e = detail::read_const_expr(s);
          if (e.is_global) {
            seg.offset_is_global = true;
            seg.offset_global_index = e.global_index;
          } else {
            if (e.type != ValType::I32) s.fail("element offset must be i32");
            seg.offset = static_cast<uint32_t>(e.value);
          }
          uint32_t n = s.u32_leb();
          for (uint32_t j = 0; j < n; ++j) seg.func_indices.push_back(s.u32_leb());
          m.elements.push_back(std::move(seg));
        }
        break;
      }
      case kCodeSection: {
        uint32_t count = s.u32_leb();
        if (count != m.function_type_indices.size())
          s.fail("code section count does not match function section");
        for (uint32_t i = 0; i < count; ++i) {
          uint32_t body_len = s.u32_leb();
          if (s.remaining() < body_len) s.fail("function body extends past section");
          size_t body_end = s.pos() + body_len;
          FunctionBody body;
          body.module_offset = s.offset();
          uint32_t nlocals = s.u32_leb();
          uint64_t total_locals = 0;
          for (uint32_t j = 0; j < nlocals; ++j) {
            LocalDecl d;
            d.count = s.u32_leb();
            d.type = detail::read_valtype(s);
            total_locals += d.count;
            if (total_locals > 50000) s.fail("too many locals");
            body.locals.push_back(d);
          }
          if (s.pos() > body_end) s.fail("local declarations exceed body size");
          size_t code_len = body_end - s.pos();
          byte_span code = s.bytes(code_len);
          if (code_len == 0 || code[code_len - 1] != op::kEnd)
            s.fail("function body does not terminate with end");
          body.code.assign(code.begin(), code.end());
          m.bodies.push_back(std::move(body));
        }
        break;
      }
      case kDataCountSection:
        seen_datacount = true;
        declared_data_count = s.u32_leb();
        break;
      case kDataSection: {
        uint32_t count = s.u32_leb();
        if (seen_datacount && count != declared_data_count)
          s.fail("data count section disagrees with data section");
        for (uint32_t i = 0; i < count; ++i) {
          uint32_t flags = s.u32_leb();
          if (flags != 0)
            s.fail("only active data segments for memory 0 are supported");
          DataSegment seg;
          auto e = detail::read_const_expr(s);
          if (e.is_global) {
            seg.offset_is_global = true;
            seg.offset_global_index = e.global_index;
          } else {
            if (e.type != ValType::I32) s.fail("data offset must be i32");
            seg.offset = static_cast<uint32_t>(e.value);
          }
          uint32_t n = s.u32_leb();
          byte_span b = s.bytes(n);
          seg.bytes.assign(b.begin(), b.end());
          m.data.push_back(std::move(seg));
        }
        break;
      }
      default:
        r.fail(format_msg("unknown section id %u", id));
    }

    if (id != kCustomSection && !s.done()) s.fail("trailing bytes in section");
    r.skip(section_len - (r.pos() - section_start));
  }

  if (m.function_type_indices.size() != m.bodies.size())
    r.fail("function section count does not match code section");

  // Function index space: imports first, then defined functions.
  m.imported_func_count = 0;
  for (const auto& im : m.imports)
    if (im.kind == ExternKind::Func) ++m.imported_func_count;
  m.all_func_type_indices.reserve(m.imported_func_count + m.function_type_indices.size());
  for (const auto& im : m.imports)
    if (im.kind == ExternKind::Func) m.all_func_type_indices.push_back(im.type_index);
  for (uint32_t ti : m.function_type_indices) m.all_func_type_indices.push_back(ti);

  // Index sanity that instantiation relies on. Deeper checks live in validate().
  for (uint32_t ti : m.all_func_type_indices)
    if (ti >= m.types.size()) r.fail("function type index out of range");

  return m;
}

} // namespace wali::wasm
