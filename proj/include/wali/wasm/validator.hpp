// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <unordered_set>

#include "wali/common.hpp"
#include "wali/wasm/module.hpp"
#include "wali/wasm/parser.hpp"

namespace wali::wasm {

/// Known proposal opcode that this engine does not implement (SIMD, GC,
/// reference types, atomics). Distinct from malformed input.
class UnsupportedFeature : public ValidationError {
public:
  explicit UnsupportedFeature(std::string reason) : ValidationError(std::move(reason)) {}
};

namespace detail {

struct BlockSig {
  std::vector<ValType> params;
  std::vector<ValType> results;
};

inline BlockSig read_block_type(ByteReader& r, const Module& m) {
  int64_t v = r.i64_leb(); // s33 fits
  if (v >= 0) {
    if (static_cast<uint64_t>(v) >= m.types.size())
      throw ValidationError(format_msg("block type index %lld out of range", (long long)v));
    const FuncType& ft = m.types[static_cast<size_t>(v)];
    return {ft.params, ft.results};
  }
  switch (v & 0x7F) {
    case 0x40: return {{}, {}};
    case 0x7F: return {{}, {ValType::I32}};
    case 0x7E: return {{}, {ValType::I64}};
    case 0x7D: return {{}, {ValType::F32}};
    case 0x7C: return {{}, {ValType::F64}};
    default:
      throw ValidationError(format_msg("invalid block type 0x%02x", (unsigned)(v & 0x7F)));
  }
}

// Type checker for one function body: the textbook two-stack algorithm with
// an explicit unreachable mode per control frame.
class BodyChecker {
public:
  BodyChecker(const Module& m, uint32_t func_index)
      : m_(m), type_(m.func_type(func_index)) {
    const FunctionBody& body = m.bodies[func_index - m.imported_func_count];
    locals_ = type_.params;
    for (const auto& d : body.locals)
      for (uint32_t i = 0; i < d.count; ++i) locals_.push_back(d.type);
    code_ = byte_span(body.code);
    func_index_ = func_index;
  }

  void check() {
    ByteReader r(code_);
    push_ctrl(op::kBlock, {}, type_.results);
    while (!ctrls_.empty()) {
      if (r.done()) throw ValidationError(err("unterminated function body"));
      step(r);
    }
    if (!r.done()) throw ValidationError(err("instructions after function end"));
  }

private:
  std::string err(const std::string& why) const {
    return format_msg("func %u: %s", func_index_, why.c_str());
  }

  struct Ctrl {
    uint8_t opcode;
    std::vector<ValType> params;
    std::vector<ValType> results;
    size_t height;
    bool unreachable = false;
  };

  void push_val(ValType t) { vals_.push_back(t); }

  ValType pop_val() {
    Ctrl& c = ctrls_.back();
    if (vals_.size() == c.height) {
      if (c.unreachable) return ValType::I32; // polymorphic stand-in; caller ignores
      throw ValidationError(err("value stack underflow"));
    }
    ValType t = vals_.back();
    vals_.pop_back();
    return t;
  }

  ValType pop_expect(ValType want) {
    Ctrl& c = ctrls_.back();
    if (vals_.size() == c.height && c.unreachable) return want;
    ValType got = pop_val();
    if (got != want)
      throw ValidationError(err(format_msg("expected %s, found %s", name(want), name(got))));
    return got;
  }

  void pop_expect_many(const std::vector<ValType>& types) {
    for (auto it = types.rbegin(); it != types.rend(); ++it) pop_expect(*it);
  }

  void push_many(const std::vector<ValType>& types) {
    for (ValType t : types) push_val(t);
  }

  void push_ctrl(uint8_t opcode, std::vector<ValType> params, std::vector<ValType> results) {
    push_many(params);
    ctrls_.push_back({opcode, std::move(params), std::move(results), vals_.size(), false});
    ctrls_.back().height -= ctrls_.back().params.size();
  }

  Ctrl pop_ctrl() {
    if (ctrls_.empty()) throw ValidationError(err("control stack underflow"));
    Ctrl c = ctrls_.back();
    pop_expect_many(c.results);
    if (vals_.size() != c.height && !(c.unreachable && vals_.size() <= c.height))
      throw ValidationError(err("values left on stack at end of block"));
    vals_.resize(c.height);
    ctrls_.pop_back();
    return c;
  }

  void set_unreachable() {
    Ctrl& c = ctrls_.back();
    vals_.resize(c.height);
    c.unreachable = true;
  }

  const std::vector<ValType>& label_types(const Ctrl& c) const {
    return c.opcode == op::kLoop ? c.params : c.results;
  }

  Ctrl& ctrl_at(uint32_t depth) {
    if (depth >= ctrls_.size())
      throw ValidationError(err(format_msg("branch depth %u out of range", depth)));
    return ctrls_[ctrls_.size() - 1 - depth];
  }

  ValType local_type(uint32_t idx) const {
    if (idx >= locals_.size())
      throw ValidationError(err(format_msg("local index %u out of range", idx)));
    return locals_[idx];
  }

  struct GlobalInfo {
    ValType type;
    bool mutable_;
  };

  GlobalInfo global_info(uint32_t idx) const {
    uint32_t n = 0;
    for (const auto& im : m_.imports) {
      if (im.kind != ExternKind::Global) continue;
      if (n == idx) return {im.global_type, im.global_mutable};
      ++n;
    }
    uint32_t defined = idx - n;
    if (defined >= m_.globals.size())
      throw ValidationError(err(format_msg("global index %u out of range", idx)));
    return {m_.globals[defined].type, m_.globals[defined].mutable_};
  }

  void check_memarg(ByteReader& r, uint32_t natural_log2) {
    uint32_t align = r.u32_leb();
    if (align > natural_log2)
      throw ValidationError(err("alignment exceeds natural alignment"));
    r.u32_leb(); // offset
    if (m_.memories.empty() && !has_imported_memory())
      throw ValidationError(err("memory instruction without memory"));
  }

  bool has_imported_memory() const {
    return std::any_of(m_.imports.begin(), m_.imports.end(),
                       [](const Import& im) { return im.kind == ExternKind::Memory; });
  }

  void binop(ValType t) {
    pop_expect(t);
    pop_expect(t);
    push_val(t);
  }
  void unop(ValType t) {
    pop_expect(t);
    push_val(t);
  }
  void relop(ValType t) {
    pop_expect(t);
    pop_expect(t);
    push_val(ValType::I32);
  }
  void cvt(ValType from, ValType to) {
    pop_expect(from);
    push_val(to);
  }
  void load(ByteReader& r, ValType t, uint32_t natural_log2) {
    check_memarg(r, natural_log2);
    pop_expect(ValType::I32);
    push_val(t);
  }
  void store(ByteReader& r, ValType t, uint32_t natural_log2) {
    check_memarg(r, natural_log2);
    pop_expect(t);
    pop_expect(ValType::I32);
  }

  void step(ByteReader& r) {
    uint8_t opcode = r.u8();
    using namespace op;
    switch (opcode) {
      case kUnreachable: set_unreachable(); break;
      case kNop: break;

      case kBlock: {
        auto sig = read_block_type(r, m_);
        pop_expect_many(sig.params);
        push_ctrl(kBlock, sig.params, sig.results);
        break;
      }
      case kLoop: {
        auto sig = read_block_type(r, m_);
        pop_expect_many(sig.params);
        push_ctrl(kLoop, sig.params, sig.results);
        break;
      }
      case kIf: {
        auto sig = read_block_type(r, m_);
        pop_expect(ValType::I32);
        pop_expect_many(sig.params);
        push_ctrl(kIf, sig.params, sig.results);
        break;
      }
      case kElse: {
        Ctrl c = pop_ctrl();
        if (c.opcode != kIf) throw ValidationError(err("else without matching if"));
        push_ctrl(kElse, c.params, c.results);
        break;
      }
      case kEnd: {
        Ctrl c = pop_ctrl();
        if (c.opcode == kIf && c.params != c.results)
          throw ValidationError(err("if without else requires matching param/result types"));
        push_many(c.results);
        break;
      }
      case kBr: {
        uint32_t depth = r.u32_leb();
        pop_expect_many(label_types(ctrl_at(depth)));
        set_unreachable();
        break;
      }
      case kBrIf: {
        uint32_t depth = r.u32_leb();
        pop_expect(ValType::I32);
        const auto types = label_types(ctrl_at(depth));
        pop_expect_many(types);
        push_many(types);
        break;
      }
      case kBrTable: {
        uint32_t count = r.u32_leb();
        std::vector<uint32_t> targets(count);
        for (auto& t : targets) t = r.u32_leb();
        uint32_t def = r.u32_leb();
        const auto def_types = label_types(ctrl_at(def));
        for (uint32_t t : targets) {
          if (label_types(ctrl_at(t)).size() != def_types.size())
            throw ValidationError(err("br_table targets have inconsistent arity"));
        }
        pop_expect(ValType::I32);
        pop_expect_many(def_types);
        set_unreachable();
        break;
      }
      case kReturn:
        pop_expect_many(type_.results);
        set_unreachable();
        break;
      case kCall: {
        uint32_t idx = r.u32_leb();
        if (idx >= m_.num_funcs())
          throw ValidationError(err(format_msg("call target %u out of range", idx)));
        const FuncType& ft = m_.func_type(idx);
        pop_expect_many(ft.params);
        push_many(ft.results);
        break;
      }
      case kCallIndirect: {
        uint32_t type_idx = r.u32_leb();
        uint32_t table_idx = r.u32_leb();
        if (type_idx >= m_.types.size())
          throw ValidationError(err("call_indirect type index out of range"));
        if (table_idx != 0 || (m_.tables.empty() && !has_imported_table()))
          throw ValidationError(err("call_indirect requires table 0"));
        const FuncType& ft = m_.types[type_idx];
        pop_expect(ValType::I32);
        pop_expect_many(ft.params);
        push_many(ft.results);
        break;
      }

      case kDrop: pop_val(); break;
      case kSelect: {
        pop_expect(ValType::I32);
        ValType a = pop_val();
        ValType b = pop_val();
        if (a != b && !ctrls_.back().unreachable)
          throw ValidationError(err("select operand types differ"));
        push_val(a);
        break;
      }
      case kSelectT: {
        uint32_t n = r.u32_leb();
        if (n != 1) throw ValidationError(err("select with multiple types"));
        ValType t = detail::read_valtype(r);
        pop_expect(ValType::I32);
        pop_expect(t);
        pop_expect(t);
        push_val(t);
        break;
      }

      case kLocalGet: push_val(local_type(r.u32_leb())); break;
      case kLocalSet: pop_expect(local_type(r.u32_leb())); break;
      case kLocalTee: {
        ValType t = local_type(r.u32_leb());
        pop_expect(t);
        push_val(t);
        break;
      }
      case kGlobalGet: push_val(global_info(r.u32_leb()).type); break;
      case kGlobalSet: {
        GlobalInfo g = global_info(r.u32_leb());
        if (!g.mutable_) throw ValidationError(err("assignment to immutable global"));
        pop_expect(g.type);
        break;
      }

      case kI32Load: load(r, ValType::I32, 2); break;
      case kI64Load: load(r, ValType::I64, 3); break;
      case kF32Load: load(r, ValType::F32, 2); break;
      case kF64Load: load(r, ValType::F64, 3); break;
      case kI32Load8S:
      case kI32Load8U: load(r, ValType::I32, 0); break;
      case kI32Load16S:
      case kI32Load16U: load(r, ValType::I32, 1); break;
      case kI64Load8S:
      case kI64Load8U: load(r, ValType::I64, 0); break;
      case kI64Load16S:
      case kI64Load16U: load(r, ValType::I64, 1); break;
      case kI64Load32S:
      case kI64Load32U: load(r, ValType::I64, 2); break;
      case kI32Store: store(r, ValType::I32, 2); break;
      case kI64Store: store(r, ValType::I64, 3); break;
      case kF32Store: store(r, ValType::F32, 2); break;
      case kF64Store: store(r, ValType::F64, 3); break;
      case kI32Store8: store(r, ValType::I32, 0); break;
      case kI32Store16: store(r, ValType::I32, 1); break;
      case kI64Store8: store(r, ValType::I64, 0); break;
      case kI64Store16: store(r, ValType::I64, 1); break;
      case kI64Store32: store(r, ValType::I64, 2); break;

      case kMemorySize:
        if (r.u8() != 0) throw ValidationError(err("nonzero memory index"));
        push_val(ValType::I32);
        break;
      case kMemoryGrow:
        if (r.u8() != 0) throw ValidationError(err("nonzero memory index"));
        pop_expect(ValType::I32);
        push_val(ValType::I32);
        break;

      case kI32Const: r.i32_leb(); push_val(ValType::I32); break;
      case kI64Const: r.i64_leb(); push_val(ValType::I64); break;
      case kF32Const: r.f32_bits(); push_val(ValType::F32); break;
      case kF64Const: r.f64_bits(); push_val(ValType::F64); break;

      case 0x45: unop(ValType::I32); break;          // i32.eqz: i32 -> i32
      case 0x46: case 0x47: case 0x48: case 0x49: case 0x4A:
      case 0x4B: case 0x4C: case 0x4D: case 0x4E: case 0x4F:
        relop(ValType::I32);
        break;
      case 0x50: cvt(ValType::I64, ValType::I32); break; // i64.eqz
      case 0x51: case 0x52: case 0x53: case 0x54: case 0x55:
      case 0x56: case 0x57: case 0x58: case 0x59: case 0x5A:
        relop(ValType::I64);
        break;
      case 0x5B: case 0x5C: case 0x5D: case 0x5E: case 0x5F: case 0x60:
        relop(ValType::F32);
        break;
      case 0x61: case 0x62: case 0x63: case 0x64: case 0x65: case 0x66:
        relop(ValType::F64);
        break;

      case 0x67: case 0x68: case 0x69: unop(ValType::I32); break; // clz/ctz/popcnt
      case 0x6A: case 0x6B: case 0x6C: case 0x6D: case 0x6E: case 0x6F:
      case 0x70: case 0x71: case 0x72: case 0x73: case 0x74: case 0x75:
      case 0x76: case 0x77: case 0x78:
        binop(ValType::I32);
        break;
      case 0x79: case 0x7A: case 0x7B: unop(ValType::I64); break;
      case 0x7C: case 0x7D: case 0x7E: case 0x7F: case 0x80: case 0x81:
      case 0x82: case 0x83: case 0x84: case 0x85: case 0x86: case 0x87:
      case 0x88: case 0x89: case 0x8A:
        binop(ValType::I64);
        break;
      case 0x8B: case 0x8C: case 0x8D: case 0x8E: case 0x8F:
      case 0x90: case 0x91: unop(ValType::F32); break;
      case 0x92: case 0x93: case 0x94: case 0x95: case 0x96: case 0x97: case 0x98:
        binop(ValType::F32);
        break;
      case 0x99: case 0x9A: case 0x9B: case 0x9C: case 0x9D:
      case 0x9E: case 0x9F: unop(ValType::F64); break;
      case 0xA0: case 0xA1: case 0xA2: case 0xA3: case 0xA4: case 0xA5: case 0xA6:
        binop(ValType::F64);
        break;

      case 0xA7: cvt(ValType::I64, ValType::I32); break;
      case 0xA8: case 0xA9: cvt(ValType::F32, ValType::I32); break;
      case 0xAA: case 0xAB: cvt(ValType::F64, ValType::I32); break;
      case 0xAC: case 0xAD: cvt(ValType::I32, ValType::I64); break;
      case 0xAE: case 0xAF: cvt(ValType::F32, ValType::I64); break;
      case 0xB0: case 0xB1: cvt(ValType::F64, ValType::I64); break;
      case 0xB2: case 0xB3: cvt(ValType::I32, ValType::F32); break;
      case 0xB4: case 0xB5: cvt(ValType::I64, ValType::F32); break;
      case 0xB6: cvt(ValType::F64, ValType::F32); break;
      case 0xB7: case 0xB8: cvt(ValType::I32, ValType::F64); break;
      case 0xB9: case 0xBA: cvt(ValType::I64, ValType::F64); break;
      case 0xBB: cvt(ValType::F32, ValType::F64); break;
      case 0xBC: cvt(ValType::F32, ValType::I32); break;
      case 0xBD: cvt(ValType::F64, ValType::I64); break;
      case 0xBE: cvt(ValType::I32, ValType::F32); break;
      case 0xBF: cvt(ValType::I64, ValType::F64); break;

      case 0xC0: case 0xC1: unop(ValType::I32); break; // extend8/16_s
      case 0xC2: case 0xC3: case 0xC4: unop(ValType::I64); break;

      case kPrefixFC: {
        uint32_t sub = r.u32_leb();
        switch (sub) {
          case 0: case 1: cvt(ValType::F32, ValType::I32); break; // sat trunc
          case 2: case 3: cvt(ValType::F64, ValType::I32); break;
          case 4: case 5: cvt(ValType::F32, ValType::I64); break;
          case 6: case 7: cvt(ValType::F64, ValType::I64); break;
          case kFcMemoryCopy:
            if (r.u8() != 0 || r.u8() != 0)
              throw ValidationError(err("nonzero memory index"));
            pop_expect(ValType::I32);
            pop_expect(ValType::I32);
            pop_expect(ValType::I32);
            break;
          case kFcMemoryFill:
            if (r.u8() != 0) throw ValidationError(err("nonzero memory index"));
            pop_expect(ValType::I32);
            pop_expect(ValType::I32);
            pop_expect(ValType::I32);
            break;
          default:
            throw UnsupportedFeature(
                err(format_msg("unsupported 0xFC sub-opcode %u (bulk-memory/table extension)", sub)));
        }
        break;
      }

      case 0xFD:
        throw UnsupportedFeature(err("SIMD (0xFD prefix) is not supported"));
      case 0xFE:
        throw UnsupportedFeature(err("threads/atomics (0xFE prefix) are not supported"));
      case 0xFB:
        throw UnsupportedFeature(err("GC (0xFB prefix) is not supported"));
      case 0xD0: case 0xD1: case 0xD2:
        throw UnsupportedFeature(err("reference-type instructions are not supported"));

      default:
        throw ValidationError(err(format_msg("invalid opcode 0x%02x", opcode)));
    }
  }

  const Module& m_;
  const FuncType& type_;
  uint32_t func_index_ = 0;
  std::vector<ValType> locals_;
  byte_span code_;
  std::vector<ValType> vals_;
  std::vector<Ctrl> ctrls_;

  bool has_imported_table() const {
    return std::any_of(m_.imports.begin(), m_.imports.end(),
                       [](const Import& im) { return im.kind == ExternKind::Table; });
  }
};

} // namespace detail

/// Module-level checks plus a full type check of every body. Throws
/// ValidationError (or UnsupportedFeature) on the first defect.
inline void validate(const Module& m) {
  if (m.memories.size() > 1) throw ValidationError("at most one memory is supported");
  if (m.tables.size() > 1) throw ValidationError("at most one table is supported");
  for (const auto& mem : m.memories) {
    if (mem.min > 65536 || (mem.max && *mem.max > 65536))
      throw ValidationError("memory limits exceed 4GiB");
  }

  uint32_t imported_globals = 0;
  for (const auto& im : m.imports) {
    if (im.kind == ExternKind::Func && im.type_index >= m.types.size())
      throw ValidationError("imported function type index out of range");
    if (im.kind == ExternKind::Global) ++imported_globals;
    if (im.kind == ExternKind::Memory || im.kind == ExternKind::Table)
      throw ValidationError(format_msg("imported %s are not supported by this engine",
                                       im.kind == ExternKind::Memory ? "memories" : "tables"));
  }

  for (size_t i = 0; i < m.globals.size(); ++i) {
    const auto& g = m.globals[i];
    if (g.init_is_global && g.init_global_index >= imported_globals)
      throw ValidationError("global initializer must reference an imported global");
  }

  std::unordered_set<std::string> export_names;
  for (const auto& e : m.exports) {
    if (!export_names.insert(e.name).second)
      throw ValidationError(format_msg("duplicate export name '%s'", e.name.c_str()));
    uint32_t limit = 0;
    switch (e.kind) {
      case ExternKind::Func: limit = m.num_funcs(); break;
      case ExternKind::Table: limit = static_cast<uint32_t>(m.tables.size()); break;
      case ExternKind::Memory: limit = static_cast<uint32_t>(m.memories.size()); break;
      case ExternKind::Global:
        limit = imported_globals + static_cast<uint32_t>(m.globals.size());
        break;
    }
    if (e.index >= limit)
      throw ValidationError(format_msg("export '%s' index out of range", e.name.c_str()));
  }

  if (m.start) {
    if (*m.start >= m.num_funcs()) throw ValidationError("start function index out of range");
    const FuncType& ft = m.func_type(*m.start);
    if (!ft.params.empty() || !ft.results.empty())
      throw ValidationError("start function must have type ()->()");
  }

  for (const auto& seg : m.elements) {
    if (seg.table_index != 0 || m.tables.empty())
      throw ValidationError("element segment requires table 0");
    for (uint32_t f : seg.func_indices)
      if (f >= m.num_funcs()) throw ValidationError("element segment function index out of range");
  }
  for (const auto& seg : m.data) {
    if (seg.memory_index != 0 || m.memories.empty())
      throw ValidationError("data segment requires memory 0");
  }

  for (uint32_t i = 0; i < m.function_type_indices.size(); ++i) {
    detail::BodyChecker checker(m, m.imported_func_count + i);
    checker.check();
  }
}

} // namespace wali::wasm
