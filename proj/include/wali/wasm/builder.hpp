// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wali/wasm/encoder.hpp"

namespace wali::wasm {

/// Body assembler used by ModuleBuilder. Thin sugar over ByteWriter; anything
/// without a helper can be emitted through op()/raw().
class CodeBuilder {
public:
  CodeBuilder& op(uint8_t opcode) {
    w_.u8(opcode);
    return *this;
  }
  CodeBuilder& op_u32(uint8_t opcode, uint32_t imm) {
    w_.u8(opcode);
    w_.u32_leb(imm);
    return *this;
  }
  CodeBuilder& i32_const(int32_t v) {
    w_.u8(op::kI32Const);
    w_.i32_leb(v);
    return *this;
  }
  CodeBuilder& i64_const(int64_t v) {
    w_.u8(op::kI64Const);
    w_.i64_leb(v);
    return *this;
  }
  CodeBuilder& local_get(uint32_t i) { return op_u32(op::kLocalGet, i); }
  CodeBuilder& local_set(uint32_t i) { return op_u32(op::kLocalSet, i); }
  CodeBuilder& local_tee(uint32_t i) { return op_u32(op::kLocalTee, i); }
  CodeBuilder& global_get(uint32_t i) { return op_u32(op::kGlobalGet, i); }
  CodeBuilder& global_set(uint32_t i) { return op_u32(op::kGlobalSet, i); }
  CodeBuilder& call(uint32_t i) { return op_u32(op::kCall, i); }
  CodeBuilder& call_indirect(uint32_t type_idx) {
    w_.u8(op::kCallIndirect);
    w_.u32_leb(type_idx);
    w_.u8(0);
    return *this;
  }
  CodeBuilder& br(uint32_t depth) { return op_u32(op::kBr, depth); }
  CodeBuilder& br_if(uint32_t depth) { return op_u32(op::kBrIf, depth); }

  /// Empty-result block type; pass a ValType for a single result.
  CodeBuilder& block() { return block_like(op::kBlock); }
  CodeBuilder& block(ValType t) { return block_like(op::kBlock, t); }
  CodeBuilder& loop() { return block_like(op::kLoop); }
  CodeBuilder& loop(ValType t) { return block_like(op::kLoop, t); }
  CodeBuilder& if_() { return block_like(op::kIf); }
  CodeBuilder& if_(ValType t) { return block_like(op::kIf, t); }
  CodeBuilder& else_() { return op(op::kElse); }
  CodeBuilder& end() { return op(op::kEnd); }

  CodeBuilder& i32_load(uint32_t offset, uint32_t align_log2 = 2) {
    return memarg(op::kI32Load, offset, align_log2);
  }
  CodeBuilder& i32_store(uint32_t offset, uint32_t align_log2 = 2) {
    return memarg(op::kI32Store, offset, align_log2);
  }
  CodeBuilder& i64_load(uint32_t offset, uint32_t align_log2 = 3) {
    return memarg(op::kI64Load, offset, align_log2);
  }
  CodeBuilder& i64_store(uint32_t offset, uint32_t align_log2 = 3) {
    return memarg(op::kI64Store, offset, align_log2);
  }
  CodeBuilder& memarg(uint8_t opcode, uint32_t offset, uint32_t align_log2) {
    w_.u8(opcode);
    w_.u32_leb(align_log2);
    w_.u32_leb(offset);
    return *this;
  }

  CodeBuilder& raw(byte_span bytes) {
    w_.bytes(bytes);
    return *this;
  }

  /// Appends the body terminator and returns the bytes.
  std::vector<uint8_t> finish() {
    w_.u8(op::kEnd);
    return w_.take();
  }

  /// Returns the bytes as-is; the caller has already emitted the terminator.
  std::vector<uint8_t> take() { return w_.take(); }

private:
  CodeBuilder& block_like(uint8_t opcode) {
    w_.u8(opcode);
    w_.u8(0x40);
    return *this;
  }
  CodeBuilder& block_like(uint8_t opcode, ValType t) {
    w_.u8(opcode);
    w_.valtype(t);
    return *this;
  }
  ByteWriter w_;
};

/// Builds small modules for tests without round-tripping through text format.
/// Imports must be declared before defined functions so indices stay stable.
class ModuleBuilder {
public:
  uint32_t add_type(FuncType ft) {
    for (uint32_t i = 0; i < m_.types.size(); ++i)
      if (m_.types[i] == ft) return i;
    m_.types.push_back(std::move(ft));
    return static_cast<uint32_t>(m_.types.size() - 1);
  }

  uint32_t import_func(const std::string& module, const std::string& field, FuncType ft) {
    if (!m_.function_type_indices.empty())
      throw ConfigError("imports must be declared before defined functions");
    Import im;
    im.module = module;
    im.field = field;
    im.kind = ExternKind::Func;
    im.type_index = add_type(std::move(ft));
    m_.imports.push_back(std::move(im));
    return m_.imported_func_count++;
  }

  /// locals: repeat counts by type, e.g. {{2, ValType::I32}}.
  uint32_t add_func(FuncType ft, std::vector<LocalDecl> locals, std::vector<uint8_t> code) {
    uint32_t type_idx = add_type(std::move(ft));
    m_.function_type_indices.push_back(type_idx);
    FunctionBody body;
    body.locals = std::move(locals);
    body.code = std::move(code);
    m_.bodies.push_back(std::move(body));
    return m_.imported_func_count + static_cast<uint32_t>(m_.bodies.size()) - 1;
  }

  void add_memory(uint32_t min_pages, std::optional<uint32_t> max_pages = std::nullopt) {
    m_.memories.push_back({min_pages, max_pages});
  }

  void add_table(uint32_t min, std::optional<uint32_t> max = std::nullopt) {
    m_.tables.push_back({min, max});
  }

  uint32_t add_global(ValType t, bool mutable_, uint64_t init_bits) {
    GlobalDef g;
    g.type = t;
    g.mutable_ = mutable_;
    g.init_value = init_bits;
    m_.globals.push_back(g);
    uint32_t imported = 0;
    for (const auto& im : m_.imports)
      if (im.kind == ExternKind::Global) ++imported;
    return imported + static_cast<uint32_t>(m_.globals.size() - 1);
  }

  void export_func(const std::string& name, uint32_t index) {
    m_.exports.push_back({name, ExternKind::Func, index});
  }
  void export_memory(const std::string& name, uint32_t index = 0) {
    m_.exports.push_back({name, ExternKind::Memory, index});
  }
  void export_global(const std::string& name, uint32_t index) {
    m_.exports.push_back({name, ExternKind::Global, index});
  }
  void export_table(const std::string& name, uint32_t index = 0) {
    m_.exports.push_back({name, ExternKind::Table, index});
  }

  void add_element(uint32_t offset, std::vector<uint32_t> funcs) {
    ElementSegment seg;
    seg.table_index = 0;
    seg.offset = offset;
    seg.offset_is_global = false;
    seg.func_indices = std::move(funcs);
    m_.elements.push_back(std::move(seg));
  }

  void add_data(uint32_t offset, std::vector<uint8_t> bytes) {
    DataSegment seg;
    seg.memory_index = 0;
    seg.offset = offset;
    seg.offset_is_global = false;
    seg.bytes = std::move(bytes);
    m_.data.push_back(std::move(seg));
  }

  void set_start(uint32_t func_index) { m_.start = func_index; }

  std::vector<uint8_t> build() {
    Module copy = m_;
    copy.all_func_type_indices.clear();
    for (const auto& im : copy.imports)
      if (im.kind == ExternKind::Func) copy.all_func_type_indices.push_back(im.type_index);
    copy.all_func_type_indices.insert(copy.all_func_type_indices.end(),
                                      copy.function_type_indices.begin(),
                                      copy.function_type_indices.end());
    return encode_module(copy);
  }

private:
  Module m_;
};

} // namespace wali::wasm
