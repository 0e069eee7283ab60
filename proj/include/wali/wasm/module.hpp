// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "wali/wasm/types.hpp"

namespace wali::wasm {

// Section ids per the binary format.
enum SectionId : uint8_t {
  kCustomSection = 0,
  kTypeSection = 1,
  kImportSection = 2,
  kFunctionSection = 3,
  kTableSection = 4,
  kMemorySection = 5,
  kGlobalSection = 6,
  kExportSection = 7,
  kStartSection = 8,
  kElementSection = 9,
  kCodeSection = 10,
  kDataSection = 11,
  kDataCountSection = 12,
};

struct Import {
  std::string module;
  std::string field;
  ExternKind kind = ExternKind::Func;
  uint32_t type_index = 0; // funcs
  Limits limits;           // tables/memories
  ValType global_type = ValType::I32;
  bool global_mutable = false;
};

struct GlobalDef {
  ValType type = ValType::I32;
  bool mutable_ = false;
  // Init expression: either a constant or a copy of an imported global.
  uint64_t init_value = 0;   // raw bits for const init
  bool init_is_global = false;
  uint32_t init_global_index = 0;
};

struct Export {
  std::string name;
  ExternKind kind = ExternKind::Func;
  uint32_t index = 0;
};

struct ElementSegment {
  uint32_t table_index = 0;
  uint32_t offset = 0;     // evaluated i32.const offset
  bool offset_is_global = false;
  uint32_t offset_global_index = 0;
  std::vector<uint32_t> func_indices;
};

struct DataSegment {
  uint32_t memory_index = 0;
  uint32_t offset = 0;
  bool offset_is_global = false;
  uint32_t offset_global_index = 0;
  std::vector<uint8_t> bytes;
};

struct LocalDecl {
  uint32_t count = 0;
  ValType type = ValType::I32;
};

struct FunctionBody {
  std::vector<LocalDecl> locals;
  std::vector<uint8_t> code;   // expression bytes including trailing 0x0B
  size_t module_offset = 0;    // byte offset of the body in the module, for diagnostics
};

struct CustomSection {
  std::string name;
  std::vector<uint8_t> payload;
};

struct Module {
  std::vector<FuncType> types;
  std::vector<Import> imports;
  std::vector<uint32_t> function_type_indices; // defined functions only
  std::vector<Limits> tables;                  // funcref tables
  std::vector<Limits> memories;
  std::vector<GlobalDef> globals;
  std::vector<Export> exports;
  std::optional<uint32_t> start;
  std::vector<ElementSegment> elements;
  std::vector<FunctionBody> bodies;
  std::vector<DataSegment> data;
  std::vector<CustomSection> customs;

  // Filled by the parser: one type index per function, imports first.
  std::vector<uint32_t> all_func_type_indices;
  uint32_t imported_func_count = 0;

  uint32_t num_funcs() const { return static_cast<uint32_t>(all_func_type_indices.size()); }

  const FuncType& func_type(uint32_t func_index) const {
    return types[all_func_type_indices[func_index]];
  }

  const Export* find_export(std::string_view name, ExternKind kind) const {
    for (const auto& e : exports)
      if (e.kind == kind && e.name == name) return &e;
    return nullptr;
  }

  const CustomSection* find_custom(std::string_view name) const {
    for (const auto& c : customs)
      if (c.name == name) return &c;
    return nullptr;
  }
};

} // namespace wali::wasm
