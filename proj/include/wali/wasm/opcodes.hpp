// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace wali::wasm::op {

// Control
constexpr uint8_t kUnreachable = 0x00;
constexpr uint8_t kNop = 0x01;
constexpr uint8_t kBlock = 0x02;
constexpr uint8_t kLoop = 0x03;
constexpr uint8_t kIf = 0x04;
constexpr uint8_t kElse = 0x05;
constexpr uint8_t kEnd = 0x0B;
constexpr uint8_t kBr = 0x0C;
constexpr uint8_t kBrIf = 0x0D;
constexpr uint8_t kBrTable = 0x0E;
constexpr uint8_t kReturn = 0x0F;
constexpr uint8_t kCall = 0x10;
constexpr uint8_t kCallIndirect = 0x11;

// Parametric
constexpr uint8_t kDrop = 0x1A;
constexpr uint8_t kSelect = 0x1B;
constexpr uint8_t kSelectT = 0x1C;

// Variable
constexpr uint8_t kLocalGet = 0x20;
constexpr uint8_t kLocalSet = 0x21;
constexpr uint8_t kLocalTee = 0x22;
constexpr uint8_t kGlobalGet = 0x23;
constexpr uint8_t kGlobalSet = 0x24;

// Memory
constexpr uint8_t kI32Load = 0x28;
constexpr uint8_t kI64Load = 0x29;
constexpr uint8_t kF32Load = 0x2A;
constexpr uint8_t kF64Load = 0x2B;
constexpr uint8_t kI32Load8S = 0x2C;
constexpr uint8_t kI32Load8U = 0x2D;
constexpr uint8_t kI32Load16S = 0x2E;
constexpr uint8_t kI32Load16U = 0x2F;
constexpr uint8_t kI64Load8S = 0x30;
constexpr uint8_t kI64Load8U = 0x31;
constexpr uint8_t kI64Load16S = 0x32;
constexpr uint8_t kI64Load16U = 0x33;
constexpr uint8_t kI64Load32S = 0x34;
constexpr uint8_t kI64Load32U = 0x35;
constexpr uint8_t kI32Store = 0x36;
constexpr uint8_t kI64Store = 0x37;
constexpr uint8_t kF32Store = 0x38;
constexpr uint8_t kF64Store = 0x39;
constexpr uint8_t kI32Store8 = 0x3A;
constexpr uint8_t kI32Store16 = 0x3B;
constexpr uint8_t kI64Store8 = 0x3C;
constexpr uint8_t kI64Store16 = 0x3D;
constexpr uint8_t kI64Store32 = 0x3E;
constexpr uint8_t kMemorySize = 0x3F;
constexpr uint8_t kMemoryGrow = 0x40;

// Constants
constexpr uint8_t kI32Const = 0x41;
constexpr uint8_t kI64Const = 0x42;
constexpr uint8_t kF32Const = 0x43;
constexpr uint8_t kF64Const = 0x44;

// 0xFC-prefixed (saturating truncation, bulk memory)
constexpr uint8_t kPrefixFC = 0xFC;
constexpr uint32_t kFcMemoryInit = 8;
constexpr uint32_t kFcDataDrop = 9;
constexpr uint32_t kFcMemoryCopy = 10;
constexpr uint32_t kFcMemoryFill = 11;

enum class Imm : uint8_t {
  None,        // no immediates
  BlockType,   // s33 block type
  Index,       // one u32 index
  IndexIndex,  // two u32 indices (call_indirect: type, table)
  BrTable,     // vector of labels + default
  MemArg,      // align + offset
  MemIndex,    // one 0x00 reserved byte (memory.size/grow)
  I32,         // s32 LEB constant
  I64,         // s64 LEB constant
  F32,         // 4 raw bytes
  F64,         // 8 raw bytes
  SelectT,     // vector of value types
  Prefixed,    // u32 sub-opcode with its own immediates
};

// Immediate layout for one-byte opcodes; Imm::None for anything the decoder
// rejects later as unknown.
inline Imm imm_kind(uint8_t opcode) {
  switch (opcode) {
    case kBlock:
    case kLoop:
    case kIf:
      return Imm::BlockType;
    case kBr:
    case kBrIf:
    case kCall:
    case kLocalGet:
    case kLocalSet:
    case kLocalTee:
    case kGlobalGet:
    case kGlobalSet:
      return Imm::Index;
    case kCallIndirect:
      return Imm::IndexIndex;
    case kBrTable:
      return Imm::BrTable;
    case kI32Const:
      return Imm::I32;
    case kI64Const:
      return Imm::I64;
    case kF32Const:
      return Imm::F32;
    case kF64Const:
      return Imm::F64;
    case kSelectT:
      return Imm::SelectT;
    case kMemorySize:
    case kMemoryGrow:
      return Imm::MemIndex;
    case kPrefixFC:
      return Imm::Prefixed;
    default:
      if (opcode >= kI32Load && opcode <= kI64Store32) return Imm::MemArg;
      return Imm::None;
  }
}

} // namespace wali::wasm::op
