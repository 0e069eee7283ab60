// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "wali/common.hpp"
#include "wali/wasm/module.hpp"

namespace wali {

class EngineThread;

/// Host import callback. `args` points at the argument slots; the return
/// value is the result bits (ignored for nullary results). May reenter the
/// guest through the owning EngineThread.
using HostFn = std::function<uint64_t(EngineThread&, uint64_t* args)>;

/// Hot-path imports the engine may dispatch without a full host call.
enum class Intrinsic : uint8_t {
  None,
  Sigcheck, // fast path: single relaxed atomic load, call out only when set
};

struct HostImport {
  std::string module;
  std::string field;
  wasm::FuncType type;
  HostFn fn;
  Intrinsic intrinsic = Intrinsic::None;
};

struct EngineConfig {
  /// Hard cap on linear memory, in 64KiB pages. 0 means "module limit".
  uint32_t max_pages = 0;
  uint32_t max_call_depth = 512;
  /// Initial value-stack capacity per thread, in 8-byte slots.
  size_t stack_slots = 1u << 18;
  /// Address of a std::atomic<uint64_t> consulted by the Sigcheck intrinsic
  /// fast path; the slow path (the bound host function) runs only when it is
  /// nonzero. May be null.
  const void* sigcheck_flag = nullptr;
};

/// Linear memory of one instance. The base address is stable for the life of
/// the instance: growth commits pages inside a fixed reservation, so host
/// code may hold raw pointers across guest calls.
class EngineMemory {
public:
  virtual ~EngineMemory() = default;
  virtual uint8_t* base() = 0;
  virtual uint32_t pages() const = 0;
  virtual uint32_t max_pages() const = 0;
  /// Returns previous page count, or -1 on failure.
  virtual int64_t grow(uint32_t delta_pages) = 0;
  /// Make [offset, offset+len) readable/writable regardless of the grown
  /// size. Used by the host mmap pool, which manages pages above the heap.
  virtual void commit(uint64_t offset, uint64_t len) = 0;

  size_t byte_size() const { return static_cast<size_t>(pages()) * kWasmPageSize; }
};

class EngineInstance;

/// One guest execution context: its own value stack, call depth and global
/// values over a shared instance. Each runtime thread owns exactly one.
class EngineThread {
public:
  virtual ~EngineThread() = default;

  virtual std::vector<uint64_t> call_function(uint32_t func_index,
                                              std::span<const uint64_t> args) = 0;
  virtual std::vector<uint64_t> call_export(std::string_view name,
                                            std::span<const uint64_t> args) = 0;
  /// Indirect call through the function table; used for virtual signal
  /// handler dispatch. Type-checked against `expected`.
  virtual std::vector<uint64_t> call_table(uint32_t slot, std::span<const uint64_t> args,
                                           const wasm::FuncType& expected) = 0;

  virtual std::optional<uint64_t> get_global(std::string_view export_name) = 0;
  virtual bool set_global(std::string_view export_name, uint64_t value) = 0;

  virtual EngineInstance& instance() = 0;

  /// True while this thread is somewhere inside guest code.
  virtual bool in_guest() const = 0;

  /// Embedder context (the runtime's per-thread state). Not owned.
  void* user = nullptr;
};

class EngineInstance {
public:
  virtual ~EngineInstance() = default;

  virtual EngineMemory& memory() = 0;
  virtual EngineThread& main_thread() = 0;
  /// New context for a spawned thread; globals start as a copy of `parent`'s
  /// current values.
  virtual std::unique_ptr<EngineThread> create_thread(EngineThread& parent) = 0;

  virtual std::optional<uint32_t> find_exported_func(std::string_view name) const = 0;
  virtual const wasm::Module& module() const = 0;
};

/// Builds a ready-to-run instance: validates, checks import bindings, sets up
/// memory/table/globals, runs active segments and the start function.
/// Throws ValidationError / InstantiationError. Defined by the engine
/// adapter (interpreter.hpp).
std::unique_ptr<EngineInstance> instantiate(std::shared_ptr<const wasm::Module> module,
                                            std::vector<HostImport> imports,
                                            const EngineConfig& config);

} // namespace wali
