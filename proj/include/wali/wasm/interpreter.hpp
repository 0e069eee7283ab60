// SPDX-License-Identifier: Apache-2.0
//
// The single engine adapter behind the bridge interface: a predecoding
// interpreter. Bodies are flattened to fixed-size instructions with resolved
// branch targets; values live in 8-byte slots on a per-thread stack.
//
// Linear memory is a PROT_NONE reservation sized past the 33-bit effective
// address limit. Growth commits pages in place, so the base address never
// moves and out-of-bounds guest accesses fault into a SIGSEGV handler that
// longjmps back to the innermost guest entry and rethrows as Trap. Interpreter
// frames hold no owning state, which keeps that longjmp leak-free.
#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <csignal>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>

#include <sys/mman.h>
#include <unistd.h>

#include "wali/bridge.hpp"
#include "wali/wasm/opcodes.hpp"
#include "wali/wasm/parser.hpp"
#include "wali/wasm/validator.hpp"

namespace wali::wasm {

class LinearMemory final : public EngineMemory {
public:
  // Covers index + offset immediate (2^33) plus the widest access.
  static constexpr uint64_t kReserve = (1ull << 33) + 0x10000;

  LinearMemory(uint32_t min_pages, uint32_t max_pages) : max_pages_(max_pages) {
    void* p = ::mmap(nullptr, kReserve, PROT_NONE,
                     MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
    if (p == MAP_FAILED) throw InstantiationError("cannot reserve linear memory");
    base_ = static_cast<uint8_t*>(p);
    if (min_pages != 0 && grow(min_pages) < 0) {
      ::munmap(base_, kReserve);
      throw InstantiationError("cannot commit initial linear memory");
    }
  }

  ~LinearMemory() override { ::munmap(base_, kReserve); }

  LinearMemory(const LinearMemory&) = delete;
  LinearMemory& operator=(const LinearMemory&) = delete;

  uint8_t* base() override { return base_; }
  uint32_t pages() const override { return pages_.load(std::memory_order_acquire); }
  uint32_t max_pages() const override { return max_pages_; }

  int64_t grow(uint32_t delta_pages) override {
    std::lock_guard<std::mutex> lock(mu_);
    uint32_t cur = pages_.load(std::memory_order_relaxed);
    if (delta_pages == 0) return cur;
    if (delta_pages > max_pages_ - cur) return -1;
    if (::mprotect(base_ + uint64_t(cur) * kWasmPageSize,
                   uint64_t(delta_pages) * kWasmPageSize, PROT_READ | PROT_WRITE) != 0)
      return -1;
    pages_.store(cur + delta_pages, std::memory_order_release);
    return cur;
  }

  void commit(uint64_t offset, uint64_t len) override {
    if (len == 0) return;
    uint64_t page = static_cast<uint64_t>(::sysconf(_SC_PAGESIZE));
    uint64_t lo = offset & ~(page - 1);
    uint64_t hi = (offset + len + page - 1) & ~(page - 1);
    if (hi > uint64_t(max_pages_) * kWasmPageSize)
      throw ConfigError("commit range exceeds memory limit");
    if (::mprotect(base_ + lo, hi - lo, PROT_READ | PROT_WRITE) != 0)
      throw ConfigError(format_msg("mprotect failed: %s", strerror(errno)));
  }

  bool contains(const void* p) const {
    const auto* b = static_cast<const uint8_t*>(p);
    return b >= base_ && b < base_ + kReserve;
  }

private:
  uint8_t* base_ = nullptr;
  std::atomic<uint32_t> pages_{0};
  uint32_t max_pages_;
  std::mutex mu_;
};

namespace detail {

// Internal opcodes. Values below 0x100 reuse the wire encoding.
enum : uint16_t {
  kOpJump = 0x100,
  kOpJumpIfZero = 0x101,
  kOpCallHost = 0x102,
  kOpCallWasm = 0x103,
  kOpSigcheck = 0x104,
  kOpReturn = 0x105,
  kOpFcBase = 0x200, // 0x200 + FC sub-opcode
};

struct Instr {
  uint16_t op = 0;
  uint16_t aux = 0;  // branch arity / host param count
  uint32_t idx = 0;  // jump target, local/global slot, func index, table base
  uint64_t imm = 0;  // const bits, memarg offset, branch unwind base
};

struct BrTarget {
  uint32_t pc = 0;
  uint32_t base = 0;
  uint32_t arity = 0;
};

struct PFunc {
  uint32_t nparams = 0;
  uint32_t nresults = 0;
  uint32_t nlocals = 0;    // params + declared locals
  uint32_t max_height = 0; // operand slots above locals
  std::vector<Instr> code;
  std::vector<BrTarget> br_targets;
};

// Stack effect of a non-control instruction, for height tracking during
// predecode. Control flow is handled structurally by the predecoder.
inline void plain_stack_effect(uint16_t iop, uint32_t& pops, uint32_t& pushes) {
  using namespace op;
  if (iop >= kOpFcBase) {
    uint32_t sub = iop - kOpFcBase;
    if (sub <= 7) { pops = 1; pushes = 1; }
    else { pops = 3; pushes = 0; } // memory.copy / memory.fill
    return;
  }
  uint8_t o = static_cast<uint8_t>(iop);
  if (o == kDrop) { pops = 1; pushes = 0; return; }
  if (o == kSelect || o == kSelectT) { pops = 3; pushes = 1; return; }
  if (o == kLocalGet || o == kGlobalGet) { pops = 0; pushes = 1; return; }
  if (o == kLocalSet || o == kGlobalSet) { pops = 1; pushes = 0; return; }
  if (o == kLocalTee) { pops = 1; pushes = 1; return; }
  if (o >= kI32Load && o <= 0x35) { pops = 1; pushes = 1; return; }
  if (o >= kI32Store && o <= 0x3E) { pops = 2; pushes = 0; return; }
  if (o == kMemorySize) { pops = 0; pushes = 1; return; }
  if (o == kMemoryGrow) { pops = 1; pushes = 1; return; }
  if (o >= kI32Const && o <= kF64Const) { pops = 0; pushes = 1; return; }
  if (o == 0x45) { pops = 1; pushes = 1; return; }        // i32.eqz
  if (o >= 0x46 && o <= 0x4F) { pops = 2; pushes = 1; return; }
  if (o == 0x50) { pops = 1; pushes = 1; return; }        // i64.eqz
  if (o >= 0x51 && o <= 0x66) { pops = 2; pushes = 1; return; }
  if (o >= 0x67 && o <= 0x69) { pops = 1; pushes = 1; return; }
  if (o >= 0x6A && o <= 0x78) { pops = 2; pushes = 1; return; }
  if (o >= 0x79 && o <= 0x7B) { pops = 1; pushes = 1; return; }
  if (o >= 0x7C && o <= 0x8A) { pops = 2; pushes = 1; return; }
  if (o >= 0x8B && o <= 0x91) { pops = 1; pushes = 1; return; }
  if (o >= 0x92 && o <= 0x98) { pops = 2; pushes = 1; return; }
  if (o >= 0x99 && o <= 0x9F) { pops = 1; pushes = 1; return; }
  if (o >= 0xA0 && o <= 0xA6) { pops = 2; pushes = 1; return; }
  if (o >= 0xA7 && o <= 0xC4) { pops = 1; pushes = 1; return; }
  throw ValidationError(format_msg("predecode: unhandled opcode 0x%x", iop));
}

// Flattens one validated body. Runs after validation, so type errors are
// impossible; only heights and branch targets are computed here.
class Predecoder {
public:
  Predecoder(const Module& m, std::span<const Intrinsic> import_intrinsics,
             std::span<const uint32_t> canon_of_type)
      : m_(m), intrinsics_(import_intrinsics), canon_of_type_(canon_of_type) {}

  PFunc run(uint32_t func_index) {
    const FunctionBody& body = m_.bodies[func_index - m_.imported_func_count];
    const FuncType& ft = m_.func_type(func_index);

    PFunc f;
    f.nparams = static_cast<uint32_t>(ft.params.size());
    f.nresults = static_cast<uint32_t>(ft.results.size());
    uint64_t nlocals = f.nparams;
    for (const auto& d : body.locals) nlocals += d.count;
    if (nlocals > 100000) throw ValidationError("too many locals");
    f.nlocals = static_cast<uint32_t>(nlocals);

    out_ = &f;
    h_ = 0;
    max_h_ = 0;
    ctrls_.clear();
    ctrls_.push_back(Ctrl{false, false, 0, static_cast<uint32_t>(ft.results.size()), 0, 0, false,
                          {}, SIZE_MAX, SIZE_MAX});

    ByteReader r{byte_span(body.code)};
    while (!ctrls_.empty()) step(r);

    f.max_height = max_h_;
    out_ = nullptr;
    return f;
  }

private:
  struct Fixup {
    bool in_table; // patch br_targets[index].pc instead of code[index].idx
    size_t index;
  };

  struct Ctrl {
    bool is_loop;
    bool is_if;
    uint32_t nparams;
    uint32_t nresults;
    int64_t base; // operand height at entry minus nparams
    uint32_t start_pc;
    bool unreachable;
    std::vector<Fixup> fixups;
    size_t jump_if_false = SIZE_MAX;
    size_t jump_end = SIZE_MAX;
  };

  size_t emit(Instr in) {
    out_->code.push_back(in);
    return out_->code.size() - 1;
  }

  uint32_t pc() const { return static_cast<uint32_t>(out_->code.size()); }

  void track(uint32_t pops, uint32_t pushes) {
    int64_t base = ctrls_.back().base;
    h_ -= pops;
    if (h_ < base) h_ = base; // only reachable in dead code
    h_ += pushes;
    if (h_ > max_h_) max_h_ = static_cast<uint32_t>(h_);
  }

  void set_unreachable() {
    ctrls_.back().unreachable = true;
    h_ = ctrls_.back().base;
  }

  Ctrl& target(uint32_t depth) { return ctrls_[ctrls_.size() - 1 - depth]; }

  // Emits a resolved branch, or records a fixup for forward targets.
  void emit_branch(uint16_t iop, uint32_t depth) {
    Ctrl& c = target(depth);
    uint32_t arity = c.is_loop ? c.nparams : c.nresults;
    Instr in;
    in.op = iop;
    in.aux = static_cast<uint16_t>(arity);
    in.imm = static_cast<uint64_t>(c.base);
    if (c.is_loop) {
      in.idx = c.start_pc;
      emit(in);
    } else {
      size_t at = emit(in);
      c.fixups.push_back({false, at});
    }
  }

  void step(ByteReader& r) {
    uint8_t opcode = r.u8();
    using namespace op;
    switch (opcode) {
      case kNop: return;
      case kUnreachable:
        emit({kUnreachable, 0, 0, 0});
        set_unreachable();
        return;

      case kBlock: {
        auto sig = read_block_type(r, m_);
        ctrls_.push_back(Ctrl{false, false, (uint32_t)sig.params.size(),
                              (uint32_t)sig.results.size(),
                              h_ - (int64_t)sig.params.size(), 0,
                              ctrls_.back().unreachable, {}, SIZE_MAX, SIZE_MAX});
        return;
      }
      case kLoop: {
        auto sig = read_block_type(r, m_);
        ctrls_.push_back(Ctrl{true, false, (uint32_t)sig.params.size(),
                              (uint32_t)sig.results.size(),
                              h_ - (int64_t)sig.params.size(), pc(),
                              ctrls_.back().unreachable, {}, SIZE_MAX, SIZE_MAX});
        return;
      }
      case kIf: {
        auto sig = read_block_type(r, m_);
        track(1, 0);
        size_t at = emit({detail::kOpJumpIfZero, 0, 0, 0});
        ctrls_.push_back(Ctrl{false, true, (uint32_t)sig.params.size(),
                              (uint32_t)sig.results.size(),
                              h_ - (int64_t)sig.params.size(), 0,
                              ctrls_.back().unreachable, {}, at, SIZE_MAX});
        return;
      }
      case kElse: {
        Ctrl& c = ctrls_.back();
        c.jump_end = emit({detail::kOpJump, 0, 0, 0});
        out_->code[c.jump_if_false].idx = pc();
        c.jump_if_false = SIZE_MAX;
        c.unreachable = false;
        h_ = c.base + c.nparams;
        return;
      }
      case kEnd: {
        Ctrl c = std::move(ctrls_.back());
        ctrls_.pop_back();
        if (ctrls_.empty()) {
          // Function frame: branches to the outermost label land on this
          // return instruction.
          for (const Fixup& fx : c.fixups) patch(fx, pc());
          emit({detail::kOpReturn, static_cast<uint16_t>(c.nresults), 0, 0});
          return;
        }
        for (const Fixup& fx : c.fixups) patch(fx, pc());
        if (c.jump_if_false != SIZE_MAX) out_->code[c.jump_if_false].idx = pc();
        if (c.jump_end != SIZE_MAX) out_->code[c.jump_end].idx = pc();
        h_ = c.base + c.nresults;
        if (h_ > max_h_) max_h_ = static_cast<uint32_t>(h_);
        return;
      }

      case kBr: {
        emit_branch(kBr, r.u32_leb());
        set_unreachable();
        return;
      }
      case kBrIf: {
        track(1, 0);
        emit_branch(kBrIf, r.u32_leb());
        return;
      }
      case kBrTable: {
        uint32_t count = r.u32_leb();
        std::vector<uint32_t> depths(count);
        for (auto& d : depths) d = r.u32_leb();
        depths.push_back(r.u32_leb()); // default last
        track(1, 0);
        Instr in;
        in.op = kBrTable;
        in.idx = static_cast<uint32_t>(out_->br_targets.size());
        in.imm = depths.size();
        size_t at = emit(in);
        (void)at;
        for (uint32_t depth : depths) {
          Ctrl& c = target(depth);
          BrTarget t;
          t.base = static_cast<uint32_t>(c.base);
          t.arity = c.is_loop ? c.nparams : c.nresults;
          if (c.is_loop) {
            t.pc = c.start_pc;
            out_->br_targets.push_back(t);
          } else {
            out_->br_targets.push_back(t);
            c.fixups.push_back({true, out_->br_targets.size() - 1});
          }
        }
        set_unreachable();
        return;
      }
      case op::kReturn: {
        uint32_t nres = ctrls_.front().nresults;
        emit({detail::kOpReturn, static_cast<uint16_t>(nres), 0, 0});
        set_unreachable();
        return;
      }

      case kCall: {
        uint32_t fidx = r.u32_leb();
        const FuncType& ft = m_.func_type(fidx);
        track(static_cast<uint32_t>(ft.params.size()),
              static_cast<uint32_t>(ft.results.size()));
        if (fidx < m_.imported_func_count) {
          uint16_t iop = intrinsics_[fidx] == Intrinsic::Sigcheck ? detail::kOpSigcheck
                                                                  : detail::kOpCallHost;
          emit({iop, static_cast<uint16_t>(ft.params.size()), fidx,
                ft.results.empty() ? 0u : 1u});
        } else {
          emit({detail::kOpCallWasm, 0, fidx, 0});
        }
        return;
      }
      case kCallIndirect: {
        uint32_t type_idx = r.u32_leb();
        r.u32_leb(); // table index, validated as 0
        const FuncType& ft = m_.types[type_idx];
        track(1 + static_cast<uint32_t>(ft.params.size()),
              static_cast<uint32_t>(ft.results.size()));
        emit({kCallIndirect, 0, canon_of_type_[type_idx], 0});
        return;
      }

      default: break;
    }

    // Plain instructions: decode immediates, track height, emit.
    Instr in;
    in.op = opcode;
    switch (imm_kind(opcode)) {
      case Imm::None: break;
      case Imm::Index: in.idx = r.u32_leb(); break;
      case Imm::MemArg:
        r.u32_leb(); // alignment hint
        in.imm = r.u32_leb();
        break;
      case Imm::MemIndex: r.u8(); break;
      case Imm::I32: in.imm = static_cast<uint32_t>(r.i32_leb()); break;
      case Imm::I64: in.imm = static_cast<uint64_t>(r.i64_leb()); break;
      case Imm::F32: in.imm = r.f32_bits(); break;
      case Imm::F64: in.imm = r.f64_bits(); break;
      case Imm::SelectT: {
        uint32_t n = r.u32_leb();
        for (uint32_t i = 0; i < n; ++i) read_valtype(r);
        in.op = op::kSelect;
        break;
      }
      case Imm::Prefixed: {
        uint32_t sub = r.u32_leb();
        in.op = static_cast<uint16_t>(detail::kOpFcBase + sub);
        if (sub == op::kFcMemoryCopy) { r.u8(); r.u8(); }
        else if (sub == op::kFcMemoryFill) r.u8();
        break;
      }
      default:
        throw ValidationError(format_msg("predecode: unexpected immediate for 0x%02x", opcode));
    }

    uint32_t pops = 0, pushes = 0;
    plain_stack_effect(in.op, pops, pushes);
    track(pops, pushes);
    emit(in);
  }

  void patch(const Fixup& fx, uint32_t to) {
    if (fx.in_table) out_->br_targets[fx.index].pc = to;
    else out_->code[fx.index].idx = to;
  }

  const Module& m_;
  std::span<const Intrinsic> intrinsics_;
  std::span<const uint32_t> canon_of_type_;
  PFunc* out_ = nullptr;
  int64_t h_ = 0;
  uint32_t max_h_ = 0;
  std::vector<Ctrl> ctrls_;
};

// Per-OS-thread fault context. Set while an EntryGuard is live; the SIGSEGV/
// SIGBUS/SIGFPE handler longjmps through it when the fault belongs to guest
// linear memory, and re-raises otherwise.
struct ThreadFaultCtx {
  sigjmp_buf* env = nullptr;
  const uint8_t* mem_base = nullptr;
  uint64_t mem_len = 0;
  const char* kind = nullptr;
  uint64_t addr = 0;
};

inline thread_local ThreadFaultCtx t_fault{};

inline void fault_handler(int sig, siginfo_t* si, void*) {
  ThreadFaultCtx& fc = t_fault;
  const uint8_t* a = si ? static_cast<const uint8_t*>(si->si_addr) : nullptr;
  bool guest_mem = fc.mem_base != nullptr && a >= fc.mem_base && a < fc.mem_base + fc.mem_len;
  if (fc.env != nullptr && (guest_mem || sig == SIGFPE)) {
    fc.kind = sig == SIGFPE ? "integer arithmetic fault" : "out of bounds memory access";
    fc.addr = guest_mem ? static_cast<uint64_t>(a - fc.mem_base) : 0;
    siglongjmp(*fc.env, 1);
  }
  ::signal(sig, SIG_DFL);
  ::raise(sig);
}

// Embedders (test harnesses, crash reporters) may swap process dispositions
// between calls, so this re-checks rather than installing once.
inline void install_fault_handlers() {
  struct sigaction cur{};
  if (::sigaction(SIGSEGV, nullptr, &cur) == 0 && (cur.sa_flags & SA_SIGINFO) != 0 &&
      cur.sa_sigaction == fault_handler)
    return;
  struct sigaction sa{};
  sa.sa_sigaction = fault_handler;
  sa.sa_flags = SA_SIGINFO;
  sigemptyset(&sa.sa_mask);
  ::sigaction(SIGSEGV, &sa, nullptr);
  ::sigaction(SIGBUS, &sa, nullptr);
  ::sigaction(SIGFPE, &sa, nullptr);
}

inline float wasm_fmin(float a, float b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<float>::quiet_NaN();
  if (a == b) return std::signbit(a) ? a : b;
  return a < b ? a : b;
}
inline float wasm_fmax(float a, float b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<float>::quiet_NaN();
  if (a == b) return std::signbit(a) ? b : a;
  return a > b ? a : b;
}
inline double wasm_fmin(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  if (a == b) return std::signbit(a) ? a : b;
  return a < b ? a : b;
}
inline double wasm_fmax(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  if (a == b) return std::signbit(a) ? b : a;
  return a > b ? a : b;
}

template <typename I, typename F>
I trunc_checked(F v) {
  if (std::isnan(v)) throw Trap("invalid conversion to integer");
  double t = std::trunc(static_cast<double>(v));
  if constexpr (std::is_signed_v<I>) {
    double lo = static_cast<double>(std::numeric_limits<I>::min());
    if (!(t >= lo && t < std::ldexp(1.0, sizeof(I) * 8 - 1))) throw Trap("integer overflow");
  } else {
    if (!(t >= 0.0 && t < std::ldexp(1.0, sizeof(I) * 8))) throw Trap("integer overflow");
  }
  return static_cast<I>(t);
}

template <typename I, typename F>
I trunc_sat(F v) {
  if (std::isnan(v)) return 0;
  double t = std::trunc(static_cast<double>(v));
  if constexpr (std::is_signed_v<I>) {
    double lo = static_cast<double>(std::numeric_limits<I>::min());
    if (t < lo) return std::numeric_limits<I>::min();
    if (t >= std::ldexp(1.0, sizeof(I) * 8 - 1)) return std::numeric_limits<I>::max();
  } else {
    if (t < 0.0) return 0;
    if (t >= std::ldexp(1.0, sizeof(I) * 8)) return std::numeric_limits<I>::max();
  }
  return static_cast<I>(t);
}

} // namespace detail

class InterpInstance;

class ExecThread final : public EngineThread {
public:
  ExecThread(InterpInstance& inst, std::vector<uint64_t> globals, size_t stack_slots,
             uint32_t max_depth)
      : inst_(inst),
        globals_(std::move(globals)),
        stack_(new uint64_t[stack_slots]),
        stack_slots_(stack_slots),
        max_depth_(max_depth) {}

  std::vector<uint64_t> call_function(uint32_t func_index,
                                      std::span<const uint64_t> args) override;
  std::vector<uint64_t> call_export(std::string_view name,
                                    std::span<const uint64_t> args) override;
  std::vector<uint64_t> call_table(uint32_t slot, std::span<const uint64_t> args,
                                   const FuncType& expected) override;

  std::optional<uint64_t> get_global(std::string_view export_name) override;
  bool set_global(std::string_view export_name, uint64_t value) override;

  EngineInstance& instance() override;
  bool in_guest() const override { return entry_depth_ > 0; }

private:
  friend class InterpInstance;

  void exec(uint32_t func_index);
  void dispatch(uint32_t func_index); // host or wasm, unified
  [[noreturn]] void trap_from_fault();

  InterpInstance& inst_;
  std::vector<uint64_t> globals_;
  std::unique_ptr<uint64_t[]> stack_;
  size_t stack_slots_;
  size_t sp_ = 0;
  uint32_t depth_ = 0;
  uint32_t max_depth_;
  int entry_depth_ = 0;
  const std::atomic<uint64_t>* sig_flag_ = nullptr;
};

class InterpInstance final : public EngineInstance {
public:
  InterpInstance(std::shared_ptr<const Module> mod, std::vector<HostImport> imports,
                 const EngineConfig& cfg)
      : mod_(std::move(mod)), cfg_(cfg) {
    detail::install_fault_handlers();
    validate(*mod_);
    bind_imports(std::move(imports));
    setup_memory();
    setup_globals_and_table();
    canonicalize_types();
    predecode();
    apply_segments();
    main_ = std::make_unique<ExecThread>(*this, initial_globals_, cfg_.stack_slots,
                                         cfg_.max_call_depth);
    main_->sig_flag_ = static_cast<const std::atomic<uint64_t>*>(cfg_.sigcheck_flag);
    if (mod_->start) main_->call_function(*mod_->start, {});
  }

  EngineMemory& memory() override { return *mem_; }
  LinearMemory& linear_memory() { return *mem_; }
  EngineThread& main_thread() override { return *main_; }

  std::unique_ptr<EngineThread> create_thread(EngineThread& parent) override {
    auto& p = static_cast<ExecThread&>(parent);
    auto t = std::make_unique<ExecThread>(*this, p.globals_, cfg_.stack_slots,
                                          cfg_.max_call_depth);
    t->sig_flag_ = p.sig_flag_;
    return t;
  }

  std::optional<uint32_t> find_exported_func(std::string_view name) const override {
    const Export* e = mod_->find_export(name, ExternKind::Func);
    if (!e) return std::nullopt;
    return e->index;
  }

  const Module& module() const override { return *mod_; }

private:
  friend class ExecThread;

  void bind_imports(std::vector<HostImport> imports) {
    for (const Import& im : mod_->imports) {
      if (im.kind != ExternKind::Func) continue;
      const FuncType& want = mod_->types[im.type_index];
      // A host name may be offered at several signatures; bind the exact one.
      HostImport* found = nullptr;
      HostImport* named = nullptr;
      for (auto& h : imports) {
        if (h.module != im.module || h.field != im.field) continue;
        if (named == nullptr) named = &h;
        if (h.type == want) { found = &h; break; }
      }
      if (!named)
        throw InstantiationError(
            format_msg("unresolved import %s.%s", im.module.c_str(), im.field.c_str()));
      if (!found)
        throw InstantiationError(
            format_msg("import %s.%s: type mismatch, module wants %s, host provides %s",
                       im.module.c_str(), im.field.c_str(), want.to_string().c_str(),
                       named->type.to_string().c_str()));
      host_.push_back(*found);
      intrinsics_.push_back(host_.back().intrinsic);
    }
  }

  void setup_memory() {
    uint32_t min_pages = 0;
    uint32_t max_pages = 0;
    if (!mod_->memories.empty()) {
      const Limits& lim = mod_->memories[0];
      min_pages = lim.min;
      max_pages = lim.max ? *lim.max : 65536;
    }
    if (cfg_.max_pages != 0) max_pages = std::min(max_pages, cfg_.max_pages);
    if (min_pages > max_pages)
      throw InstantiationError(
          format_msg("initial memory (%u pages) exceeds the page limit (%u)", min_pages,
                     max_pages));
    mem_ = std::make_unique<LinearMemory>(min_pages, max_pages);
  }

  void setup_globals_and_table() {
    for (const GlobalDef& g : mod_->globals) initial_globals_.push_back(g.init_value);
    if (!mod_->tables.empty()) table_.resize(mod_->tables[0].min, 0);
  }

  void canonicalize_types() {
    canon_of_type_.resize(mod_->types.size());
    std::vector<uint32_t> reps;
    for (uint32_t i = 0; i < mod_->types.size(); ++i) {
      uint32_t id = UINT32_MAX;
      for (uint32_t r : reps)
        if (mod_->types[r] == mod_->types[i]) { id = canon_of_type_[r]; break; }
      if (id == UINT32_MAX) {
        id = static_cast<uint32_t>(reps.size());
        reps.push_back(i);
      }
      canon_of_type_[i] = id;
    }
    canon_of_func_.resize(mod_->num_funcs());
    for (uint32_t f = 0; f < mod_->num_funcs(); ++f)
      canon_of_func_[f] = canon_of_type_[mod_->all_func_type_indices[f]];
  }

  void predecode() {
    detail::Predecoder pd(*mod_, intrinsics_, canon_of_type_);
    pfuncs_.reserve(mod_->bodies.size());
    for (uint32_t i = 0; i < mod_->bodies.size(); ++i)
      pfuncs_.push_back(pd.run(mod_->imported_func_count + i));
  }

  void apply_segments() {
    for (const ElementSegment& seg : mod_->elements) {
      uint64_t off = seg.offset;
      if (off + seg.func_indices.size() > table_.size())
        throw InstantiationError("element segment does not fit in table");
      for (size_t i = 0; i < seg.func_indices.size(); ++i)
        table_[off + i] = seg.func_indices[i] + 1;
    }
    for (const DataSegment& seg : mod_->data) {
      uint64_t off = seg.offset;
      if (off + seg.bytes.size() > mem_->byte_size())
        throw InstantiationError("data segment does not fit in memory");
      if (!seg.bytes.empty()) std::memcpy(mem_->base() + off, seg.bytes.data(), seg.bytes.size());
    }
  }

  std::shared_ptr<const Module> mod_;
  EngineConfig cfg_;
  std::unique_ptr<LinearMemory> mem_;
  std::vector<HostImport> host_;
  std::vector<Intrinsic> intrinsics_;
  std::vector<uint64_t> initial_globals_;
  std::vector<uint32_t> table_;
  std::vector<uint32_t> canon_of_type_;
  std::vector<uint32_t> canon_of_func_;
  std::vector<detail::PFunc> pfuncs_;
  std::unique_ptr<ExecThread> main_;
};

inline EngineInstance& ExecThread::instance() { return inst_; }

namespace detail {

// Re-registers the previous fault context on scope exit; the innermost live
// guard is what the signal handler longjmps through.
class EntryGuard {
public:
  EntryGuard(const uint8_t* mem_base, uint64_t mem_len) : saved_(t_fault) {
    install_fault_handlers();
    t_fault.env = &env;
    t_fault.mem_base = mem_base;
    t_fault.mem_len = mem_len;
    t_fault.kind = nullptr;
  }
  ~EntryGuard() { t_fault = saved_; }

  EntryGuard(const EntryGuard&) = delete;
  EntryGuard& operator=(const EntryGuard&) = delete;

  sigjmp_buf env;

private:
  ThreadFaultCtx saved_;
};

} // namespace detail

inline void ExecThread::trap_from_fault() {
  std::string msg = detail::t_fault.kind ? detail::t_fault.kind : "memory fault";
  if (detail::t_fault.kind &&
      std::strcmp(detail::t_fault.kind, "out of bounds memory access") == 0)
    msg = format_msg("out of bounds memory access at 0x%llx",
                     static_cast<unsigned long long>(detail::t_fault.addr));
  throw Trap(msg);
}

inline std::vector<uint64_t> ExecThread::call_function(uint32_t func_index,
                                                       std::span<const uint64_t> args) {
  if (func_index >= inst_.mod_->num_funcs())
    throw ConfigError(format_msg("function index %u out of range", func_index));
  const FuncType& ft = inst_.mod_->func_type(func_index);
  if (args.size() != ft.params.size())
    throw ConfigError(format_msg("call of %s with %zu arguments", ft.to_string().c_str(),
                                 args.size()));

  size_t saved_sp = sp_;
  uint32_t saved_depth = depth_;
  ++entry_depth_;
  detail::EntryGuard guard(inst_.mem_->base(), LinearMemory::kReserve);
  struct Restore {
    ExecThread* t;
    size_t sp;
    uint32_t depth;
    ~Restore() {
      t->sp_ = sp;
      t->depth_ = depth;
      --t->entry_depth_;
    }
  } restore{this, saved_sp, saved_depth};

  if (sigsetjmp(guard.env, 1) != 0) trap_from_fault();

  if (sp_ + args.size() + 64 > stack_slots_) throw Trap("call stack exhausted");
  for (uint64_t a : args) stack_[sp_++] = a;
  dispatch(func_index);

  size_t nres = ft.results.size();
  std::vector<uint64_t> results(nres);
  for (size_t i = 0; i < nres; ++i) results[i] = stack_[sp_ - nres + i];
  return results;
}

inline std::vector<uint64_t> ExecThread::call_export(std::string_view name,
                                                     std::span<const uint64_t> args) {
  auto idx = inst_.find_exported_func(name);
  if (!idx) throw ConfigError(format_msg("no exported function '%.*s'",
                                         static_cast<int>(name.size()), name.data()));
  return call_function(*idx, args);
}

inline std::vector<uint64_t> ExecThread::call_table(uint32_t slot,
                                                    std::span<const uint64_t> args,
                                                    const FuncType& expected) {
  if (slot >= inst_.table_.size())
    throw Trap(format_msg("out of bounds table access (slot %u)", slot));
  uint32_t entry = inst_.table_[slot];
  if (entry == 0) throw Trap(format_msg("uninitialized table element %u", slot));
  uint32_t fidx = entry - 1;
  if (!(inst_.mod_->func_type(fidx) == expected))
    throw Trap(format_msg("indirect call type mismatch at table slot %u", slot));
  return call_function(fidx, args);
}

inline std::optional<uint64_t> ExecThread::get_global(std::string_view export_name) {
  const Export* e = inst_.mod_->find_export(export_name, ExternKind::Global);
  if (!e || e->index >= globals_.size()) return std::nullopt;
  return globals_[e->index];
}

inline bool ExecThread::set_global(std::string_view export_name, uint64_t value) {
  const Export* e = inst_.mod_->find_export(export_name, ExternKind::Global);
  if (!e || e->index >= globals_.size()) return false;
  globals_[e->index] = value;
  return true;
}

inline void ExecThread::dispatch(uint32_t func_index) {
  if (func_index < inst_.mod_->imported_func_count) {
    const HostImport& h = inst_.host_[func_index];
    size_t np = h.type.params.size();
    size_t argbase = sp_ - np;
    // sp_ stays above the argument slots during the call; see kOpCallHost.
    uint64_t r = h.fn(*this, &stack_[argbase]);
    sp_ = argbase;
    if (!h.type.results.empty()) stack_[sp_++] = r;
    return;
  }
  if (++depth_ > max_depth_) {
    --depth_;
    throw Trap("call stack exhausted");
  }
  exec(func_index);
  --depth_;
}

inline void ExecThread::exec(uint32_t func_index) {
  const detail::PFunc& f = inst_.pfuncs_[func_index - inst_.mod_->imported_func_count];
  const size_t fb = sp_ - f.nparams;
  const size_t ob = fb + f.nlocals;
  if (ob + f.max_height + 64 > stack_slots_) throw Trap("call stack exhausted");
  for (size_t i = fb + f.nparams; i < ob; ++i) stack_[i] = 0;

  uint64_t* const st = stack_.get();
  uint8_t* const mb = inst_.mem_->base();
  size_t sp = ob;
  size_t pc = 0;
  const detail::Instr* code = f.code.data();

#define WALI_PUSH(v) (st[sp++] = (v))
#define WALI_POP() (st[--sp])
#define WALI_TOP() (st[sp - 1])
#define WALI_I32_BIN(T, expr)                             \
  {                                                       \
    T b = static_cast<T>(static_cast<uint32_t>(st[--sp]));\
    T a = static_cast<T>(static_cast<uint32_t>(st[sp-1]));\
    st[sp - 1] = static_cast<uint32_t>(expr);             \
  }                                                       \
  break
#define WALI_I64_BIN(T, expr)                             \
  {                                                       \
    T b = static_cast<T>(st[--sp]);                       \
    T a = static_cast<T>(st[sp-1]);                       \
    st[sp - 1] = static_cast<uint64_t>(expr);             \
  }                                                       \
  break
#define WALI_I32_CMP(T, cmp)                              \
  {                                                       \
    T b = static_cast<T>(static_cast<uint32_t>(st[--sp]));\
    T a = static_cast<T>(static_cast<uint32_t>(st[sp-1]));\
    st[sp - 1] = (a cmp b) ? 1 : 0;                       \
  }                                                       \
  break
#define WALI_I64_CMP(T, cmp)                              \
  {                                                       \
    T b = static_cast<T>(st[--sp]);                       \
    T a = static_cast<T>(st[sp-1]);                       \
    st[sp - 1] = (a cmp b) ? 1 : 0;                       \
  }                                                       \
  break
#define WALI_F32_BIN(expr)                                \
  {                                                       \
    float b = std::bit_cast<float>(static_cast<uint32_t>(st[--sp]));  \
    float a = std::bit_cast<float>(static_cast<uint32_t>(st[sp-1]));  \
    st[sp - 1] = std::bit_cast<uint32_t>(expr);           \
  }                                                       \
  break
#define WALI_F64_BIN(expr)                                \
  {                                                       \
    double b = std::bit_cast<double>(st[--sp]);           \
    double a = std::bit_cast<double>(st[sp-1]);           \
    st[sp - 1] = std::bit_cast<uint64_t>(expr);           \
  }                                                       \
  break
#define WALI_F32_CMP(cmp)                                 \
  {                                                       \
    float b = std::bit_cast<float>(static_cast<uint32_t>(st[--sp]));  \
    float a = std::bit_cast<float>(static_cast<uint32_t>(st[sp-1]));  \
    st[sp - 1] = (a cmp b) ? 1 : 0;                       \
  }                                                       \
  break
#define WALI_F64_CMP(cmp)                                 \
  {                                                       \
    double b = std::bit_cast<double>(st[--sp]);           \
    double a = std::bit_cast<double>(st[sp-1]);           \
    st[sp - 1] = (a cmp b) ? 1 : 0;                       \
  }                                                       \
  break
#define WALI_F32_UN(expr)                                 \
  {                                                       \
    float a = std::bit_cast<float>(static_cast<uint32_t>(st[sp-1])); \
    st[sp - 1] = std::bit_cast<uint32_t>(expr);           \
  }                                                       \
  break
#define WALI_F64_UN(expr)                                 \
  {                                                       \
    double a = std::bit_cast<double>(st[sp-1]);           \
    st[sp - 1] = std::bit_cast<uint64_t>(expr);           \
  }                                                       \
  break
#define WALI_LOAD(T, push_expr)                           \
  {                                                       \
    uint64_t addr = static_cast<uint32_t>(st[sp-1]) + in.imm; \
    T v;                                                  \
    std::memcpy(&v, mb + addr, sizeof(T));                \
    st[sp - 1] = (push_expr);                             \
  }                                                       \
  break
#define WALI_STORE(T)                                     \
  {                                                       \
    T v = static_cast<T>(st[--sp]);                       \
    uint64_t addr = static_cast<uint32_t>(st[--sp]) + in.imm; \
    std::memcpy(mb + addr, &v, sizeof(T));                \
  }                                                       \
  break

  for (;;) {
    const detail::Instr& in = code[pc++];
    switch (in.op) {
      case op::kUnreachable: throw Trap("unreachable executed");

      case detail::kOpJump: pc = in.idx; break;
      case detail::kOpJumpIfZero:
        if (static_cast<uint32_t>(WALI_POP()) == 0) pc = in.idx;
        break;

      case op::kBr: {
        size_t dst = ob + in.imm;
        std::memmove(&st[dst], &st[sp - in.aux], in.aux * sizeof(uint64_t));
        sp = dst + in.aux;
        pc = in.idx;
        break;
      }
      case op::kBrIf: {
        if (static_cast<uint32_t>(WALI_POP()) != 0) {
          size_t dst = ob + in.imm;
          std::memmove(&st[dst], &st[sp - in.aux], in.aux * sizeof(uint64_t));
          sp = dst + in.aux;
          pc = in.idx;
        }
        break;
      }
      case op::kBrTable: {
        uint32_t sel = static_cast<uint32_t>(WALI_POP());
        uint32_t count = static_cast<uint32_t>(in.imm);
        const detail::BrTarget& t =
            f.br_targets[in.idx + (sel < count - 1 ? sel : count - 1)];
        size_t dst = ob + t.base;
        std::memmove(&st[dst], &st[sp - t.arity], t.arity * sizeof(uint64_t));
        sp = dst + t.arity;
        pc = t.pc;
        break;
      }
      case detail::kOpReturn: {
        std::memmove(&st[fb], &st[sp - in.aux], in.aux * sizeof(uint64_t));
        sp_ = fb + in.aux;
        return;
      }

      case detail::kOpCallHost: {
        const HostImport& h = inst_.host_[in.idx];
        sp -= in.aux;
        // Keep sp_ above the argument slots so guest reentry from inside the
        // host call cannot clobber them.
        sp_ = sp + in.aux;
        uint64_t r = h.fn(*this, &st[sp]);
        if (in.imm) st[sp++] = r;
        break;
      }
      case detail::kOpSigcheck: {
        if (sig_flag_ != nullptr &&
            sig_flag_->load(std::memory_order_relaxed) != 0) {
          sp_ = sp;
          inst_.host_[in.idx].fn(*this, nullptr);
          sp = sp_;
        }
        break;
      }
      case detail::kOpCallWasm: {
        if (++depth_ > max_depth_) {
          --depth_;
          throw Trap("call stack exhausted");
        }
        sp_ = sp;
        exec(in.idx);
        sp = sp_;
        --depth_;
        break;
      }
      case op::kCallIndirect: {
        uint32_t slot = static_cast<uint32_t>(WALI_POP());
        if (slot >= inst_.table_.size())
          throw Trap(format_msg("out of bounds table access (slot %u)", slot));
        uint32_t entry = inst_.table_[slot];
        if (entry == 0) throw Trap(format_msg("uninitialized table element %u", slot));
        uint32_t fidx = entry - 1;
        if (inst_.canon_of_func_[fidx] != in.idx)
          throw Trap(format_msg("indirect call type mismatch at table slot %u", slot));
        sp_ = sp;
        dispatch(fidx);
        sp = sp_;
        break;
      }

      case op::kDrop: --sp; break;
      case op::kSelect: {
        uint32_t c = static_cast<uint32_t>(WALI_POP());
        uint64_t b = WALI_POP();
        uint64_t a = WALI_POP();
        WALI_PUSH(c ? a : b);
        break;
      }

      case op::kLocalGet: WALI_PUSH(st[fb + in.idx]); break;
      case op::kLocalSet: st[fb + in.idx] = WALI_POP(); break;
      case op::kLocalTee: st[fb + in.idx] = WALI_TOP(); break;
      case op::kGlobalGet: WALI_PUSH(globals_[in.idx]); break;
      case op::kGlobalSet: globals_[in.idx] = WALI_POP(); break;

      case op::kI32Load: WALI_LOAD(uint32_t, v);
      case op::kI64Load: WALI_LOAD(uint64_t, v);
      case 0x2A: WALI_LOAD(uint32_t, v); // f32.load: raw bits
      case 0x2B: WALI_LOAD(uint64_t, v); // f64.load
      case op::kI32Load8S: WALI_LOAD(int8_t, static_cast<uint32_t>(static_cast<int32_t>(v)));
      case 0x2D: WALI_LOAD(uint8_t, v);
      case 0x2E: WALI_LOAD(int16_t, static_cast<uint32_t>(static_cast<int32_t>(v)));
      case 0x2F: WALI_LOAD(uint16_t, v);
      case 0x30: WALI_LOAD(int8_t, static_cast<uint64_t>(static_cast<int64_t>(v)));
      case 0x31: WALI_LOAD(uint8_t, v);
      case 0x32: WALI_LOAD(int16_t, static_cast<uint64_t>(static_cast<int64_t>(v)));
      case 0x33: WALI_LOAD(uint16_t, v);
      case 0x34: WALI_LOAD(int32_t, static_cast<uint64_t>(static_cast<int64_t>(v)));
      case 0x35: WALI_LOAD(uint32_t, v);

      case op::kI32Store: WALI_STORE(uint32_t);
      case op::kI64Store: WALI_STORE(uint64_t);
      case 0x38: WALI_STORE(uint32_t); // f32.store
      case 0x39: WALI_STORE(uint64_t); // f64.store
      case 0x3A: WALI_STORE(uint8_t);
      case 0x3B: WALI_STORE(uint16_t);
      case 0x3C: WALI_STORE(uint8_t);
      case 0x3D: WALI_STORE(uint16_t);
      case 0x3E: WALI_STORE(uint32_t); // i64.store32

      case op::kMemorySize: WALI_PUSH(inst_.mem_->pages()); break;
      case op::kMemoryGrow: {
        uint32_t delta = static_cast<uint32_t>(WALI_TOP());
        int64_t old = inst_.mem_->grow(delta);
        st[sp - 1] = static_cast<uint32_t>(static_cast<int32_t>(old));
        break;
      }

      case op::kI32Const:
      case op::kI64Const:
      case op::kF32Const:
      case op::kF64Const: WALI_PUSH(in.imm); break;

      case 0x45: st[sp - 1] = (static_cast<uint32_t>(st[sp - 1]) == 0); break;
      case 0x46: WALI_I32_CMP(uint32_t, ==);
      case 0x47: WALI_I32_CMP(uint32_t, !=);
      case 0x48: WALI_I32_CMP(int32_t, <);
      case 0x49: WALI_I32_CMP(uint32_t, <);
      case 0x4A: WALI_I32_CMP(int32_t, >);
      case 0x4B: WALI_I32_CMP(uint32_t, >);
      case 0x4C: WALI_I32_CMP(int32_t, <=);
      case 0x4D: WALI_I32_CMP(uint32_t, <=);
      case 0x4E: WALI_I32_CMP(int32_t, >=);
      case 0x4F: WALI_I32_CMP(uint32_t, >=);

      case 0x50: st[sp - 1] = (st[sp - 1] == 0); break;
      case 0x51: WALI_I64_CMP(uint64_t, ==);
      case 0x52: WALI_I64_CMP(uint64_t, !=);
      case 0x53: WALI_I64_CMP(int64_t, <);
      case 0x54: WALI_I64_CMP(uint64_t, <);
      case 0x55: WALI_I64_CMP(int64_t, >);
      case 0x56: WALI_I64_CMP(uint64_t, >);
      case 0x57: WALI_I64_CMP(int64_t, <=);
      case 0x58: WALI_I64_CMP(uint64_t, <=);
      case 0x59: WALI_I64_CMP(int64_t, >=);
      case 0x5A: WALI_I64_CMP(uint64_t, >=);

      case 0x5B: WALI_F32_CMP(==);
      case 0x5C: WALI_F32_CMP(!=);
      case 0x5D: WALI_F32_CMP(<);
      case 0x5E: WALI_F32_CMP(>);
      case 0x5F: WALI_F32_CMP(<=);
      case 0x60: WALI_F32_CMP(>=);
      case 0x61: WALI_F64_CMP(==);
      case 0x62: WALI_F64_CMP(!=);
      case 0x63: WALI_F64_CMP(<);
      case 0x64: WALI_F64_CMP(>);
      case 0x65: WALI_F64_CMP(<=);
      case 0x66: WALI_F64_CMP(>=);

      case 0x67:
        st[sp - 1] = std::countl_zero(static_cast<uint32_t>(st[sp - 1]));
        break;
      case 0x68:
        st[sp - 1] = std::countr_zero(static_cast<uint32_t>(st[sp - 1]));
        break;
      case 0x69:
        st[sp - 1] = std::popcount(static_cast<uint32_t>(st[sp - 1]));
        break;
      case 0x6A: WALI_I32_BIN(uint32_t, a + b);
      case 0x6B: WALI_I32_BIN(uint32_t, a - b);
      case 0x6C: WALI_I32_BIN(uint32_t, a * b);
      case 0x6D: { // i32.div_s
        int32_t b = static_cast<int32_t>(static_cast<uint32_t>(st[--sp]));
        int32_t a = static_cast<int32_t>(static_cast<uint32_t>(st[sp - 1]));
        if (b == 0) throw Trap("integer divide by zero");
        if (a == INT32_MIN && b == -1) throw Trap("integer overflow");
        st[sp - 1] = static_cast<uint32_t>(a / b);
        break;
      }
      case 0x6E: { // i32.div_u
        uint32_t b = static_cast<uint32_t>(st[--sp]);
        uint32_t a = static_cast<uint32_t>(st[sp - 1]);
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = a / b;
        break;
      }
      case 0x6F: { // i32.rem_s
        int32_t b = static_cast<int32_t>(static_cast<uint32_t>(st[--sp]));
        int32_t a = static_cast<int32_t>(static_cast<uint32_t>(st[sp - 1]));
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = static_cast<uint32_t>((a == INT32_MIN && b == -1) ? 0 : a % b);
        break;
      }
      case 0x70: { // i32.rem_u
        uint32_t b = static_cast<uint32_t>(st[--sp]);
        uint32_t a = static_cast<uint32_t>(st[sp - 1]);
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = a % b;
        break;
      }
      case 0x71: WALI_I32_BIN(uint32_t, a & b);
      case 0x72: WALI_I32_BIN(uint32_t, a | b);
      case 0x73: WALI_I32_BIN(uint32_t, a ^ b);
      case 0x74: WALI_I32_BIN(uint32_t, a << (b & 31));
      case 0x75: WALI_I32_BIN(int32_t, a >> (b & 31));
      case 0x76: WALI_I32_BIN(uint32_t, a >> (b & 31));
      case 0x77: WALI_I32_BIN(uint32_t, std::rotl(a, static_cast<int>(b & 31)));
      case 0x78: WALI_I32_BIN(uint32_t, std::rotr(a, static_cast<int>(b & 31)));

      case 0x79: st[sp - 1] = std::countl_zero(st[sp - 1]); break;
      case 0x7A: st[sp - 1] = std::countr_zero(st[sp - 1]); break;
      case 0x7B: st[sp - 1] = std::popcount(st[sp - 1]); break;
      case 0x7C: WALI_I64_BIN(uint64_t, a + b);
      case 0x7D: WALI_I64_BIN(uint64_t, a - b);
      case 0x7E: WALI_I64_BIN(uint64_t, a * b);
      case 0x7F: { // i64.div_s
        int64_t b = static_cast<int64_t>(st[--sp]);
        int64_t a = static_cast<int64_t>(st[sp - 1]);
        if (b == 0) throw Trap("integer divide by zero");
        if (a == INT64_MIN && b == -1) throw Trap("integer overflow");
        st[sp - 1] = static_cast<uint64_t>(a / b);
        break;
      }
      case 0x80: { // i64.div_u
        uint64_t b = st[--sp];
        uint64_t a = st[sp - 1];
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = a / b;
        break;
      }
      case 0x81: { // i64.rem_s
        int64_t b = static_cast<int64_t>(st[--sp]);
        int64_t a = static_cast<int64_t>(st[sp - 1]);
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = static_cast<uint64_t>((a == INT64_MIN && b == -1) ? 0 : a % b);
        break;
      }
      case 0x82: { // i64.rem_u
        uint64_t b = st[--sp];
        uint64_t a = st[sp - 1];
        if (b == 0) throw Trap("integer divide by zero");
        st[sp - 1] = a % b;
        break;
      }
      case 0x83: WALI_I64_BIN(uint64_t, a & b);
      case 0x84: WALI_I64_BIN(uint64_t, a | b);
      case 0x85: WALI_I64_BIN(uint64_t, a ^ b);
      case 0x86: WALI_I64_BIN(uint64_t, a << (b & 63));
      case 0x87: WALI_I64_BIN(int64_t, a >> (b & 63));
      case 0x88: WALI_I64_BIN(uint64_t, a >> (b & 63));
      case 0x89: WALI_I64_BIN(uint64_t, std::rotl(a, static_cast<int>(b & 63)));
      case 0x8A: WALI_I64_BIN(uint64_t, std::rotr(a, static_cast<int>(b & 63)));

      case 0x8B: WALI_F32_UN(std::bit_cast<float>(std::bit_cast<uint32_t>(a) & 0x7FFFFFFFu));
      case 0x8C: WALI_F32_UN(std::bit_cast<float>(std::bit_cast<uint32_t>(a) ^ 0x80000000u));
      case 0x8D: WALI_F32_UN(std::ceil(a));
      case 0x8E: WALI_F32_UN(std::floor(a));
      case 0x8F: WALI_F32_UN(std::trunc(a));
      case 0x90: WALI_F32_UN(std::nearbyint(a));
      case 0x91: WALI_F32_UN(std::sqrt(a));
      case 0x92: WALI_F32_BIN(a + b);
      case 0x93: WALI_F32_BIN(a - b);
      case 0x94: WALI_F32_BIN(a * b);
      case 0x95: WALI_F32_BIN(a / b);
      case 0x96: WALI_F32_BIN(detail::wasm_fmin(a, b));
      case 0x97: WALI_F32_BIN(detail::wasm_fmax(a, b));
      case 0x98: WALI_F32_BIN(std::copysign(a, b));

      case 0x99: WALI_F64_UN(std::bit_cast<double>(std::bit_cast<uint64_t>(a) & 0x7FFFFFFFFFFFFFFFull));
      case 0x9A: WALI_F64_UN(std::bit_cast<double>(std::bit_cast<uint64_t>(a) ^ 0x8000000000000000ull));
      case 0x9B: WALI_F64_UN(std::ceil(a));
      case 0x9C: WALI_F64_UN(std::floor(a));
      case 0x9D: WALI_F64_UN(std::trunc(a));
      case 0x9E: WALI_F64_UN(std::nearbyint(a));
      case 0x9F: WALI_F64_UN(std::sqrt(a));
      case 0xA0: WALI_F64_BIN(a + b);
      case 0xA1: WALI_F64_BIN(a - b);
      case 0xA2: WALI_F64_BIN(a * b);
      case 0xA3: WALI_F64_BIN(a / b);
      case 0xA4: WALI_F64_BIN(detail::wasm_fmin(a, b));
      case 0xA5: WALI_F64_BIN(detail::wasm_fmax(a, b));
      case 0xA6: WALI_F64_BIN(std::copysign(a, b));

      case 0xA7: st[sp - 1] = static_cast<uint32_t>(st[sp - 1]); break; // i32.wrap_i64
      case 0xA8:
        st[sp - 1] = static_cast<uint32_t>(detail::trunc_checked<int32_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xA9:
        st[sp - 1] = detail::trunc_checked<uint32_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case 0xAA:
        st[sp - 1] = static_cast<uint32_t>(
            detail::trunc_checked<int32_t>(std::bit_cast<double>(st[sp - 1])));
        break;
      case 0xAB:
        st[sp - 1] = detail::trunc_checked<uint32_t>(std::bit_cast<double>(st[sp - 1]));
        break;
      case 0xAC: // i64.extend_i32_s
        st[sp - 1] = static_cast<uint64_t>(
            static_cast<int64_t>(static_cast<int32_t>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xAD: st[sp - 1] = static_cast<uint32_t>(st[sp - 1]); break; // extend_u
      case 0xAE:
        st[sp - 1] = static_cast<uint64_t>(detail::trunc_checked<int64_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xAF:
        st[sp - 1] = detail::trunc_checked<uint64_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case 0xB0:
        st[sp - 1] = static_cast<uint64_t>(
            detail::trunc_checked<int64_t>(std::bit_cast<double>(st[sp - 1])));
        break;
      case 0xB1:
        st[sp - 1] = detail::trunc_checked<uint64_t>(std::bit_cast<double>(st[sp - 1]));
        break;
      case 0xB2: // f32.convert_i32_s
        st[sp - 1] = std::bit_cast<uint32_t>(
            static_cast<float>(static_cast<int32_t>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xB3:
        st[sp - 1] =
            std::bit_cast<uint32_t>(static_cast<float>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case 0xB4:
        st[sp - 1] =
            std::bit_cast<uint32_t>(static_cast<float>(static_cast<int64_t>(st[sp - 1])));
        break;
      case 0xB5: st[sp - 1] = std::bit_cast<uint32_t>(static_cast<float>(st[sp - 1])); break;
      case 0xB6: // f32.demote_f64
        st[sp - 1] = std::bit_cast<uint32_t>(
            static_cast<float>(std::bit_cast<double>(st[sp - 1])));
        break;
      case 0xB7:
        st[sp - 1] = std::bit_cast<uint64_t>(
            static_cast<double>(static_cast<int32_t>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xB8:
        st[sp - 1] =
            std::bit_cast<uint64_t>(static_cast<double>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case 0xB9:
        st[sp - 1] =
            std::bit_cast<uint64_t>(static_cast<double>(static_cast<int64_t>(st[sp - 1])));
        break;
      case 0xBA: st[sp - 1] = std::bit_cast<uint64_t>(static_cast<double>(st[sp - 1])); break;
      case 0xBB: // f64.promote_f32
        st[sp - 1] = std::bit_cast<uint64_t>(
            static_cast<double>(std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xBC: case 0xBD: case 0xBE: case 0xBF: break; // reinterpret: same bits

      case 0xC0: // i32.extend8_s
        st[sp - 1] = static_cast<uint32_t>(
            static_cast<int32_t>(static_cast<int8_t>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xC1:
        st[sp - 1] = static_cast<uint32_t>(
            static_cast<int32_t>(static_cast<int16_t>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case 0xC2:
        st[sp - 1] =
            static_cast<uint64_t>(static_cast<int64_t>(static_cast<int8_t>(st[sp - 1])));
        break;
      case 0xC3:
        st[sp - 1] =
            static_cast<uint64_t>(static_cast<int64_t>(static_cast<int16_t>(st[sp - 1])));
        break;
      case 0xC4:
        st[sp - 1] =
            static_cast<uint64_t>(static_cast<int64_t>(static_cast<int32_t>(st[sp - 1])));
        break;

      case detail::kOpFcBase + 0:
        st[sp - 1] = static_cast<uint32_t>(detail::trunc_sat<int32_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case detail::kOpFcBase + 1:
        st[sp - 1] = detail::trunc_sat<uint32_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case detail::kOpFcBase + 2:
        st[sp - 1] = static_cast<uint32_t>(
            detail::trunc_sat<int32_t>(std::bit_cast<double>(st[sp - 1])));
        break;
      case detail::kOpFcBase + 3:
        st[sp - 1] = detail::trunc_sat<uint32_t>(std::bit_cast<double>(st[sp - 1]));
        break;
      case detail::kOpFcBase + 4:
        st[sp - 1] = static_cast<uint64_t>(detail::trunc_sat<int64_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1]))));
        break;
      case detail::kOpFcBase + 5:
        st[sp - 1] = detail::trunc_sat<uint64_t>(
            std::bit_cast<float>(static_cast<uint32_t>(st[sp - 1])));
        break;
      case detail::kOpFcBase + 6:
        st[sp - 1] = static_cast<uint64_t>(
            detail::trunc_sat<int64_t>(std::bit_cast<double>(st[sp - 1])));
        break;
      case detail::kOpFcBase + 7:
        st[sp - 1] = detail::trunc_sat<uint64_t>(std::bit_cast<double>(st[sp - 1]));
        break;

      case detail::kOpFcBase + op::kFcMemoryCopy: {
        uint64_t n = static_cast<uint32_t>(WALI_POP());
        uint64_t s = static_cast<uint32_t>(WALI_POP());
        uint64_t d = static_cast<uint32_t>(WALI_POP());
        uint64_t size = inst_.mem_->byte_size();
        if (d + n > size || s + n > size) throw Trap("out of bounds memory access");
        if (n) std::memmove(mb + d, mb + s, n);
        break;
      }
      case detail::kOpFcBase + op::kFcMemoryFill: {
        uint64_t n = static_cast<uint32_t>(WALI_POP());
        uint32_t val = static_cast<uint32_t>(WALI_POP());
        uint64_t d = static_cast<uint32_t>(WALI_POP());
        if (d + n > inst_.mem_->byte_size()) throw Trap("out of bounds memory access");
        if (n) std::memset(mb + d, static_cast<int>(val & 0xFF), n);
        break;
      }

      default:
        throw Trap(format_msg("interpreter: unimplemented opcode 0x%x", in.op));
    }
  }

#undef WALI_PUSH
#undef WALI_POP
#undef WALI_TOP
#undef WALI_I32_BIN
#undef WALI_I64_BIN
#undef WALI_I32_CMP
#undef WALI_I64_CMP
#undef WALI_F32_BIN
#undef WALI_F64_BIN
#undef WALI_F32_CMP
#undef WALI_F64_CMP
#undef WALI_F32_UN
#undef WALI_F64_UN
#undef WALI_LOAD
#undef WALI_STORE
}

} // namespace wali::wasm

namespace wali {

inline std::unique_ptr<EngineInstance> instantiate(std::shared_ptr<const wasm::Module> module,
                                                   std::vector<HostImport> imports,
                                                   const EngineConfig& config) {
  return std::make_unique<wasm::InterpInstance>(std::move(module), std::move(imports), config);
}

} // namespace wali
