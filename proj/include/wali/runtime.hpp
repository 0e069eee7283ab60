// SPDX-License-Identifier: Apache-2.0
//
// Runtime assembly: binds the syscall registry, memory pool, virtual signals,
// process model and startup transfer onto one engine instance, and exposes
// every registry name as a host import under the "wali" namespace.
//
// Syscall ABI: import name equals the syscall name; parameters are 64-bit
// integers (one per argument, up to six); the result is one 64-bit integer
// following the Linux convention (negative errno on failure). Guest addresses
// arrive as zero-extended 32-bit linear-memory offsets.
#pragma once

#include <cinttypes>
#include <cstdio>
#include <future>
#include <memory>
#include <string>
#include <vector>

#include <climits>
#include <poll.h>
#include <sys/ioctl.h>
#include <sys/resource.h>
#include <sys/socket.h>
#include <sys/syscall.h>
#include <sys/time.h>
#include <sys/uio.h>
#include <sys/utsname.h>
#include <sys/wait.h>
#include <unistd.h>

#include <linux/futex.h>

#include "wali/bridge.hpp"
#include "wali/common.hpp"
#include "wali/layout.hpp"
#include "wali/memory_pool.hpp"
#include "wali/policy.hpp"
#include "wali/process.hpp"
#include "wali/registry.hpp"
#include "wali/signals.hpp"
#include "wali/startup.hpp"
#include "wali/trace.hpp"
#include "wali/wasm/interpreter.hpp"

namespace wali {

struct RuntimeOptions {
  std::vector<std::string> argv; // argv[0] is the module path by convention
  std::vector<std::string> env;
  uint32_t max_pages = 0;
  std::shared_ptr<Policy> policy;
  std::shared_ptr<TraceWriter> trace;
  /// Absolute path of the runner executable, used to re-exec Wasm targets of
  /// execve. Empty disables Wasm exec targets (-ENOEXEC).
  std::string runner_path;
  /// Probe and consume /wali.env.<pid> at startup (execve handoff).
  bool use_env_segment = true;
};

struct RunResult {
  enum class Kind { Exit, Trap };
  Kind kind = Kind::Exit;
  int code = 0;
  std::string trap_message;
};

inline thread_local GuestThread* t_guest_thread = nullptr;

struct SyscallEnv {
  class WaliRuntime& rt;
  EngineThread& thread;
  GuestThread& gt;
};

class WaliRuntime {
public:
  WaliRuntime(std::shared_ptr<const wasm::Module> module, RuntimeOptions opts)
      : opts_(std::move(opts)), registry_(Registry::load()) {
    main_tid_ = static_cast<uint32_t>(::syscall(SYS_gettid));
    std::vector<std::string> base;
    if (opts_.use_env_segment)
      if (auto seg = consume_env_segment(::getpid())) base = std::move(*seg);
    env_ = merge_env(base, opts_.env);
    startup_ = std::make_unique<StartupParams>(opts_.argv, env_);
    install_handlers();
    setup_signals();
    EngineConfig cfg;
    cfg.max_pages = opts_.max_pages;
    cfg.sigcheck_flag = signals_->pending_flag();
    try {
      instance_ = instantiate(std::move(module), build_imports(), cfg);
    } catch (...) {
      signal_state_slot().store(nullptr, std::memory_order_release);
      throw;
    }
    arm_signals();
  }

  ~WaliRuntime() {
    signal_state_slot().store(nullptr, std::memory_order_release);
    for (const auto& [sig, old] : saved_dispositions_) ::sigaction(sig, &old, nullptr);
    // The registration is owned by this runtime; a later runtime on the same
    // host thread must not see it.
    t_guest_thread = nullptr;
  }

  WaliRuntime(const WaliRuntime&) = delete;
  WaliRuntime& operator=(const WaliRuntime&) = delete;

  /// Runs the module's `_start` export to completion.
  RunResult run() {
    GuestThread& gt = get_or_register(instance_->main_thread());
    try {
      instance_->main_thread().call_export("_start", {});
      drain_exit_checks(gt);
      return {RunResult::Kind::Exit, 0, {}};
    } catch (const ProcessExit& e) {
      return finish_exit(e.code & 0xFF);
    } catch (const ThreadExit& e) {
      return finish_exit(e.code & 0xFF);
    } catch (const Trap& t) {
      if (threads_.count() > 1) {
        std::fprintf(stderr, "trap: %s\n", t.what());
        std::_Exit(134);
      }
      return {RunResult::Kind::Trap, 134, t.what()};
    }
  }

  EngineInstance& instance() { return *instance_; }
  SignalState& signals() { return *signals_; }
  const Registry& registry() const { return registry_; }
  const std::vector<std::string>& virtual_env() const { return env_; }

  MmapPool& pool() {
    ensure_pool();
    return *pool_;
  }

private:
  // ---- assembly -----------------------------------------------------------

  static wasm::FuncType syscall_type(size_t arity) {
    wasm::FuncType t;
    t.params.assign(arity, wasm::ValType::I64);
    t.results = {wasm::ValType::I64};
    return t;
  }

  std::vector<HostImport> build_imports() {
    std::vector<HostImport> imports;
    for (const auto& spec : registry_.specs()) {
      if (spec.behavior != SyscallBehavior::Unsupported) {
        imports.push_back(make_syscall_import(spec, spec.args.size()));
      } else {
        // Unsupported names accept any syscall-shaped signature so modules
        // instantiate and fail (or get denied) only on call.
        for (size_t arity = 0; arity <= 6; ++arity)
          imports.push_back(make_syscall_import(spec, arity));
      }
    }
    auto i32ret = [](std::initializer_list<wasm::ValType> params) {
      return wasm::FuncType{params, {wasm::ValType::I32}};
    };
    auto none = [](std::initializer_list<wasm::ValType> params) {
      return wasm::FuncType{params, {}};
    };
    using VT = wasm::ValType;
    imports.push_back({"wali", "get_argc", i32ret({}),
                       [this](EngineThread&, uint64_t*) -> uint64_t {
                         return startup_->argc();
                       }});
    imports.push_back({"wali", "get_argv_len", i32ret({}),
                       [this](EngineThread&, uint64_t*) -> uint64_t {
                         return startup_->argv_len();
                       }});
    imports.push_back({"wali", "copy_argv", i32ret({VT::I32, VT::I32}),
                       [this](EngineThread& th, uint64_t* a) -> uint64_t {
                         return startup_->copy_argv(th.instance().memory(), a[0], a[1]);
                       }});
    imports.push_back({"wali", "get_envc", i32ret({}),
                       [this](EngineThread&, uint64_t*) -> uint64_t {
                         return startup_->envc();
                       }});
    imports.push_back({"wali", "get_env_len", i32ret({}),
                       [this](EngineThread&, uint64_t*) -> uint64_t {
                         return startup_->env_len();
                       }});
    imports.push_back({"wali", "copy_env", i32ret({VT::I32, VT::I32}),
                       [this](EngineThread& th, uint64_t* a) -> uint64_t {
                         return startup_->copy_env(th.instance().memory(), a[0], a[1]);
                       }});
    imports.push_back({"wali", "set_mmap_base", none({VT::I32}),
                       [this](EngineThread&, uint64_t* a) -> uint64_t {
                         ensure_pool();
                         pool_->set_base(a[0]);
                         return 0;
                       }});
    imports.push_back({"wali", "sigcheck", none({}),
                       [this](EngineThread& th, uint64_t*) -> uint64_t {
                         signals_->sigcheck(get_or_register(th).deferrals);
                         return 0;
                       },
                       Intrinsic::Sigcheck});
    return imports;
  }

  HostImport make_syscall_import(const VirtualSyscallSpec& spec, size_t arity) {
    const VirtualSyscallSpec* s = &spec;
    return {"wali", spec.name, syscall_type(arity),
            [this, s, arity](EngineThread& th, uint64_t* args) -> uint64_t {
              uint64_t a[6] = {0, 0, 0, 0, 0, 0};
              for (size_t i = 0; i < arity; ++i) a[i] = args[i];
              return static_cast<uint64_t>(dispatch(th, *s, a, arity));
            }};
  }

  GuestThread& get_or_register(EngineThread& th) {
    if (t_guest_thread == nullptr) {
      uint32_t tid = static_cast<uint32_t>(::syscall(SYS_gettid));
      t_guest_thread = threads_.register_thread(tid, &th);
      th.user = t_guest_thread;
    }
    return *t_guest_thread;
  }

  void ensure_pool() {
    std::call_once(pool_once_, [this] {
      auto maps = FlagMaps::for_host();
      pool_ = std::make_unique<MmapPool>(
          instance_->memory(), instance_->memory().byte_size(), maps.mmap_prot,
          maps.mmap_flags, [this](const std::string& msg) { warn(msg); });
    });
  }

  void warn(const std::string& msg) {
    if (opts_.trace)
      opts_.trace->note(msg);
    else
      std::fprintf(stderr, "wali: %s\n", msg.c_str());
  }

  RunResult finish_exit(int code) {
    if (threads_.count() > 1) std::_Exit(code);
    return {RunResult::Kind::Exit, code, {}};
  }

  void drain_exit_checks(GuestThread& gt) {
    // A clean _start return still delivers whatever became pending last.
    signals_->sigcheck(gt.deferrals);
  }

  // ---- dispatch -----------------------------------------------------------

  int64_t dispatch(EngineThread& th, const VirtualSyscallSpec& spec,
                   uint64_t* raw, size_t argc) {
    GuestThread& gt = get_or_register(th);
    PolicyRule rule;
    bool traced = opts_.trace != nullptr;
    if (opts_.policy) {
      rule = opts_.policy->rule(spec.name);
      if (traced && opts_.policy->traced(spec.name)) {
        traced = true;
      } else if (opts_.policy->has_trace_rules()) {
        traced = false;
      }
    }
    int64_t ret;
    uint64_t t0 = traced ? monotonic_ns() : 0;
    switch (rule.action) {
      case PolicyAction::Deny:
        ret = -rule.deny_errno;
        break;
      case PolicyAction::Trap:
        throw Trap("syscall " + spec.name + " blocked by policy");
      case PolicyAction::Allow:
      default:
        if (spec.behavior == SyscallBehavior::Unsupported || !spec.handler)
          throw Trap("unsupported syscall: " + spec.name);
        SyscallEnv env{*this, th, gt};
        ret = spec.handler(env, std::span<const uint64_t, 6>(raw, 6));
        break;
    }
    if (traced) {
      uint64_t t1 = monotonic_ns();
      opts_.trace->record(spec.name, std::span<const uint64_t>(raw, argc), ret,
                          t0, t1, gt.tid);
    }
    signals_->sigcheck(gt.deferrals);
    return ret;
  }

  // ---- signals ------------------------------------------------------------

  static uint64_t strip_reserved(uint64_t mask) {
    for (int sig : {SIGKILL, SIGSTOP, SIGSEGV, SIGBUS, SIGFPE, SIGILL})
      mask &= ~sig_bit(sig);
    return mask;
  }

  void setup_signals() {
    SignalHooks hooks;
    hooks.call_handler = [](int sig, uint32_t handler) {
      GuestThread* gt = t_guest_thread;
      if (!gt || !gt->exec) return;
      wasm::FuncType ty{{wasm::ValType::I32}, {}};
      gt->exec->call_table(handler, {{static_cast<uint64_t>(sig)}}, ty);
    };
    hooks.current_mask = [] {
      sigset_t cur;
      ::pthread_sigmask(SIG_SETMASK, nullptr, &cur);
      return from_native_sigset(cur);
    };
    hooks.block_mask = [](uint64_t add) {
      sigset_t cur;
      ::pthread_sigmask(SIG_SETMASK, nullptr, &cur);
      uint64_t old = from_native_sigset(cur);
      sigset_t next = to_native_sigset(old | strip_reserved(add));
      ::pthread_sigmask(SIG_SETMASK, &next, nullptr);
      return old;
    };
    hooks.set_mask = [](uint64_t mask) {
      sigset_t next = to_native_sigset(strip_reserved(mask));
      ::pthread_sigmask(SIG_SETMASK, &next, nullptr);
    };
    hooks.on_default_terminate = [](int sig) {
      throw Trap(format_msg("terminated by signal %d (%s)", sig,
                            ::sigabbrev_np(sig) ? ::sigabbrev_np(sig) : "?"));
    };
    hooks.on_default_passthrough = [](int sig) {
      // Hand the signal to its native default action (stop/continue class):
      // drop the trampoline, deliver synchronously, then re-arm.
      struct sigaction dfl{};
      dfl.sa_handler = SIG_DFL;
      sigemptyset(&dfl.sa_mask);
      struct sigaction saved{};
      ::sigaction(sig, &dfl, &saved);
      sigset_t one = to_native_sigset(sig_bit(sig));
      sigset_t prev;
      ::pthread_sigmask(SIG_UNBLOCK, &one, &prev);
      ::kill(::getpid(), sig);
      ::pthread_sigmask(SIG_SETMASK, &prev, nullptr);
      ::sigaction(sig, &saved, nullptr);
    };
    signals_ = std::make_unique<SignalState>(std::move(hooks));
    signal_state_slot().store(signals_.get(), std::memory_order_release);
  }

  // Every catchable signal is virtualized while the runtime lives; the
  // kernel-owned and fault signals stay with the host (the engine converts
  // guest faults itself). Runs after instantiation so a failed constructor
  // never leaves trampolines behind.
  void arm_signals() {
    for (int sig = 1; sig <= 64; ++sig) {
      if (sig == SIGKILL || sig == SIGSTOP || sig == SIGSEGV || sig == SIGBUS ||
          sig == SIGFPE || sig == SIGILL)
        continue;
      struct sigaction old{};
      if (install_trampoline(sig, &old)) saved_dispositions_.emplace_back(sig, old);
    }
  }

  // ---- handlers -----------------------------------------------------------

  static int32_t s32(uint64_t v) { return static_cast<int32_t>(static_cast<uint32_t>(v)); }
  static int64_t s64(uint64_t v) { return static_cast<int64_t>(v); }

  static int64_t errno_ret(long r) { return r < 0 ? -errno : r; }

  EngineMemory& mem() { return instance_->memory(); }

  void install_handlers() {
    auto& man = LayoutManifest::builtin();
    auto fm = FlagMaps::for_host();
    auto H = [this](const char* name, SyscallHandler fn) {
      registry_.set_handler(name, std::move(fn));
    };

    H("read", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      uint8_t* p = translate(mem(), a[1], a[2]);
      return errno_ret(::read(s32(a[0]), p, a[2]));
    });
    H("write", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      const uint8_t* p = translate(mem(), a[1], a[2]);
      return errno_ret(::write(s32(a[0]), p, a[2]));
    });
    H("open", [this, fm](SyscallEnv&, std::span<const uint64_t, 6> a) {
      std::string path = read_guest_cstring(mem(), a[0]);
      int flags = static_cast<int>(fm.file_status.to_host(static_cast<uint32_t>(a[1])));
      return errno_ret(::open(path.c_str(), flags, static_cast<mode_t>(a[2])));
    });
    H("openat", [this, fm](SyscallEnv&, std::span<const uint64_t, 6> a) {
      std::string path = read_guest_cstring(mem(), a[1]);
      int flags = static_cast<int>(fm.file_status.to_host(static_cast<uint32_t>(a[2])));
      return errno_ret(::openat(s32(a[0]), path.c_str(), flags,
                                static_cast<mode_t>(a[3])));
    });
    H("close", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::close(s32(a[0])));
    });
    H("lseek", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::lseek(s32(a[0]), s64(a[1]), s32(a[2])));
    });
    H("dup", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::dup(s32(a[0])));
    });
    H("access", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      std::string path = read_guest_cstring(mem(), a[0]);
      return errno_ret(::access(path.c_str(), s32(a[1])));
    });
    H("stat", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      std::string path = read_guest_cstring(mem(), a[0]);
      struct stat st{};
      long r = ::stat(path.c_str(), &st);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_kstat(man, translate(mem(), a[1], man.required("kstat").size), st);
      return int64_t{0};
    });
    H("lstat", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      std::string path = read_guest_cstring(mem(), a[0]);
      struct stat st{};
      long r = ::lstat(path.c_str(), &st);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_kstat(man, translate(mem(), a[1], man.required("kstat").size), st);
      return int64_t{0};
    });
    H("fstat", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      struct stat st{};
      long r = ::fstat(s32(a[0]), &st);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_kstat(man, translate(mem(), a[1], man.required("kstat").size), st);
      return int64_t{0};
    });
    H("pread64", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      uint8_t* p = translate(mem(), a[1], a[2]);
      return errno_ret(::pread(s32(a[0]), p, a[2], s64(a[3])));
    });
    H("writev", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int cnt = s32(a[2]);
      if (cnt < 0 || cnt > 1024) return static_cast<int64_t>(-EINVAL);
      std::vector<iovec> iov(static_cast<size_t>(cnt));
      for (int i = 0; i < cnt; ++i) {
        auto gv = layout::load_iovec(man, translate(mem(), a[1] + 8u * i, 8));
        iov[static_cast<size_t>(i)] = {translate(mem(), gv.base, gv.len), gv.len};
      }
      return errno_ret(::writev(s32(a[0]), iov.data(), cnt));
    });
    H("poll", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int nfds = s32(a[1]);
      if (nfds < 0 || nfds > 1024) return static_cast<int64_t>(-EINVAL);
      std::vector<pollfd> fds(static_cast<size_t>(nfds));
      for (int i = 0; i < nfds; ++i) {
        auto pf = layout::load_pollfd(man, translate(mem(), a[0] + 8u * i, 8));
        fds[static_cast<size_t>(i)] = {pf.fd, pf.events, 0};
      }
      long r = ::poll(fds.data(), static_cast<nfds_t>(nfds), s32(a[2]));
      if (r < 0) return static_cast<int64_t>(-errno);
      for (int i = 0; i < nfds; ++i)
        layout::store_pollfd_revents(man, translate(mem(), a[0] + 8u * i, 8),
                                     fds[static_cast<size_t>(i)].revents);
      return static_cast<int64_t>(r);
    });
    H("ioctl", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      unsigned long req = a[1];
      switch (req) {
        case FIONREAD: {
          int v = 0;
          long r = ::ioctl(s32(a[0]), FIONREAD, &v);
          if (r < 0) return static_cast<int64_t>(-errno);
          std::memcpy(translate(mem(), a[2], 4), &v, 4);
          return static_cast<int64_t>(r);
        }
        case FIONBIO: {
          int v = 0;
          std::memcpy(&v, translate(mem(), a[2], 4), 4);
          return errno_ret(::ioctl(s32(a[0]), FIONBIO, &v));
        }
        case TIOCGWINSZ: {
          winsize ws{};
          long r = ::ioctl(s32(a[0]), TIOCGWINSZ, &ws);
          if (r < 0) return static_cast<int64_t>(-errno);
          std::memcpy(translate(mem(), a[2], sizeof ws), &ws, sizeof ws);
          return static_cast<int64_t>(r);
        }
        default:
          // Only untyped/byte-buffer requests are supported.
          return static_cast<int64_t>(-ENOTTY);
      }
    });
    H("fcntl", [this, fm](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int cmd = s32(a[1]);
      switch (cmd) {
        case F_GETFD:
        case F_GETFL:
          return errno_ret(::fcntl(s32(a[0]), cmd));
        case F_SETFD:
        case F_DUPFD:
        case F_DUPFD_CLOEXEC:
          return errno_ret(::fcntl(s32(a[0]), cmd, static_cast<int>(a[2])));
        case F_SETFL: {
          int flags = static_cast<int>(fm.file_status.to_host(static_cast<uint32_t>(a[2])));
          return errno_ret(::fcntl(s32(a[0]), F_SETFL, flags));
        }
        default:
          return static_cast<int64_t>(-EINVAL);
      }
    });
    H("getcwd", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      uint8_t* p = translate(mem(), a[0], a[1]);
      return errno_ret(::syscall(SYS_getcwd, p, a[1]));
    });
    H("uname", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      utsname u{};
      long r = ::uname(&u);
      if (r < 0) return static_cast<int64_t>(-errno);
      // Canonical record: six consecutive 65-byte fields.
      uint8_t* p = translate(mem(), a[0], 390);
      std::memcpy(p, &u, 390);
      return int64_t{0};
    });
    H("pipe", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int fds[2];
      long r = ::pipe(fds);
      if (r < 0) return static_cast<int64_t>(-errno);
      std::memcpy(translate(mem(), a[0], 8), fds, 8);
      return int64_t{0};
    });
    H("pipe2", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int fds[2];
      long r = ::pipe2(fds, s32(a[1]));
      if (r < 0) return static_cast<int64_t>(-errno);
      std::memcpy(translate(mem(), a[0], 8), fds, 8);
      return int64_t{0};
    });

    // identity and time
    H("getpid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::getpid());
    });
    H("getppid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::getppid());
    });
    H("gettid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::syscall(SYS_gettid));
    });
    H("getuid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::getuid());
    });
    H("geteuid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::geteuid());
    });
    H("getgid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::getgid());
    });
    H("getegid", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return static_cast<int64_t>(::getegid());
    });
    H("sched_yield", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      return errno_ret(::sched_yield());
    });
    H("gettimeofday", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      timeval tv{};
      long r = ::gettimeofday(&tv, nullptr);
      if (r < 0) return static_cast<int64_t>(-errno);
      if (a[0])
        layout::store_timeval(man, translate(mem(), a[0], man.required("timeval").size), tv);
      return int64_t{0};
    });
    H("clock_gettime", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      timespec ts{};
      long r = ::clock_gettime(s32(a[0]), &ts);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_timespec(man, translate(mem(), a[1], man.required("timespec").size), ts);
      return int64_t{0};
    });
    H("nanosleep", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      timespec req = layout::load_timespec(man, translate(mem(), a[0], 16));
      timespec rem{};
      long r = ::nanosleep(&req, &rem);
      if (r < 0) {
        int err = errno;
        if (err == EINTR && a[1])
          layout::store_timespec(man, translate(mem(), a[1], 16), rem);
        return static_cast<int64_t>(-err);
      }
      return int64_t{0};
    });
    H("getrusage", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      rusage ru{};
      long r = ::getrusage(s32(a[0]), &ru);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_rusage(man, translate(mem(), a[1], man.required("rusage").size), ru);
      return int64_t{0};
    });
    H("getrlimit", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      rlimit rl{};
      long r = ::getrlimit(s32(a[0]), &rl);
      if (r < 0) return static_cast<int64_t>(-errno);
      layout::store_rlimit(man, translate(mem(), a[1], man.required("rlimit").size), rl);
      return int64_t{0};
    });
    H("prlimit64", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      rlimit new_rl{}, old_rl{};
      rlimit* new_p = nullptr;
      if (a[2]) {
        new_rl = layout::load_rlimit(man, translate(mem(), a[2], 16));
        new_p = &new_rl;
      }
      long r = ::syscall(SYS_prlimit64, s32(a[0]), s32(a[1]), new_p,
                         a[3] ? &old_rl : nullptr);
      if (r < 0) return static_cast<int64_t>(-errno);
      if (a[3]) layout::store_rlimit(man, translate(mem(), a[3], 16), old_rl);
      return int64_t{0};
    });

    // sockets
    H("socket", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::socket(s32(a[0]), s32(a[1]), s32(a[2])));
    });
    H("socketpair", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int sv[2];
      long r = ::socketpair(s32(a[0]), s32(a[1]), s32(a[2]), sv);
      if (r < 0) return static_cast<int64_t>(-errno);
      std::memcpy(translate(mem(), a[3], 8), sv, 8);
      return int64_t{0};
    });
    H("sendto", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      const uint8_t* buf = translate(mem(), a[1], a[2]);
      const sockaddr* dest = nullptr;
      socklen_t dlen = static_cast<socklen_t>(a[5]);
      if (a[4]) dest = reinterpret_cast<const sockaddr*>(translate(mem(), a[4], dlen));
      return errno_ret(::sendto(s32(a[0]), buf, a[2], s32(a[3]), dest, dest ? dlen : 0));
    });
    H("recvfrom", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      uint8_t* buf = translate(mem(), a[1], a[2]);
      if (!a[4])
        return errno_ret(::recvfrom(s32(a[0]), buf, a[2], s32(a[3]), nullptr, nullptr));
      uint32_t glen = 0;
      std::memcpy(&glen, translate(mem(), a[5], 4), 4);
      sockaddr_storage ss{};
      socklen_t slen = sizeof ss;
      long r = ::recvfrom(s32(a[0]), buf, a[2], s32(a[3]),
                          reinterpret_cast<sockaddr*>(&ss), &slen);
      if (r < 0) return static_cast<int64_t>(-errno);
      uint32_t copy = std::min<uint32_t>(glen, static_cast<uint32_t>(slen));
      if (copy) std::memcpy(translate(mem(), a[4], copy), &ss, copy);
      uint32_t out = static_cast<uint32_t>(slen);
      std::memcpy(translate(mem(), a[5], 4), &out, 4);
      return static_cast<int64_t>(r);
    });

    // memory
    H("mmap", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      ensure_pool();
      return pool_->mmap(a[0], a[1], a[2], a[3], s32(a[4]), a[5]);
    });
    H("munmap", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      ensure_pool();
      return pool_->munmap(a[0], a[1]);
    });
    H("mremap", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      ensure_pool();
      return pool_->mremap(a[0], a[1], a[2], a[3]);
    });
    H("mprotect", [this](SyscallEnv&, std::span<const uint64_t, 6> a) {
      ensure_pool();
      return pool_->mprotect(a[0], a[1], a[2]);
    });
    H("brk", [this](SyscallEnv&, std::span<const uint64_t, 6>) {
      ensure_pool();
      return static_cast<int64_t>(pool_->brk());
    });

    // signals
    H("rt_sigaction", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      if (a[3] != 8) return static_cast<int64_t>(-EINVAL);
      int sig = s32(a[0]);
      std::optional<layout::GuestSigaction> act;
      if (a[1]) {
        size_t sz = man.required("ksigaction").size;
        act = layout::load_ksigaction(man, translate(mem(), a[1], sz));
      }
      layout::GuestSigaction old{};
      int64_t r = signals_->set_action(sig, act, a[2] ? &old : nullptr);
      if (r == 0 && a[2]) {
        size_t sz = man.required("ksigaction").size;
        layout::store_ksigaction(man, translate(mem(), a[2], sz), old);
      }
      return r;
    });
    H("rt_sigprocmask", [this](SyscallEnv& env, std::span<const uint64_t, 6> a) {
      if (a[3] != 8) return static_cast<int64_t>(-EINVAL);
      int how = s32(a[0]);
      if (how != SIG_BLOCK && how != SIG_UNBLOCK && how != SIG_SETMASK)
        return static_cast<int64_t>(-EINVAL);
      sigset_t cur;
      ::pthread_sigmask(SIG_SETMASK, nullptr, &cur);
      uint64_t old = from_native_sigset(cur);
      if (a[2]) std::memcpy(translate(mem(), a[2], 8), &old, 8);
      if (a[1]) {
        uint64_t req = 0;
        std::memcpy(&req, translate(mem(), a[1], 8), 8);
        uint64_t next = how == SIG_BLOCK     ? old | req
                        : how == SIG_UNBLOCK ? old & ~req
                                             : req;
        sigset_t ns = to_native_sigset(strip_reserved(next));
        ::pthread_sigmask(SIG_SETMASK, &ns, nullptr);
        // Mask changes get an immediate poll so newly unblocked pending
        // signals deliver here rather than at an arbitrary later safepoint.
        signals_->sigcheck(env.gt.deferrals);
      }
      return int64_t{0};
    });
    H("rt_sigreturn", [](SyscallEnv&, std::span<const uint64_t, 6>) {
      // Handler returns are ordinary Wasm returns; nothing to restore.
      return int64_t{0};
    });
    H("kill", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::kill(s32(a[0]), s32(a[1])));
    });
    H("tkill", [](SyscallEnv&, std::span<const uint64_t, 6> a) {
      return errno_ret(::syscall(SYS_tkill, s32(a[0]), s32(a[1])));
    });

    // futex
    H("futex", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int op = s32(a[1]);
      int cmd = op & 0x7F;
      uint8_t* uaddr = translate(mem(), a[0], 4);
      if (cmd == FUTEX_WAIT) {
        timespec ts;
        timespec* tp = nullptr;
        if (a[3]) {
          ts = layout::load_timespec(man, translate(mem(), a[3], 16));
          tp = &ts;
        }
        return errno_ret(::syscall(SYS_futex, uaddr, op, s32(a[2]), tp, nullptr, 0));
      }
      if (cmd == FUTEX_WAKE)
        return errno_ret(::syscall(SYS_futex, uaddr, op, s32(a[2]), nullptr, nullptr, 0));
      return static_cast<int64_t>(-ENOSYS);
    });

    // process model
    H("exit_group", [](SyscallEnv&, std::span<const uint64_t, 6> a) -> int64_t {
      throw ProcessExit{s32(a[0])};
    });
    H("exit", [this](SyscallEnv& env, std::span<const uint64_t, 6> a) -> int64_t {
      if (env.gt.tid == main_tid_) throw ProcessExit{s32(a[0])};
      throw ThreadExit{s32(a[0])};
    });
    H("fork", [this](SyscallEnv& env, std::span<const uint64_t, 6>) -> int64_t {
      if (threads_.count() > 1) {
        warn("fork rejected: guest has live threads");
        return -ENOSYS;
      }
      long pid = ::fork();
      if (pid < 0) return -errno;
      if (pid == 0) {
        uint32_t tid = static_cast<uint32_t>(::syscall(SYS_gettid));
        main_tid_ = tid;
        threads_.reset_after_fork(tid, &env.thread);
        t_guest_thread = threads_.find(tid);
        env.thread.user = t_guest_thread;
        return 0;
      }
      return pid;
    });
    H("wait4", [this, &man](SyscallEnv&, std::span<const uint64_t, 6> a) {
      int status = 0;
      rusage ru{};
      long r = ::wait4(s32(a[0]), &status, s32(a[2]), a[3] ? &ru : nullptr);
      if (r < 0) return static_cast<int64_t>(-errno);
      if (a[1]) std::memcpy(translate(mem(), a[1], 4), &status, 4);
      if (a[3])
        layout::store_rusage(man, translate(mem(), a[3], man.required("rusage").size), ru);
      return static_cast<int64_t>(r);
    });
    H("execve", [this](SyscallEnv& env, std::span<const uint64_t, 6> a) {
      return do_execve(env, a);
    });
    H("clone", [this](SyscallEnv& env, std::span<const uint64_t, 6> a) {
      return do_clone(env, a[0], a[1], a[2], a[3], a[4]);
    });
  }

  std::vector<std::string> read_guest_string_array(uint64_t addr) {
    std::vector<std::string> out;
    if (!addr) return out;
    for (uint32_t i = 0; i < 1024; ++i) {
      uint32_t p = 0;
      std::memcpy(&p, translate(mem(), addr + 4u * i, 4), 4);
      if (p == 0) return out;
      out.push_back(read_guest_cstring(mem(), p));
    }
    throw Trap("guest string array too long");
  }

  int64_t do_execve(SyscallEnv&, std::span<const uint64_t, 6> a) {
    std::string path = read_guest_cstring(mem(), a[0]);
    std::vector<std::string> gargv = read_guest_string_array(a[1]);
    std::vector<std::string> genv = read_guest_string_array(a[2]);
    if (::access(path.c_str(), F_OK) != 0) return -errno;
    std::vector<std::string> child_env = merge_env(env_, genv);

    if (file_has_wasm_magic(path)) {
      if (opts_.runner_path.empty()) return -ENOEXEC;
      write_env_segment(::getpid(), child_env);
      std::vector<std::string> argv_s = {opts_.runner_path, "run", path,
                                         "--argv0",
                                         gargv.empty() ? path : gargv[0], "--"};
      for (size_t i = 1; i < gargv.size(); ++i) argv_s.push_back(gargv[i]);
      std::vector<char*> argv_p;
      for (auto& s : argv_s) argv_p.push_back(s.data());
      argv_p.push_back(nullptr);
      char* envp[] = {nullptr};
      ::execve(opts_.runner_path.c_str(), argv_p.data(), envp);
      int err = errno;
      ::shm_unlink(env_segment_name(::getpid()).c_str());
      return -err;
    }

    std::vector<std::string> argv_s = gargv.empty() ? std::vector<std::string>{path} : gargv;
    std::vector<char*> argv_p;
    for (auto& s : argv_s) argv_p.push_back(s.data());
    argv_p.push_back(nullptr);
    std::vector<char*> envp_p;
    for (auto& s : child_env) envp_p.push_back(s.data());
    envp_p.push_back(nullptr);
    ::execve(path.c_str(), argv_p.data(), envp_p.data());
    return -errno;
  }

  int64_t do_clone(SyscallEnv& env, uint64_t flags, uint64_t stack, uint64_t ptid,
                   uint64_t ctid, uint64_t tls) {
    constexpr uint64_t kThreadSet = guest::kCloneVm | guest::kCloneThread;
    if ((flags & kThreadSet) != kThreadSet) return -ENOSYS;
    auto start = instance_->find_exported_func("__wali_thread_start");
    if (!start) {
      warn("clone rejected: module does not export __wali_thread_start");
      return -ENOSYS;
    }
    wasm::FuncType want{{wasm::ValType::I32}, {}};
    if (!(instance_->module().func_type(*start) == want)) {
      warn("clone rejected: __wali_thread_start has the wrong signature");
      return -ENOSYS;
    }

    std::unique_ptr<EngineThread> child = instance_->create_thread(env.thread);
    if (flags & guest::kCloneSettls) {
      if (!child->set_global("__tls_base", tls)) {
        warn("clone rejected: module does not export the __tls_base global");
        return -ENOSYS;
      }
    }

    std::promise<uint32_t> tid_promise;
    std::future<uint32_t> tid_future = tid_promise.get_future();
    std::thread worker(
        [this, flags, stack, ptid, ctid](std::unique_ptr<EngineThread> exec,
                                         std::promise<uint32_t> promise) {
          uint32_t tid = static_cast<uint32_t>(::syscall(SYS_gettid));
          EngineThread* raw = exec.get();
          GuestThread* gt = threads_.register_thread(tid, std::move(exec));
          t_guest_thread = gt;
          raw->user = gt;
          try {
            if (flags & guest::kCloneParentSettid)
              std::memcpy(translate(mem(), ptid, 4), &tid, 4);
            if (flags & guest::kCloneChildSettid)
              std::memcpy(translate(mem(), ctid, 4), &tid, 4);
            if (flags & guest::kCloneChildCleartid) gt->clear_tid_addr = ctid;
            promise.set_value(tid);
          } catch (...) {
            promise.set_exception(std::current_exception());
            threads_.retire(tid);
            return;
          }
          run_guest_thread(*raw, *gt, stack);
        },
        std::move(child), std::move(tid_promise));

    uint32_t tid;
    try {
      tid = tid_future.get();
    } catch (...) {
      worker.join();
      throw;
    }
    if (!threads_.adopt_worker(tid, std::move(worker))) worker.detach();
    return tid;
  }

  void run_guest_thread(EngineThread& exec, GuestThread& gt, uint64_t stack) {
    uint32_t tid = gt.tid;
    uint64_t clear_addr = 0;
    try {
      exec.call_export("__wali_thread_start", {{stack}});
    } catch (const ThreadExit&) {
      // normal thread termination
    } catch (const ProcessExit& e) {
      std::_Exit(e.code & 0xFF);
    } catch (const Trap& t) {
      std::fprintf(stderr, "trap in thread %u: %s\n", tid, t.what());
      std::_Exit(134);
    }
    clear_addr = gt.clear_tid_addr;
    if (clear_addr) {
      try {
        uint8_t* p = translate(mem(), clear_addr, 4);
        uint32_t zero = 0;
        std::memcpy(p, &zero, 4);
        ::syscall(SYS_futex, p, FUTEX_WAKE, INT_MAX, nullptr, nullptr, 0);
      } catch (const Trap&) {
      }
    }
    threads_.retire(tid);
  }

  RuntimeOptions opts_;
  Registry registry_;
  std::vector<std::string> env_;
  std::unique_ptr<StartupParams> startup_;
  std::unique_ptr<SignalState> signals_;
  std::unique_ptr<EngineInstance> instance_;
  std::unique_ptr<MmapPool> pool_;
  std::once_flag pool_once_;
  std::vector<std::pair<int, struct sigaction>> saved_dispositions_;
  ThreadRegistry threads_;
  uint32_t main_tid_ = 0;
};

} // namespace wali
