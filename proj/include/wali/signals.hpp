// SPDX-License-Identifier: Apache-2.0
//
// Virtual signals. Native handlers only record arrivals (a trampoline calls
// enqueue, which is async-signal-safe: atomics only); actual guest handler
// execution happens at safepoints via sigcheck. Standard signals coalesce to
// one pending entry, realtime signals queue up to 32 deep with an overflow
// counter. Delivery order is global arrival order among deliverable entries.
//
// The state machine is driven through injectable hooks so tests can run the
// exact production logic against a reference model without an engine.
#pragma once

#include <array>
#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <vector>

#include <csignal>

#include "wali/layout.hpp"

namespace wali {

constexpr int kMaxSignal = 64;
constexpr int kFirstRtSignal = 32;
constexpr uint32_t kRtQueueDepth = 32;

// Guest sa_flags values (x86-64 numbering).
constexpr uint32_t kGuestSaSiginfo = 0x00000004;
constexpr uint32_t kGuestSaRestorer = 0x04000000;
constexpr uint32_t kGuestSaOnstack = 0x08000000;
constexpr uint32_t kGuestSaRestart = 0x10000000;
constexpr uint32_t kGuestSaNodefer = 0x40000000;

inline constexpr uint64_t sig_bit(int sig) { return 1ull << (sig - 1); }

inline bool valid_signal(int sig) { return sig >= 1 && sig <= kMaxSignal; }

/// Signals whose dispositions the guest may not change: process-control and
/// the synchronous faults the engine itself owns.
inline bool registration_forbidden(int sig) {
  return sig == SIGKILL || sig == SIGSTOP || sig == SIGSEGV || sig == SIGBUS ||
         sig == SIGFPE || sig == SIGILL;
}

/// Default-action classes for deliveries that reach a default slot.
inline bool default_action_ignores(int sig) {
  return sig == SIGCHLD || sig == SIGURG || sig == SIGWINCH;
}

inline bool default_action_stops(int sig) {
  return sig == SIGTSTP || sig == SIGTTIN || sig == SIGTTOU || sig == SIGCONT;
}

inline sigset_t to_native_sigset(uint64_t mask) {
  sigset_t s;
  sigemptyset(&s);
  for (int sig = 1; sig <= kMaxSignal; ++sig)
    if (mask & sig_bit(sig)) sigaddset(&s, sig);
  return s;
}

inline uint64_t from_native_sigset(const sigset_t& s) {
  uint64_t mask = 0;
  for (int sig = 1; sig <= kMaxSignal; ++sig)
    if (sigismember(&s, sig) == 1) mask |= sig_bit(sig);
  return mask;
}

/// Per-thread stack of signals currently being handled. A signal on the
/// stack is not redelivered to that thread (unless registered SA_NODEFER).
class DeferralStack {
public:
  void push(int sig) {
    stack_.push_back(sig);
    mask_ |= sig_bit(sig);
  }

  void pop(int sig) {
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      if (*it == sig) {
        stack_.erase(std::next(it).base());
        break;
      }
    }
    recompute();
  }

  uint64_t mask() const { return mask_; }
  size_t depth() const { return stack_.size(); }
  bool active(int sig) const { return mask_ & sig_bit(sig); }

private:
  void recompute() {
    mask_ = 0;
    for (int s : stack_) mask_ |= sig_bit(s);
  }

  std::vector<int> stack_;
  uint64_t mask_ = 0;
};

enum class SigDisp : uint8_t { Default = 0, Ignore = 1, Handler = 2 };

struct SigSlot {
  SigDisp disp = SigDisp::Default;
  uint32_t handler = 0; // function table slot when disp == Handler
  uint32_t flags = 0;
  uint64_t mask = 0;
};

struct SignalHooks {
  /// Run the guest handler at table slot `handler` with argument `sig`.
  std::function<void(int sig, uint32_t handler)> call_handler;
  /// Guest-visible blocked-signal mask of the calling thread.
  std::function<uint64_t()> current_mask;
  /// Block `add` on top of the current mask; returns the previous mask.
  std::function<uint64_t(uint64_t add)> block_mask;
  /// Restore an absolute mask returned by block_mask.
  std::function<void(uint64_t mask)> set_mask;
  /// Apply a disposition change to the native signal (trampoline / DFL / IGN).
  std::function<void(int sig, SigDisp disp)> install_native;
  /// A pending signal reached delivery with a default disposition of the
  /// terminate class.
  std::function<void(int sig)> on_default_terminate;
  /// Default disposition of the stop/continue class: hand the signal back to
  /// the native process.
  std::function<void(int sig)> on_default_passthrough;
};

class SignalState {
public:
  explicit SignalState(SignalHooks hooks) : hooks_(std::move(hooks)) {}

  /// Fast-path flag polled by the safepoint intrinsic.
  const std::atomic<uint64_t>* pending_flag() const { return &summary_; }

  /// Async-signal-safe: called from native signal handlers on any thread.
  void enqueue(int sig) {
    if (!valid_signal(sig)) return;
    uint64_t seq = seq_gen_.fetch_add(1, std::memory_order_relaxed) + 1;
    if (sig < kFirstRtSignal) {
      uint64_t expected = 0;
      if (!std_pending_[sig].compare_exchange_strong(expected, seq,
                                                     std::memory_order_acq_rel))
        return; // already pending: standard signals coalesce
    } else {
      auto& ring = rt_pending_[sig - kFirstRtSignal];
      bool placed = false;
      for (auto& slot : ring.slots) {
        uint64_t expected = 0;
        if (slot.compare_exchange_strong(expected, seq, std::memory_order_acq_rel)) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        ring.overflow.fetch_add(1, std::memory_order_relaxed);
        return;
      }
    }
    summary_.fetch_or(sig_bit(sig), std::memory_order_release);
  }

  /// Guest rt_sigaction. Returns 0 or a negative errno.
  int64_t set_action(int sig, const std::optional<layout::GuestSigaction>& act,
                     layout::GuestSigaction* old_out) {
    if (!valid_signal(sig)) return -EINVAL;
    if (act && registration_forbidden(sig)) return -EINVAL;
    std::lock_guard<std::mutex> lock(mu_);
    SigSlot& slot = slots_[sig];
    if (old_out) {
      old_out->handler = slot.disp == SigDisp::Default ? 0
                         : slot.disp == SigDisp::Ignore ? 1
                                                        : slot.handler;
      old_out->flags = slot.flags;
      old_out->restorer = 0;
      old_out->mask = slot.mask;
    }
    if (act) {
      if (act->handler == 0) {
        slot = SigSlot{};
      } else if (act->handler == 1) {
        slot = SigSlot{SigDisp::Ignore, 0, act->flags, act->mask};
      } else {
        slot = SigSlot{SigDisp::Handler, act->handler, act->flags, act->mask};
      }
      if (hooks_.install_native) hooks_.install_native(sig, slot.disp);
    }
    return 0;
  }

  SigSlot slot(int sig) const {
    std::lock_guard<std::mutex> lock(mu_);
    return slots_[sig];
  }

  /// All signals with at least one queued entry.
  uint64_t pending_mask() const {
    uint64_t m = 0;
    for (int sig = 1; sig < kFirstRtSignal; ++sig)
      if (std_pending_[sig].load(std::memory_order_acquire) != 0) m |= sig_bit(sig);
    for (int sig = kFirstRtSignal; sig <= kMaxSignal; ++sig)
      if (ring_nonempty(rt_pending_[sig - kFirstRtSignal])) m |= sig_bit(sig);
    return m;
  }

  uint32_t rt_overflow(int sig) const {
    if (sig < kFirstRtSignal || sig > kMaxSignal) return 0;
    return rt_pending_[sig - kFirstRtSignal].overflow.load(std::memory_order_relaxed);
  }

  /// Safepoint entry: drain deliverable pending signals in arrival order.
  /// Reentrant deliveries (a handler whose execution reaches another
  /// safepoint) work because the lock is not held across handler calls.
  void sigcheck(DeferralStack& ds) {
    while (deliver_one(ds)) {
    }
  }

private:
  struct RtRing {
    std::array<std::atomic<uint64_t>, kRtQueueDepth> slots{};
    std::atomic<uint32_t> overflow{0};
  };

  static bool ring_nonempty(const RtRing& r) {
    for (const auto& s : r.slots)
      if (s.load(std::memory_order_acquire) != 0) return true;
    return false;
  }

  struct Picked {
    int sig = 0;
    SigSlot slot;
  };

  // Chooses and removes the lowest-sequence deliverable entry.
  std::optional<Picked> pick(DeferralStack& ds) {
    uint64_t blocked = hooks_.current_mask ? hooks_.current_mask() : 0;
    uint64_t excluded = blocked | ds.mask();
    std::lock_guard<std::mutex> lock(mu_);

    uint64_t best_seq = UINT64_MAX;
    int best_sig = 0;
    std::atomic<uint64_t>* best_entry = nullptr;

    for (int sig = 1; sig <= kMaxSignal; ++sig) {
      if (excluded & sig_bit(sig)) continue;
      if (sig < kFirstRtSignal) {
        uint64_t seq = std_pending_[sig].load(std::memory_order_acquire);
        if (seq != 0 && seq < best_seq) {
          best_seq = seq;
          best_sig = sig;
          best_entry = &std_pending_[sig];
        }
      } else {
        auto& ring = rt_pending_[sig - kFirstRtSignal];
        for (auto& slot : ring.slots) {
          uint64_t seq = slot.load(std::memory_order_acquire);
          if (seq != 0 && seq < best_seq) {
            best_seq = seq;
            best_sig = sig;
            best_entry = &slot;
          }
        }
      }
    }
    if (!best_entry) return std::nullopt;

    best_entry->store(0, std::memory_order_release);
    refresh_summary_bit(best_sig);
    return Picked{best_sig, slots_[best_sig]};
  }

  // Clear-then-recheck keeps the summary conservative against racing
  // producers: a spurious set bit only costs one slow-path pass.
  void refresh_summary_bit(int sig) {
    summary_.fetch_and(~sig_bit(sig), std::memory_order_acq_rel);
    bool still = false;
    if (sig < kFirstRtSignal) {
      still = std_pending_[sig].load(std::memory_order_acquire) != 0;
    } else {
      still = ring_nonempty(rt_pending_[sig - kFirstRtSignal]);
    }
    if (still) summary_.fetch_or(sig_bit(sig), std::memory_order_release);
  }

  bool deliver_one(DeferralStack& ds) {
    auto picked = pick(ds);
    if (!picked) return false;
    const int sig = picked->sig;
    const SigSlot slot = picked->slot;

    switch (slot.disp) {
      case SigDisp::Ignore:
        return true;
      case SigDisp::Default:
        if (default_action_ignores(sig)) return true;
        if (default_action_stops(sig)) {
          if (hooks_.on_default_passthrough) hooks_.on_default_passthrough(sig);
        } else if (hooks_.on_default_terminate) {
          hooks_.on_default_terminate(sig);
        }
        return true;
      case SigDisp::Handler:
        break;
    }

    bool defer = (slot.flags & kGuestSaNodefer) == 0;
    uint64_t extra = slot.mask | (defer ? sig_bit(sig) : 0);
    uint64_t saved = hooks_.block_mask ? hooks_.block_mask(extra) : 0;
    if (defer) ds.push(sig);
    struct Cleanup {
      SignalState* s;
      DeferralStack* ds;
      int sig;
      bool defer;
      uint64_t saved;
      ~Cleanup() {
        if (defer) ds->pop(sig);
        if (s->hooks_.set_mask) s->hooks_.set_mask(saved);
      }
    } cleanup{this, &ds, sig, defer, saved};
    if (hooks_.call_handler) hooks_.call_handler(sig, slot.handler);
    return true;
  }

  SignalHooks hooks_;
  mutable std::mutex mu_;
  std::array<SigSlot, kMaxSignal + 1> slots_{};
  std::array<std::atomic<uint64_t>, kFirstRtSignal> std_pending_{};
  std::array<RtRing, kMaxSignal - kFirstRtSignal + 1> rt_pending_{};
  std::atomic<uint64_t> summary_{0};
  std::atomic<uint64_t> seq_gen_{0};
};

/// Process-wide trampoline target. The native handler body must stay
/// async-signal-safe.
inline std::atomic<SignalState*>& signal_state_slot() {
  static std::atomic<SignalState*> slot{nullptr};
  return slot;
}

inline void signal_trampoline(int sig) {
  if (SignalState* s = signal_state_slot().load(std::memory_order_acquire)) s->enqueue(sig);
}

/// Installs the enqueue trampoline for `sig`, leaving the prior native
/// disposition in `*old`. The trampoline stays installed for every virtual
/// disposition; ignores and default actions are applied at virtual delivery,
/// never by the kernel, so a live runtime owns all catchable signals.
inline bool install_trampoline(int sig, struct sigaction* old) {
  struct sigaction sa{};
  sigemptyset(&sa.sa_mask);
  sa.sa_handler = signal_trampoline;
  // No SA_RESTART: blocking syscalls must break out with EINTR so the
  // interrupted thread reaches a safepoint.
  sa.sa_flags = 0;
  return ::sigaction(sig, &sa, old) == 0;
}

} // namespace wali
