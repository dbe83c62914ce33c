// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_INSTRUMENT_HPP
#define MVCI_INSTRUMENT_HPP

#include <array>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <vector>

#include "mvci/common.hpp"

namespace mvci {

// Lock classes on the critical path. The VCI pool lock and transport queue
// mutexes are deliberately outside this accounting; they are either off the
// fast path or owned by the simulated hardware.
enum class LockClass : std::uint8_t { Global, Vci, Request, Hook };
inline constexpr std::size_t kLockClassCount = 4;

// Operation attribution for lock counts. Outermost API call wins; internal
// progress performed inside a wait is charged to the wait.
enum class OpClass : std::uint8_t {
  None,
  Isend,      // rendezvous-path send initiation (large or synchronous)
  IsendImm,   // eager send initiation, completes immediately
  Irecv,
  Put,
  Get,
  Acc,
  FetchOp,
  Wait,
  WaitImm,    // wait on an immediately-completed (lightweight) request
  Test,
  Flush,
  Coll,
  Progress,   // explicit user-driven progress call
  Other,
};
inline constexpr std::size_t kOpClassCount = 15;

inline const char* lock_class_name(LockClass c) {
  switch (c) {
    case LockClass::Global: return "global";
    case LockClass::Vci: return "vci";
    case LockClass::Request: return "request";
    case LockClass::Hook: return "hook";
  }
  return "?";
}

inline const char* op_class_name(OpClass c) {
  switch (c) {
    case OpClass::None: return "none";
    case OpClass::Isend: return "isend";
    case OpClass::IsendImm: return "isend_imm";
    case OpClass::Irecv: return "irecv";
    case OpClass::Put: return "put";
    case OpClass::Get: return "get";
    case OpClass::Acc: return "accumulate";
    case OpClass::FetchOp: return "fetch_op";
    case OpClass::Wait: return "wait";
    case OpClass::WaitImm: return "wait_imm";
    case OpClass::Test: return "test";
    case OpClass::Flush: return "flush";
    case OpClass::Coll: return "collective";
    case OpClass::Progress: return "progress";
    case OpClass::Other: return "other";
  }
  return "?";
}

namespace instr {

struct alignas(kCacheLine) Counters {
  // locks[op][lock class]: acquisitions of instrumented locks.
  std::array<std::array<std::uint64_t, kLockClassCount>, kOpClassCount> locks{};
  std::uint64_t vci_polls = 0;      // per-VCI poll passes
  std::uint64_t poll_events = 0;    // events drained by those passes
  std::uint64_t global_rounds = 0;  // escalated all-VCI rounds
  std::uint64_t contended = 0;      // instrumented acquisitions that waited

  Counters& operator+=(const Counters& o) {
    for (std::size_t i = 0; i < kOpClassCount; ++i)
      for (std::size_t j = 0; j < kLockClassCount; ++j)
        locks[i][j] += o.locks[i][j];
    vci_polls += o.vci_polls;
    poll_events += o.poll_events;
    global_rounds += o.global_rounds;
    contended += o.contended;
    return *this;
  }

  std::uint64_t lock_total(LockClass c) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < kOpClassCount; ++i)
      n += locks[i][static_cast<std::size_t>(c)];
    return n;
  }

  std::array<std::uint64_t, kLockClassCount> by_lock_class() const {
    std::array<std::uint64_t, kLockClassCount> out{};
    for (std::size_t j = 0; j < kLockClassCount; ++j)
      out[j] = lock_total(static_cast<LockClass>(j));
    return out;
  }
};

inline Counters diff(const Counters& after, const Counters& before) {
  Counters d;
  for (std::size_t i = 0; i < kOpClassCount; ++i)
    for (std::size_t j = 0; j < kLockClassCount; ++j)
      d.locks[i][j] = after.locks[i][j] - before.locks[i][j];
  d.vci_polls = after.vci_polls - before.vci_polls;
  d.poll_events = after.poll_events - before.poll_events;
  d.global_rounds = after.global_rounds - before.global_rounds;
  d.contended = after.contended - before.contended;
  return d;
}

class Registry;

struct ThreadRec {
  Counters c;
  Registry* owner = nullptr;
  explicit ThreadRec(Registry* o);
  ~ThreadRec();
};

// Process-wide registry of per-thread counters. Counters of exited threads
// fold into a retired accumulator so merged totals never lose history.
// Merged reads of still-running threads are only exact at quiesce points
// (joined or barrier-synchronized), which is how every test uses them.
class Registry {
 public:
  static Registry& instance() {
    static Registry r;
    return r;
  }

  void attach(ThreadRec* t) {
    std::lock_guard<std::mutex> g(mu_);
    live_.push_back(t);
  }

  void detach(ThreadRec* t) {
    std::lock_guard<std::mutex> g(mu_);
    retired_ += t->c;
    std::erase(live_, t);
  }

  Counters merged() {
    std::lock_guard<std::mutex> g(mu_);
    Counters out = retired_;
    for (const ThreadRec* t : live_) out += t->c;
    return out;
  }

 private:
  std::mutex mu_;
  std::vector<const ThreadRec*> live_;
  Counters retired_;
};

inline ThreadRec::ThreadRec(Registry* o) : owner(o) { owner->attach(this); }

inline ThreadRec::~ThreadRec() {
  if (owner) owner->detach(this);
}

inline Counters& tc() {
  thread_local ThreadRec rec{&Registry::instance()};
  return rec.c;
}

inline OpClass& current_op() {
  thread_local OpClass op = OpClass::None;
  return op;
}

// Sets the thread's op class if none is active; nested scopes are no-ops so
// lock counts attribute to the outermost API call.
class OpScope {
 public:
  explicit OpScope(OpClass c) {
    if (current_op() == OpClass::None) {
      current_op() = c;
      owns_ = true;
    }
  }
  ~OpScope() {
    if (owns_) current_op() = OpClass::None;
  }
  OpScope(const OpScope&) = delete;
  OpScope& operator=(const OpScope&) = delete;

 private:
  bool owns_ = false;
};

inline void count_lock(LockClass c) {
  tc().locks[static_cast<std::size_t>(current_op())]
           [static_cast<std::size_t>(c)]++;
}

inline void count_contended() { tc().contended++; }

inline void on_vci_poll(std::uint64_t events) {
  tc().vci_polls++;
  tc().poll_events += events;
}

inline void on_global_round() { tc().global_rounds++; }

inline Counters thread_snapshot() { return tc(); }
inline Counters merged_snapshot() { return Registry::instance().merged(); }

}  // namespace instr

// Mutex whose acquisitions are charged to the calling thread's current op
// class. Contended acquisitions (had to wait) are counted per mutex as well,
// which is what the cross-VCI isolation checks assert on.
class CsMutex {
 public:
  explicit CsMutex(LockClass cls) : cls_(cls) {}
  CsMutex(const CsMutex&) = delete;
  CsMutex& operator=(const CsMutex&) = delete;

  void lock() {
    if (!m_.try_lock()) {
      contended_.fetch_add(1, std::memory_order_relaxed);
      instr::count_contended();
      m_.lock();
    }
    instr::count_lock(cls_);
  }

  bool try_lock() {
    if (m_.try_lock()) {
      instr::count_lock(cls_);
      return true;
    }
    return false;
  }

  void unlock() { m_.unlock(); }

  std::uint64_t contended_count() const {
    return contended_.load(std::memory_order_relaxed);
  }

 private:
  std::mutex m_;
  LockClass cls_;
  std::atomic<std::uint64_t> contended_{0};
};

}  // namespace mvci

#endif  // MVCI_INSTRUMENT_HPP
