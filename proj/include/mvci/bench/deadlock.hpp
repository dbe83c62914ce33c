// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// The two canonical stuck-without-global-progress programs, runnable with
// hybrid progress (expected: completes) or with escalation disabled and a
// watchdog (expected: StuckError, reported as a stuck verdict).
//
// pt2pt: rank 0 sends synchronously on comm1 then comm2; rank 1 runs two
// threads whose receives are interleaved with thread barriers so that each
// thread blocks inside the library while the message its peer thread needs
// sits on a VCI nobody is polling.
//
// rma: rank 0 issues software-mode gets on two windows and flushes; rank 1's
// threads are blocked receiving on unrelated comms, so only escalated
// progress ever dispatches the gets.

#ifndef MVCI_BENCH_DEADLOCK_HPP
#define MVCI_BENCH_DEADLOCK_HPP

#include <atomic>
#include <barrier>
#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"
#include "mvci/bench/common.hpp"

namespace mvci {
namespace bench {

enum class DeadlockKind { Pt2pt, Rma };

inline bool parse_deadlock_kind(const std::string& s, DeadlockKind& out) {
  if (s == "pt2pt") { out = DeadlockKind::Pt2pt; return true; }
  if (s == "rma") { out = DeadlockKind::Rma; return true; }
  return false;
}

struct DeadlockResult {
  bool completed = false;  // else: watchdog flagged the run as stuck
  bool ok = false;         // outcome matches what the progress mode promises
  double seconds = 0.0;
  std::string error;
  std::vector<Row> rows;
};

namespace detail_bench {

inline Config deadlock_config(bool hybrid) {
  Config cfg;
  cfg.contexts = 4;
  cfg.hybrid_threshold = hybrid ? 100 : kNoEscalation;
  if (!hybrid) cfg.watchdog = std::chrono::milliseconds(500);
  return cfg;
}

inline DeadlockResult deadlock_pt2pt(bool hybrid) {
  DeadlockResult res;
  Config cfg = deadlock_config(hybrid);
  World w(2, cfg);
  auto t0 = std::chrono::steady_clock::now();
  std::atomic<int> stuck{0};
  std::atomic<bool> data_ok{true};

  std::thread r1([&] {
    Comm wc = w.rank(1).world_comm();
    Comm c1 = wc.dup();
    Comm c2 = wc.dup();
    std::barrier<> sync(2);
    std::uint32_t v1 = 0, v2 = 0;
    std::thread u0([&] {
      Req q1 = c1.irecv(0, 1, &v1, 4);
      sync.arrive_and_wait();
      sync.arrive_and_wait();
      try { q1.wait(); } catch (const StuckError&) { stuck.fetch_add(1); }
    });
    std::thread u1([&] {
      Req q2 = c2.irecv(0, 2, &v2, 4);
      sync.arrive_and_wait();
      try { q2.wait(); } catch (const StuckError&) { stuck.fetch_add(1); }
      sync.arrive_and_wait();
    });
    u0.join();
    u1.join();
    if (hybrid) {
      if (v1 != 11 || v2 != 22) data_ok.store(false);
      c2.free();
      c1.free();
    }
  });

  Comm wc = w.rank(0).world_comm();
  Comm c1 = wc.dup();
  Comm c2 = wc.dup();
  std::uint32_t a = 11, b = 22;
  if (hybrid) {
    c1.issend(1, 1, &a, 4).wait();
    c2.issend(1, 2, &b, 4).wait();
    c2.free();
    c1.free();
    r1.join();
    res.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
    Report rep = w.finalize();
    res.completed = stuck.load() == 0;
    res.ok = res.completed && data_ok.load() && rep.clean;
    if (!res.ok) res.error = "deadlock/pt2pt: hybrid run did not complete cleanly";
  } else {
    Req s1 = c1.issend(1, 1, &a, 4);
    try { s1.wait(); } catch (const StuckError&) { stuck.fetch_add(1); }
    r1.join();
    res.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
    w.finalize();  // leaked requests expected; drain must not crash
    res.completed = false;
    res.ok = stuck.load() > 0;
    if (!res.ok) res.error = "deadlock/pt2pt: watchdog never fired";
  }
  return res;
}

inline DeadlockResult deadlock_rma(bool hybrid) {
  DeadlockResult res;
  Config cfg = deadlock_config(hybrid);
  cfg.rma_mode = RmaMode::SoftwareRMA;  // gets need target-side dispatch
  World w(2, cfg);
  auto t0 = std::chrono::steady_clock::now();
  std::atomic<int> stuck{0};
  std::atomic<bool> data_ok{true};

  std::thread r1([&] {
    Comm wc = w.rank(1).world_comm();
    Comm ca = wc.dup();
    Comm cb = wc.dup();
    std::int64_t cell1 = 0xA1, cell2 = 0xB2;
    Win w1 = win_create(wc, &cell1, 8, AccOrdering::Ordered);
    Win w2 = win_create(wc, &cell2, 8, AccOrdering::Ordered);
    std::uint32_t ra = 0, rb = 0;
    std::thread u0([&] {
      try { ca.recv(0, 1, &ra, 4); } catch (const StuckError&) { stuck.fetch_add(1); }
    });
    std::thread u1([&] {
      try { cb.recv(0, 2, &rb, 4); } catch (const StuckError&) { stuck.fetch_add(1); }
    });
    u0.join();
    u1.join();
    if (hybrid) {
      if (ra != 1 || rb != 2) data_ok.store(false);
      w2.free();
      w1.free();
      cb.free();
      ca.free();
    }
  });

  Comm wc = w.rank(0).world_comm();
  Comm ca = wc.dup();
  Comm cb = wc.dup();
  Win w1 = win_create(wc, nullptr, 0, AccOrdering::Ordered);
  Win w2 = win_create(wc, nullptr, 0, AccOrdering::Ordered);
  std::int64_t g1 = 0, g2 = 0;
  if (hybrid) {
    w1.get(1, 0, &g1, 8);
    w1.flush(1);
    w2.get(1, 0, &g2, 8);
    w2.flush(1);
    std::uint32_t va = 1, vb = 2;
    ca.send(1, 1, &va, 4);
    cb.send(1, 2, &vb, 4);
    if (g1 != 0xA1 || g2 != 0xB2) data_ok.store(false);
    w2.free();
    w1.free();
    cb.free();
    ca.free();
    r1.join();
    res.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
    Report rep = w.finalize();
    res.completed = stuck.load() == 0;
    res.ok = res.completed && data_ok.load() && rep.clean;
    if (!res.ok) res.error = "deadlock/rma: hybrid run did not complete cleanly";
  } else {
    w1.get(1, 0, &g1, 8);
    try { w1.flush(1); } catch (const StuckError&) { stuck.fetch_add(1); }
    r1.join();
    res.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();
    w.finalize();
    res.completed = false;
    res.ok = stuck.load() > 0;
    if (!res.ok) res.error = "deadlock/rma: watchdog never fired";
  }
  return res;
}

}  // namespace detail_bench

inline DeadlockResult run_deadlock(DeadlockKind which, bool hybrid) {
  DeadlockResult res = which == DeadlockKind::Pt2pt
                           ? detail_bench::deadlock_pt2pt(hybrid)
                           : detail_bench::deadlock_rma(hybrid);
  Row proto;
  proto.benchmark = "deadlock";
  proto.mode = which == DeadlockKind::Pt2pt ? "pt2pt" : "rma";
  proto.threads = 2;
  proto.vcis = 3;
  proto.msg_size = 4;
  proto.iters = 1;
  proto.metric = "completed";
  proto.value = res.completed ? 1.0 : 0.0;
  proto.run_id = 1;
  res.rows.push_back(proto);
  proto.metric = "seconds";
  proto.value = res.seconds;
  res.rows.push_back(proto);
  return res;
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_DEADLOCK_HPP
