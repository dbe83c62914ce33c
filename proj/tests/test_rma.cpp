// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// One-sided semantics: window-VCI binding and fallback, hardware vs
// software completion paths, accumulate ordering modes, fetch-and-op
// atomicity, flush, and parallel window teardown.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"

using namespace mvci;

namespace {

Config quick_cfg(int contexts = 6) {
  Config cfg;
  cfg.cs_mode = CsMode::FGCache;
  cfg.contexts = contexts;
  cfg.injection_cost = 1;
  return cfg;
}

// Runs f(0) on this thread and f(1) on a helper so collective calls pair up.
template <typename F>
void both_ranks(F f) {
  std::thread peer(f, 1);
  f(0);
  peer.join();
}

}  // namespace

TEST_CASE("each window binds its own VCI, in allocation order") {
  World w(2, quick_cfg());
  std::vector<std::uint64_t> mem(8, 0);
  Win wins[2][2];
  both_ranks([&](int rank) {
    Comm wc = w.rank(rank).world_comm();
    wins[rank][0] = win_create(wc, rank == 0 ? mem.data() : nullptr,
                               rank == 0 ? 64 : 0);
    wins[rank][1] = win_create(wc, nullptr, 0);
  });
  CHECK(wins[0][0].vci() == 1);
  CHECK(wins[0][1].vci() == 2);
  CHECK(wins[1][0].vci() == 1);
  CHECK(wins[1][1].vci() == 2);
  both_ranks([&](int rank) {
    wins[rank][0].free();
    wins[rank][1].free();
  });
  CHECK(w.finalize().clean);
}

TEST_CASE("window creation never fails: exhaustion lands on the fallback") {
  World w(2, quick_cfg(16));
  std::vector<Win> wins[2];
  both_ranks([&](int rank) {
    Comm wc = w.rank(rank).world_comm();
    for (int i = 0; i < 17; ++i)
      wins[rank].push_back(win_create(wc, nullptr, 0));
  });
  for (int i = 0; i < 15; ++i)
    CHECK(wins[0][static_cast<std::size_t>(i)].vci() == i + 1);
  // VCIs 1..15 are gone; the 16th and 17th windows multiplex onto VCI 0.
  CHECK(wins[0][15].vci() == 0);
  CHECK(wins[0][16].vci() == 0);
  CHECK(w.rank(0).ctx()->pool.fallback_users() == 3);

  both_ranks([&](int rank) {
    for (Win& win : wins[rank]) win.free();
  });
  CHECK(w.rank(0).ctx()->pool.fallback_users() == 1);
  CHECK(w.rank(0).ctx()->pool.free_count() == 15);
  CHECK(w.finalize().clean);
}

TEST_CASE("freeing an idle window returns its VCI to the pool") {
  World w(2, quick_cfg());
  const std::size_t free0 = w.rank(0).ctx()->pool.free_count();
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(), nullptr, 0);
  });
  CHECK(w.rank(0).ctx()->pool.free_count() == free0 - 1);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.rank(0).ctx()->pool.free_count() == free0);
  CHECK(w.finalize().clean);
}

TEST_CASE("hardware one-sided put needs no target-side activity") {
  World w(2, quick_cfg());
  std::vector<std::uint64_t> mem(8, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0);
  });
  std::uint64_t v = 0x1122334455667788ull;
  wins[1].put(0, 16, &v, 8);
  wins[1].flush(0);
  CHECK(mem[2] == v);  // rank 0 never polled anything
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("software one-sided put completes once the target polls its VCI") {
  Config cfg = quick_cfg();
  cfg.rma_mode = RmaMode::SoftwareRMA;
  World w(2, cfg);
  std::vector<std::uint64_t> mem(4, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0);
  });

  std::atomic<bool> done{false};
  std::thread target([&] {
    Rank r0 = w.rank(0);
    while (!done.load(std::memory_order_acquire)) {
      r0.progress_vci(wins[0].vci());
      std::this_thread::yield();
    }
  });
  std::uint64_t v = 42;
  wins[1].put(0, 0, &v, 8);
  wins[1].flush(0);
  done.store(true, std::memory_order_release);
  target.join();
  CHECK(mem[0] == 42);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("get reads back remote state after a flush") {
  World w(2, quick_cfg());
  std::vector<std::uint64_t> mem(4, 0);
  mem[3] = 42;
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0);
  });
  std::uint64_t got = 0;
  wins[1].get(0, 24, &got, 8);
  wins[1].flush(0);
  CHECK(got == 42);

  // Degenerate length: completes without touching the destination.
  std::uint64_t untouched = 7;
  wins[1].get(0, 0, &untouched, 0);
  wins[1].flush(0);
  CHECK(untouched == 7);

  // Nothing outstanding: flush returns immediately.
  wins[1].flush(0);
  wins[1].flush_all();
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("out-of-range one-sided ops fault without touching memory") {
  World w(2, quick_cfg());
  std::vector<std::uint64_t> mem(2, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0);
  });
  std::uint64_t v = 5;
  wins[1].put(0, 16, &v, 8);  // extent is 16: rejected locally
  wins[1].flush(0);
  CHECK(wins[1].faults() == 1);
  CHECK(mem[0] == 0);
  CHECK(mem[1] == 0);
  CHECK_THROWS_AS(wins[1].put(2, 0, &v, 8), UsageFault);  // no such rank
  both_ranks([&](int rank) { wins[rank].free(); });
  Report rep = w.finalize();
  CHECK(rep.clean);
}

TEST_CASE("eight threads issue gets on eight disjoint windows at once") {
  World w(2, quick_cfg(18));
  constexpr int kWins = 8;
  constexpr int kGets = 64;
  std::vector<std::vector<std::uint64_t>> mem(kWins);
  for (int i = 0; i < kWins; ++i) {
    mem[static_cast<std::size_t>(i)].resize(32);
    for (int k = 0; k < 32; ++k)
      mem[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
          static_cast<std::uint64_t>(i * 1000 + k);
  }
  std::vector<Comm> comms[2];
  std::vector<Win> wins[2];
  both_ranks([&](int rank) {
    Comm wc = w.rank(rank).world_comm();
    for (int i = 0; i < kWins; ++i) comms[rank].push_back(wc.dup());
    for (int i = 0; i < kWins; ++i) {
      auto& m = mem[static_cast<std::size_t>(i)];
      wins[rank].push_back(win_create(comms[rank][static_cast<std::size_t>(i)],
                                      rank == 0 ? m.data() : nullptr,
                                      rank == 0 ? m.size() * 8 : 0));
    }
  });

  std::atomic<std::uint64_t> bad{0};
  {
    std::vector<std::thread> ts;
    for (int i = 0; i < kWins; ++i) {
      ts.emplace_back([&, i] {
        std::mt19937 rng(static_cast<std::uint32_t>(100 + i));
        Win win = wins[1][static_cast<std::size_t>(i)];
        for (int g = 0; g < kGets; ++g) {
          std::uint64_t k = rng() % 32;
          std::uint64_t got = 0;
          win.get(0, k * 8, &got, 8);
          win.flush(0);
          if (got != static_cast<std::uint64_t>(i * 1000) + k) bad.fetch_add(1);
        }
      });
    }
    for (auto& t : ts) t.join();
  }
  CHECK(bad.load() == 0);

  // Teardown runs window-per-thread on both sides, in parallel.
  both_ranks([&](int rank) {
    std::vector<std::thread> ts;
    for (int i = 0; i < kWins; ++i)
      ts.emplace_back([&, rank, i] { wins[rank][static_cast<std::size_t>(i)].free(); });
    for (auto& t : ts) t.join();
    for (Comm& c : comms[rank]) c.free();
  });
  Report rep = w.finalize();
  CHECK(rep.clean);
  CHECK(rep.net.faults == 0);
}

TEST_CASE("ordered accumulates from one source apply in program order") {
  World w(2, quick_cfg());
  std::vector<std::int64_t> mem(2, 100);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0,
                            AccOrdering::Ordered);
  });
  std::int64_t one = 1, ten = 10;
  wins[1].accumulate(0, 8, &one, 1);
  wins[1].accumulate(0, 8, &ten, 1);
  wins[1].flush(0);
  CHECK(mem[1] == 111);
  CHECK(mem[0] == 100);

  // A longer chain still reduces to the sequential application.
  for (std::int64_t i = 1; i <= 50; ++i) wins[1].accumulate(0, 0, &i, 1);
  wins[1].flush(0);
  CHECK(mem[0] == 100 + 50 * 51 / 2);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("unordered accumulates from eight threads sum exactly") {
  World w(2, quick_cfg(4));
  std::vector<std::int64_t> mem(1, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? 8 : 0, AccOrdering::None);
  });
  constexpr int kThreads = 8;
  constexpr int kAdds = 1000;
  {
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; ++t) {
      ts.emplace_back([&] {
        std::int64_t one = 1;
        for (int i = 0; i < kAdds; ++i) wins[1].accumulate(0, 0, &one, 1);
      });
    }
    for (auto& t : ts) t.join();
  }
  wins[1].flush(0);
  CHECK(mem[0] == kThreads * kAdds);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("the ordering-relaxation hint changes what windows record") {
  Config cfg = quick_cfg();
  cfg.hints.accumulate_ordering_none = true;
  World w(2, cfg);
  std::vector<std::int64_t> mem(1, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? 8 : 0);
  });
  // Unordered initiation takes no VCI lock at all; that is the observable
  // difference the hint buys.
  std::int64_t one = 1;
  auto before = instr::thread_snapshot();
  wins[1].accumulate(0, 0, &one, 1);
  auto d = instr::diff(instr::thread_snapshot(), before);
  CHECK(d.lock_total(LockClass::Vci) == 0);
  CHECK(d.lock_total(LockClass::Global) == 0);
  wins[1].flush(0);
  CHECK(mem[0] == 1);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("fetch-and-op hands out each value exactly once") {
  World w(2, quick_cfg(4));
  std::vector<std::int64_t> mem(1, 0);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? 8 : 0, AccOrdering::Ordered);
  });
  constexpr int kThreads = 8;
  constexpr int kPer = 8;
  std::vector<std::int64_t> seen(kThreads * kPer, -1);
  {
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; ++t) {
      ts.emplace_back([&, t] {
        for (int i = 0; i < kPer; ++i) {
          std::int64_t old = -1;
          wins[1].fetch_op(0, 0, 1, &old);
          // The result is defined only after a flush.
          wins[1].flush(0);
          seen[static_cast<std::size_t>(t * kPer + i)] = old;
        }
      });
    }
    for (auto& t : ts) t.join();
  }
  std::vector<bool> hit(kThreads * kPer, false);
  for (std::int64_t v : seen) {
    REQUIRE(v >= 0);
    REQUIRE(v < kThreads * kPer);
    REQUIRE_FALSE(hit[static_cast<std::size_t>(v)]);
    hit[static_cast<std::size_t>(v)] = true;
  }
  CHECK(mem[0] == kThreads * kPer);

  // Identity operand: observes without mutating.
  std::int64_t cur = -1;
  wins[1].fetch_op(0, 0, 0, &cur);
  wins[1].flush(0);
  CHECK(cur == kThreads * kPer);
  CHECK(mem[0] == kThreads * kPer);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("software mode delivers the same fetch-and-op results") {
  Config cfg = quick_cfg();
  cfg.rma_mode = RmaMode::SoftwareRMA;
  World w(2, cfg);
  std::vector<std::int64_t> mem(1, 5);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? 8 : 0);
  });
  std::atomic<bool> done{false};
  std::thread target([&] {
    Rank r0 = w.rank(0);
    while (!done.load(std::memory_order_acquire)) {
      r0.progress_vci(wins[0].vci());
      std::this_thread::yield();
    }
  });
  std::int64_t a = -1, b = -1;
  wins[1].fetch_op(0, 0, 2, &a);
  wins[1].flush(0);
  wins[1].fetch_op(0, 0, 3, &b);
  wins[1].flush(0);
  done.store(true, std::memory_order_release);
  target.join();
  CHECK(a == 5);
  CHECK(b == 7);
  CHECK(mem[0] == 10);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("flush tolerates a neighbor thread that keeps initiating") {
  World w(2, quick_cfg());
  std::vector<std::uint64_t> mem(16, 3);
  Win wins[2];
  both_ranks([&](int rank) {
    wins[rank] = win_create(w.rank(rank).world_comm(),
                            rank == 0 ? mem.data() : nullptr,
                            rank == 0 ? mem.size() * 8 : 0);
  });
  std::atomic<std::uint64_t> bad{0};
  std::thread noisy([&] {
    std::uint64_t got = 0;
    for (int i = 0; i < 500; ++i) {
      wins[1].get(0, (static_cast<std::uint64_t>(i) % 16) * 8, &got, 8);
      wins[1].flush(0);
      if (got != 3) bad.fetch_add(1);
    }
  });
  std::uint64_t got = 0;
  for (int i = 0; i < 500; ++i) {
    wins[1].get(0, 0, &got, 8);
    // May wait for the neighbor's concurrent gets too; must still return.
    wins[1].flush(0);
    if (got != 3) bad.fetch_add(1);
  }
  noisy.join();
  CHECK(bad.load() == 0);
  both_ranks([&](int rank) { wins[rank].free(); });
  CHECK(w.finalize().clean);
}

TEST_CASE("software-mode teardown doubles as target-side progress") {
  Config cfg = quick_cfg();
  cfg.rma_mode = RmaMode::SoftwareRMA;
  World w(2, cfg);
  std::vector<std::uint64_t> mem(8, 0);
  const std::uint64_t kPuts = 100;

  both_ranks([&](int rank) {
    Comm wc = w.rank(rank).world_comm();
    Win win = win_create(wc, rank == 0 ? mem.data() : nullptr,
                         rank == 0 ? mem.size() * 8 : 0);
    if (rank == 1) {
      for (std::uint64_t i = 0; i < kPuts; ++i)
        win.put(0, (i % 8) * 8, &i, 8);
      win.flush(0);
    }
    // Rank 0 heads straight into the free; the progress it performs while
    // waiting there is what completes rank 1's puts.
    win.free();
  });
  CHECK(mem[1] == 97);  // last put landing on slot 1
  CHECK(w.finalize().clean);
}

TEST_CASE("accumulates overlapping across windows trip the debug checker") {
  World w(2, quick_cfg());
  constexpr std::uint64_t kCells = 1 << 20;
  std::vector<std::int64_t> mem(kCells, 0);
  Win big[2], small[2];
  both_ranks([&](int rank) {
    Comm wc = w.rank(rank).world_comm();
    big[rank] = win_create(wc, rank == 0 ? mem.data() : nullptr,
                           rank == 0 ? kCells * 8 : 0, AccOrdering::None);
    small[rank] = win_create(wc, rank == 0 ? mem.data() : nullptr,
                             rank == 0 ? 64 : 0, AccOrdering::None);
  });

  // The checker only flags overlap while both applications are in flight,
  // so race a multi-millisecond bulk accumulate against pinpoint ones and
  // retry until the scheduler interleaves them. Different windows use
  // different apply locks and the probe rotates source lanes, so nothing
  // forces the two applies apart except timing.
  std::vector<std::int64_t> addends(kCells, 1);
  for (int attempt = 0;
       attempt < 200 && w.net().acc_overlap_flags() == 0; ++attempt) {
    std::atomic<bool> bulk_done{false};
    std::thread bulk([&] {
      big[1].accumulate(0, 0, addends.data(), kCells);
      bulk_done.store(true, std::memory_order_release);
    });
    std::int64_t one = 1;
    while (!bulk_done.load(std::memory_order_acquire))
      small[1].accumulate(0, 0, &one, 1);
    bulk.join();
    small[1].flush(0);
    big[1].flush(0);
  }
  CHECK(w.net().acc_overlap_flags() >= 1);
  both_ranks([&](int rank) {
    big[rank].free();
    small[rank].free();
  });
  Report rep = w.finalize();
  CHECK(rep.net.faults == 0);
}
