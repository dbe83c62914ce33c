// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runtime assembly: world construction, communicator and endpoint-set
// lifecycles, VCI recycling, group creation, configuration parsing, and the
// teardown report.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
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

}  // namespace

TEST_CASE("a one-rank world can message itself") {
  World w(1, quick_cfg(2));
  Comm c = w.rank(0).world_comm();
  CHECK(c.size() == 1);
  CHECK(c.rank() == 0);

  std::uint64_t in = 0, out = 31337;
  Req rv = c.irecv(0, 9, &in, 8);
  c.send(0, 9, &out, 8);
  rv.wait();
  CHECK(in == 31337);
  c.barrier();  // degenerate but legal
  CHECK(w.finalize().clean);
}

TEST_CASE("a single-context world multiplexes everything onto the fallback") {
  World w(2, quick_cfg(1));
  Rank r0 = w.rank(0);
  CHECK(r0.fallback_users() == 1);

  Comm a[2];
  std::thread peer([&] { a[1] = w.rank(1).world_comm().dup(); });
  a[0] = w.rank(0).world_comm().dup();
  peer.join();
  CHECK(a[0].vci() == 0);
  CHECK(r0.fallback_users() == 2);

  std::uint64_t in = 0, out = 17;
  Req rv = a[0].irecv(1, 1, &in, 8);
  a[1].isend(0, 1, &out, 8).wait();
  rv.wait();
  CHECK(in == 17);

  std::vector<std::uint64_t> mem(2, 0);
  Win wins[2];
  std::thread wt([&] { wins[1] = win_create(a[1], nullptr, 0); });
  wins[0] = win_create(a[0], mem.data(), 16);
  wt.join();
  CHECK(wins[0].vci() == 0);
  CHECK(r0.fallback_users() == 3);
  std::uint64_t v = 5;
  wins[1].put(0, 8, &v, 8);
  wins[1].flush(0);
  CHECK(mem[1] == 5);

  std::thread ft([&] {
    wins[1].free();
    a[1].free();
  });
  wins[0].free();
  a[0].free();
  ft.join();
  CHECK(r0.fallback_users() == 1);
  CHECK(w.finalize().clean);
}

TEST_CASE("the one-big-lock mode never touches per-object locks") {
  Config cfg = quick_cfg();
  cfg.cs_mode = CsMode::Global;
  World w(2, cfg);
  Comm c0 = w.rank(0).world_comm(), c1 = w.rank(1).world_comm();

  auto before = instr::thread_snapshot();
  std::uint64_t in = 0, out = 3;
  Req rv = c0.irecv(1, 4, &in, 8);
  c1.isend(0, 4, &out, 8).wait();
  w.rank(0).progress_vci(0);
  rv.wait();
  auto d = instr::diff(instr::thread_snapshot(), before);
  CHECK(in == 3);
  CHECK(d.lock_total(LockClass::Global) > 0);
  CHECK(d.lock_total(LockClass::Vci) == 0);
  CHECK(d.lock_total(LockClass::Request) == 0);
  CHECK(d.locks[static_cast<int>(OpClass::Progress)]
               [static_cast<int>(LockClass::Global)] == 1);
  CHECK(w.finalize().clean);
}

TEST_CASE("communicators take VCIs in order, recycle them, and overflow to 0") {
  World w(2, quick_cfg(4));  // VCIs 1..3 allocatable
  auto dup_pair = [&](Comm (&out)[2]) {
    std::thread peer([&] { out[1] = w.rank(1).world_comm().dup(); });
    out[0] = w.rank(0).world_comm().dup();
    peer.join();
  };
  auto free_pair = [&](Comm (&cs)[2]) {
    std::thread peer([&] { cs[1].free(); });
    cs[0].free();
    peer.join();
  };

  Comm a[2], b[2], c[2], d[2], e[2];
  dup_pair(a);
  dup_pair(b);
  CHECK(a[0].vci() == 1);
  CHECK(b[0].vci() == 2);
  CHECK(a[0].id() != b[0].id());

  free_pair(a);
  dup_pair(c);
  CHECK(c[0].vci() == 3);  // freed VCI 1 went to the back of the line
  dup_pair(d);
  CHECK(d[0].vci() == 1);  // and comes around again

  // Pool exhausted now: the next communicator shares VCI 0 with the world.
  dup_pair(e);
  CHECK(e[0].vci() == 0);
  CHECK(w.rank(0).fallback_users() == 2);
  std::uint64_t in = 0, out = 8;
  Req rv = e[0].irecv(1, 2, &in, 8);
  e[1].isend(0, 2, &out, 8).wait();
  rv.wait();
  CHECK(in == 8);

  free_pair(e);
  free_pair(d);
  free_pair(c);
  free_pair(b);
  CHECK(w.rank(0).fallback_users() == 1);
  CHECK(w.finalize().clean);
}

TEST_CASE("the world communicator refuses to be freed") {
  World w(1, quick_cfg(2));
  Comm c = w.rank(0).world_comm();
  CHECK_THROWS_AS(c.free(), UsageFault);
  CHECK(w.finalize().clean);
}

TEST_CASE("group communicators cover members and invalidate outsiders") {
  World w(2, quick_cfg());
  Comm sub[2];
  std::thread peer([&] {
    sub[1] = w.rank(1).world_comm().create_group({0});
  });
  sub[0] = w.rank(0).world_comm().create_group({0});
  peer.join();

  REQUIRE(sub[0].valid());
  CHECK_FALSE(sub[1].valid());
  CHECK(sub[0].size() == 1);
  CHECK(sub[0].rank() == 0);

  // The singleton member can use its communicator immediately.
  std::uint64_t in = 0, out = 6;
  Req rv = sub[0].irecv(0, 1, &in, 8);
  sub[0].send(0, 1, &out, 8);
  rv.wait();
  CHECK(in == 6);
  sub[0].free();  // collective over the group: only rank 0 participates
  CHECK(w.finalize().clean);
}

TEST_CASE("endpoint sets spread over distinct VCIs and address point to point") {
  World w(2, quick_cfg(20));
  constexpr int kPer = 8;
  EpSet eps[2];
  std::thread mk([&] {
    eps[1] = create_endpoints(w.rank(1).world_comm(), kPer);
  });
  eps[0] = create_endpoints(w.rank(0).world_comm(), kPer);
  mk.join();

  std::set<std::int32_t> vcis;
  for (int e = 0; e < kPer; ++e) vcis.insert(eps[0].endpoint(e).vci());
  CHECK(vcis.size() == kPer);
  CHECK(vcis.count(0) == 0);
  CHECK(eps[0].endpoint(0).total() == 2 * kPer);
  CHECK(eps[1].endpoint(3).ep_rank() == kPer + 3);

  // Eight sender threads address eight receiver endpoints directly; each
  // flow lives on its own pair of VCIs end to end.
  std::atomic<std::uint64_t> bad{0};
  std::vector<std::thread> ts;
  for (int e = 0; e < kPer; ++e) {
    ts.emplace_back([&, e] {
      std::uint64_t in = 0;
      Req rv = eps[1].endpoint(e).irecv(e, 40 + e, &in, 8);
      rv.wait();
      if (in != static_cast<std::uint64_t>(1000 + e)) bad.fetch_add(1);
    });
    ts.emplace_back([&, e] {
      std::uint64_t out = static_cast<std::uint64_t>(1000 + e);
      eps[0].endpoint(e).isend(kPer + e, 40 + e, &out, 8).wait();
    });
  }
  for (auto& t : ts) t.join();
  CHECK(bad.load() == 0);

  std::thread fr([&] { eps[1].free(); });
  eps[0].free();
  fr.join();
  CHECK(w.finalize().clean);

  CHECK_THROWS_AS(create_endpoints(w.rank(0).world_comm(), 0), UsageFault);
}

TEST_CASE("one endpoint per rank behaves like the parent communicator") {
  World w(2, quick_cfg());
  EpSet eps[2];
  std::thread mk([&] { eps[1] = create_endpoints(w.rank(1).world_comm(), 1); });
  eps[0] = create_endpoints(w.rank(0).world_comm(), 1);
  mk.join();

  CHECK(eps[0].endpoint(0).ep_rank() == 0);
  CHECK(eps[1].endpoint(0).ep_rank() == 1);
  std::uint64_t in = 0, out = 55;
  Req rv = eps[1].endpoint(0).irecv(0, 1, &in, 8);
  eps[0].endpoint(0).isend(1, 1, &out, 8).wait();
  rv.wait();
  CHECK(in == 55);

  std::thread fr([&] { eps[1].free(); });
  eps[0].free();
  fr.join();
  CHECK(w.finalize().clean);
}

TEST_CASE("barriers on different communicators pair up concurrently") {
  World w(2, quick_cfg());
  Comm a[2], b[2];
  {
    std::thread peer([&] {
      Comm wc = w.rank(1).world_comm();
      a[1] = wc.dup();
      b[1] = wc.dup();
    });
    Comm wc = w.rank(0).world_comm();
    a[0] = wc.dup();
    b[0] = wc.dup();
    peer.join();
  }

  constexpr int kRounds = 50;
  std::vector<std::thread> ts;
  for (int rank = 0; rank < 2; ++rank) {
    ts.emplace_back([&, rank] {
      for (int i = 0; i < kRounds; ++i) a[rank].barrier();
    });
    ts.emplace_back([&, rank] {
      for (int i = 0; i < kRounds; ++i) b[rank].barrier();
    });
  }
  for (auto& t : ts) t.join();

  std::thread fr([&] {
    a[1].free();
    b[1].free();
  });
  a[0].free();
  b[0].free();
  fr.join();
  CHECK(w.finalize().clean);
}

TEST_CASE("configuration files round-trip every key") {
  const char* path = "/tmp/mvci_cfg_test.ini";
  {
    std::ofstream out(path);
    out << "# runtime shape\n"
        << "cs_mode = fg\n"
        << "vcis = 9   # alias for contexts\n"
        << "injection_cost=7\n"
        << "\n"
        << "eager_threshold = 4096\n"
        << "hybrid_threshold = inf\n"
        << "rma_mode = sw\n"
        << "accumulate_ordering = none\n"
        << "hint_no_any_source = true\n"
        << "hint_accumulate_ordering_none = 1\n"
        << "request_pool_size = 512\n"
        << "request_cache_capacity = 8\n"
        << "poll_budget = 3\n"
        << "watchdog_ms = 250\n"
        << "debug_checks = 0\n";
  }
  Config cfg = Config::from_file(path);
  CHECK(cfg.cs_mode == CsMode::FG);
  CHECK(cfg.contexts == 9);
  CHECK(cfg.injection_cost == 7);
  CHECK(cfg.eager_threshold == 4096);
  CHECK(cfg.hybrid_threshold == kNoEscalation);
  CHECK(cfg.rma_mode == RmaMode::SoftwareRMA);
  CHECK(cfg.default_acc_ordering == AccOrdering::None);
  CHECK(cfg.hints.no_any_source);
  CHECK(cfg.hints.accumulate_ordering_none);
  CHECK(cfg.request_pool_size == 512);
  CHECK(cfg.request_cache_capacity == 8);
  CHECK(cfg.poll_budget == 3);
  CHECK(cfg.watchdog == std::chrono::milliseconds(250));
  CHECK_FALSE(cfg.debug_checks);
  std::remove(path);

  Config bad;
  CHECK_THROWS_AS(bad.apply("cs_mode", "huge"), UsageFault);
  CHECK_THROWS_AS(bad.apply("rma_mode", "fpga"), UsageFault);
  CHECK_THROWS_AS(bad.apply("no_such_key", "1"), UsageFault);
  CHECK_THROWS_AS(Config::from_file("/tmp/definitely_missing.ini"), UsageFault);

  Config invalid;
  invalid.contexts = 0;
  CHECK_THROWS_AS(invalid.validate(), UsageFault);
  CHECK_THROWS_AS(World(2, invalid), UsageFault);
  invalid = Config{};
  invalid.poll_budget = 0;
  CHECK_THROWS_AS(invalid.validate(), UsageFault);
  CHECK_THROWS_AS(World(0, Config{}), UsageFault);
  World w(1, quick_cfg(2));
  CHECK_THROWS_AS(w.rank(1), UsageFault);
  CHECK_THROWS_AS(w.rank(-1), UsageFault);
  CHECK(w.finalize().clean);
}

TEST_CASE("the configured accumulate-ordering default reaches new windows") {
  Config cfg = quick_cfg();
  cfg.apply("accumulate_ordering", "none");
  World w(2, cfg);
  std::vector<std::int64_t> mem(1, 0);
  Win wins[2];
  std::thread peer([&] {
    wins[1] = win_create(w.rank(1).world_comm(), nullptr, 0);
  });
  wins[0] = win_create(w.rank(0).world_comm(), mem.data(), 8);
  peer.join();

  std::int64_t one = 1;
  auto before = instr::thread_snapshot();
  wins[1].accumulate(0, 0, &one, 1);
  auto d = instr::diff(instr::thread_snapshot(), before);
  CHECK(d.lock_total(LockClass::Vci) == 0);  // unordered fast path
  wins[1].flush(0);
  CHECK(mem[0] == 1);
  std::thread fr([&] { wins[1].free(); });
  wins[0].free();
  fr.join();
  CHECK(w.finalize().clean);
}

TEST_CASE("the teardown report notices leaks and stray traffic") {
  SECTION("clean run renders totals") {
    World w(2, quick_cfg());
    Comm c0 = w.rank(0).world_comm(), c1 = w.rank(1).world_comm();
    std::uint64_t in = 0;
    std::vector<std::uint8_t> big(32 * 1024, 7), bin(32 * 1024, 0);
    Req rv = c0.irecv(1, 1, &in, 8);
    std::uint64_t out = 2;
    c1.isend(0, 1, &out, 8).wait();
    rv.wait();
    Req rb = c0.irecv(1, 2, bin.data(), bin.size());
    Req sb = c1.isend(0, 2, big.data(), big.size());
    while (!rb.completed() || !sb.completed()) {
      w.rank(0).progress_vci(0);
      w.rank(1).progress_vci(0);
    }
    rb.wait();
    sb.wait();
    Report rep = w.finalize();
    REQUIRE(rep.clean);
    CHECK(rep.net.injected ==
          rep.net.delivered_incoming + rep.net.delivered_completions);
    std::string text = rep.to_text();
    CHECK(text.find("clean shutdown") != std::string::npos);
    CHECK(text.find("isend") != std::string::npos);
    CHECK(text.find("net injected=") != std::string::npos);
    CHECK(rep.ranks.size() == 2);
    CHECK(rep.ranks[0].live == 0);
  }

  SECTION("a never-matched receive is a leak") {
    World w(2, quick_cfg());
    std::uint64_t in = 0;
    Req rv = w.rank(0).world_comm().irecv(1, 99, &in, 8);
    Report rep = w.finalize();
    CHECK_FALSE(rep.clean);
    REQUIRE_FALSE(rep.diagnostics.empty());
    CHECK(rep.diagnostics[0].find("never released") != std::string::npos);
    CHECK(rep.to_text().find("UNCLEAN") != std::string::npos);
    (void)rv;
  }

  SECTION("an orphaned handshake reply counts as stray") {
    World w(2, quick_cfg());
    WireMessage cts;
    cts.kind = MsgKind::RndvCts;
    cts.dst_node = 0;
    cts.dst_ctx = 0;
    cts.op_token = 424242;  // no such pending send
    w.net().inject(1, 0, cts);
    w.rank(0).progress_vci(0);
    Report rep = w.finalize();
    CHECK_FALSE(rep.clean);
    REQUIRE_FALSE(rep.diagnostics.empty());
    CHECK(rep.diagnostics[0].find("stray") != std::string::npos);
  }
}
