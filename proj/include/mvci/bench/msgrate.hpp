// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Message-rate microbenchmark. Pairwise flows between a sender rank and a
// receiver rank (or rank pairs in everywhere mode), credit-based flow
// control, and payload sequence validation on every message.
//
// Rates are measured against the transport's virtual clock: every injection
// charges injection_cost busy ticks to its hardware context, so each sender
// runs until its context has consumed a fixed tick horizon. The reported
// virtual_rate is total messages * cost / horizon, i.e. the number of
// context-equivalents the topology kept busy. Serialized flows share one
// context and score ~1 regardless of thread count; fully parallel flows
// score ~threads. Wall-clock rates are also reported for reference.
//
// With --target-compute-us the benchmark switches to a latency probe: one
// initiator measures put+flush round trips against a target that computes
// for the given time between progress calls.

#ifndef MVCI_BENCH_MSGRATE_HPP
#define MVCI_BENCH_MSGRATE_HPP

#include <atomic>
#include <barrier>
#include <cstring>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"
#include "mvci/bench/common.hpp"

namespace mvci {
namespace bench {

enum class RateOp { Isend, Put };

inline bool parse_rate_op(const std::string& s, RateOp& out) {
  if (s == "isend") { out = RateOp::Isend; return true; }
  if (s == "put") { out = RateOp::Put; return true; }
  return false;
}

struct MsgrateResult {
  std::vector<Row> rows;
  bool correct = true;
  std::string error;
  double median_virtual_rate = 0.0;
  double median_latency_us = 0.0;
  std::string lock_stats;  // finalize report of the last repetition
};

namespace detail_bench {

constexpr std::uint32_t kSentinelSeq = 0xffffffffu;

// One direction of one flow, bound to whatever transport object the mode
// selected (shared comm, per-flow comm, endpoint, world rank pair).
struct FlowOps {
  std::function<void(const void*, std::uint64_t, int)> send;  // buf,len,tag
  std::function<Status(void*, std::uint64_t, int)> recv;      // blocking
  int node = 0;
  int ctx = 0;
};

inline void fill_payload(bytes& buf, std::uint32_t flow, std::uint32_t seq) {
  std::memcpy(buf.data(), &flow, 4);
  std::memcpy(buf.data() + 4, &seq, 4);
  if (buf.size() > 8) buf.back() = static_cast<std::uint8_t>((flow ^ seq) & 0xff);
}

// `start` is a context tick snapshot taken before any flow on that context
// began sending, so sharers consume one common budget no matter how the
// scheduler staggers them.
inline void sender_flow(World& w, const BenchOptions& o, const FlowOps& f,
                        std::uint32_t flow, std::uint64_t start,
                        std::uint64_t& sent_out) {
  bytes buf(o.msg_size < 8 ? 8 : o.msg_size, 0);
  const std::uint64_t horizon = o.iters * w.config().injection_cost;
  std::uint32_t seq = 0;
  std::uint64_t credits = 0;
  const int data_tag = static_cast<int>(flow) * 2;
  const int credit_tag = data_tag + 1;
  std::uint32_t credit_buf = 0;
  while (w.net().busy_ticks(f.node, f.ctx) - start < horizon) {
    fill_payload(buf, flow, seq);
    f.send(buf.data(), buf.size(), data_tag);
    ++seq;
    if (seq - credits * o.window >= 2 * o.window) {
      f.recv(&credit_buf, 4, credit_tag);
      ++credits;
    }
  }
  fill_payload(buf, flow, kSentinelSeq);
  f.send(buf.data(), buf.size(), data_tag);
  const std::uint64_t owed = seq / o.window;
  while (credits < owed) {
    f.recv(&credit_buf, 4, credit_tag);
    ++credits;
  }
  sent_out = seq;
}

inline void receiver_flow(const BenchOptions& o, const FlowOps& f,
                          std::uint32_t flow, std::uint64_t& recvd_out,
                          Shared& sh) {
  bytes buf(o.msg_size < 8 ? 8 : o.msg_size, 0);
  const int data_tag = static_cast<int>(flow) * 2;
  const int credit_tag = data_tag + 1;
  std::uint32_t expected = 0;
  for (;;) {
    f.recv(buf.data(), buf.size(), data_tag);
    std::uint32_t got_flow = 0, got_seq = 0;
    std::memcpy(&got_flow, buf.data(), 4);
    std::memcpy(&got_seq, buf.data() + 4, 4);
    if (got_seq == kSentinelSeq) break;
    if (got_flow != flow || got_seq != expected) {
      sh.fail("msgrate: sequence mismatch on flow " + std::to_string(flow));
      break;
    }
    if (buf.size() > 8 &&
        buf.back() != static_cast<std::uint8_t>((got_flow ^ got_seq) & 0xff)) {
      sh.fail("msgrate: payload corruption on flow " + std::to_string(flow));
      break;
    }
    ++expected;
    if (expected % o.window == 0) {
      std::uint32_t credit = expected;
      f.send(&credit, 4, credit_tag);
    }
  }
  recvd_out = expected;
}

struct RepOut {
  double virtual_rate = 0.0;
  double wall_rate = 0.0;
  bool correct = true;
  std::string err;
  std::string lock_stats;
};

// One repetition of the isend rate pattern. Everything is torn down and the
// world finalized so conservation doubles as a correctness check.
inline RepOut rate_rep_isend(const BenchOptions& o) {
  RepOut out;
  Shared sh;
  const int T = o.threads;
  const int M = o.distinct_comms > 0 ? o.distinct_comms : T;
  Config cfg = make_config(o);
  const bool everywhere = o.mode == RunMode::Everywhere;
  if (everywhere) cfg.contexts = 1;
  World w(everywhere ? 2 * T : 2, cfg);
  std::vector<std::uint64_t> sent(static_cast<std::size_t>(T), 0);
  std::vector<std::uint64_t> recvd(static_cast<std::size_t>(T), 0);
  double wall0 = 0.0, wall1 = 0.0;

  if (everywhere) {
    std::vector<std::thread> ts;
    wall0 = now_us();
    for (int t = 0; t < T; ++t) {
      ts.emplace_back([&, t] {
        Comm wc = w.rank(t).world_comm();
        FlowOps f;
        f.node = t;
        f.ctx = 0;
        f.send = [&, t](const void* p, std::uint64_t n, int tag) {
          wc.send(T + t, tag, p, n);
        };
        f.recv = [&, t](void* p, std::uint64_t n, int tag) {
          return wc.recv(T + t, tag, p, n);
        };
        // sole sender on this node's context; snapshot locally
        std::uint64_t start = w.net().busy_ticks(f.node, f.ctx);
        sender_flow(w, o, f, static_cast<std::uint32_t>(t), start,
                    sent[static_cast<std::size_t>(t)]);
      });
      ts.emplace_back([&, t] {
        Comm wc = w.rank(T + t).world_comm();
        FlowOps f;
        f.send = [&, t](const void* p, std::uint64_t n, int tag) {
          wc.send(t, tag, p, n);
        };
        f.recv = [&, t](void* p, std::uint64_t n, int tag) {
          return wc.recv(t, tag, p, n);
        };
        receiver_flow(o, f, static_cast<std::uint32_t>(t),
                      recvd[static_cast<std::size_t>(t)], sh);
      });
    }
    for (auto& t : ts) t.join();
    wall1 = now_us();
  } else {
    auto driver = [&](int rank) {
      Comm wc = w.rank(rank).world_comm();
      std::vector<Comm> comms;
      EpSet eps;
      if (o.mode == RunMode::ParComm)
        for (int m = 0; m < M; ++m) comms.push_back(wc.dup());
      if (o.mode == RunMode::Endpoints) eps = create_endpoints(wc, T);
      // Pre-spawn snapshot per flow context: sharers get a common budget.
      std::vector<std::uint64_t> starts(static_cast<std::size_t>(T), 0);
      if (rank == 0) {
        for (int t = 0; t < T; ++t) {
          int ctx = 0;
          if (o.mode == RunMode::Endpoints)
            ctx = eps.endpoint(t).vci();
          else if (o.mode == RunMode::ParComm)
            ctx = comms[static_cast<std::size_t>(t % M)].vci();
          starts[static_cast<std::size_t>(t)] = w.net().busy_ticks(0, ctx);
        }
        wall0 = now_us();
      }
      std::vector<std::thread> ts;
      for (int t = 0; t < T; ++t) {
        ts.emplace_back([&, t] {
          FlowOps f;
          const int data_peer = 1 - rank;
          if (o.mode == RunMode::Endpoints) {
            Endpoint ep = eps.endpoint(t);
            const int peer_ep = data_peer * T + t;
            f.node = rank;
            f.ctx = ep.vci();
            f.send = [ep, peer_ep](const void* p, std::uint64_t n, int tag) {
              Endpoint(ep).isend(peer_ep, tag, p, n).wait();
            };
            f.recv = [ep, peer_ep](void* p, std::uint64_t n, int tag) {
              return Endpoint(ep).irecv(peer_ep, tag, p, n).wait();
            };
          } else {
            Comm c = o.mode == RunMode::ParComm
                         ? comms[static_cast<std::size_t>(t % M)]
                         : wc;
            f.node = rank;
            f.ctx = c.vci();
            f.send = [c, data_peer](const void* p, std::uint64_t n, int tag) {
              Comm(c).send(data_peer, tag, p, n);
            };
            f.recv = [c, data_peer](void* p, std::uint64_t n, int tag) {
              return Comm(c).recv(data_peer, tag, p, n);
            };
          }
          if (rank == 0)
            sender_flow(w, o, f, static_cast<std::uint32_t>(t),
                        starts[static_cast<std::size_t>(t)],
                        sent[static_cast<std::size_t>(t)]);
          else
            receiver_flow(o, f, static_cast<std::uint32_t>(t),
                          recvd[static_cast<std::size_t>(t)], sh);
        });
      }
      for (auto& t : ts) t.join();
      if (rank == 0) wall1 = now_us();
      for (auto& c : comms) c.free();
      if (o.mode == RunMode::Endpoints) eps.free();
    };
    std::thread d1(driver, 1);
    driver(0);
    d1.join();
  }

  Report rep = w.finalize();
  out.lock_stats = rep.to_text();
  std::uint64_t total = 0;
  for (int t = 0; t < T; ++t) {
    total += sent[static_cast<std::size_t>(t)];
    if (sent[static_cast<std::size_t>(t)] != recvd[static_cast<std::size_t>(t)])
      sh.fail("msgrate: flow " + std::to_string(t) + " lost messages");
  }
  if (!rep.clean) sh.fail("msgrate: unclean shutdown");
  if (rep.net.faults != 0) sh.fail("msgrate: transport faults");
  out.correct = sh.ok.load();
  out.err = sh.err;
  const double horizon =
      static_cast<double>(o.iters) * static_cast<double>(
          w.config().injection_cost);
  out.virtual_rate = static_cast<double>(total) *
                     static_cast<double>(w.config().injection_cost) / horizon;
  out.wall_rate = wall1 > wall0
                      ? static_cast<double>(total) / ((wall1 - wall0) * 1e-6)
                      : 0.0;
  return out;
}

// One repetition of the put rate pattern. Window-per-flow-group; each flow
// writes its own cell, a count handshake then validates the last write.
inline RepOut rate_rep_put(const BenchOptions& o) {
  RepOut out;
  Shared sh;
  const int T = o.threads;
  const int M = o.mode == RunMode::SerComm
                    ? 1
                    : (o.distinct_comms > 0 ? o.distinct_comms : T);
  Config cfg = make_config(o);
  const bool everywhere = o.mode == RunMode::Everywhere;
  if (everywhere) cfg.contexts = 1;
  World w(everywhere ? 2 * T : 2, cfg);
  std::vector<std::uint64_t> sent(static_cast<std::size_t>(T), 0);
  std::atomic<bool> stop{false};
  double wall0 = 0.0, wall1 = 0.0;

  auto run_sender = [&](Win win, int target, std::uint64_t offset, int node,
                        int ctx, std::uint64_t start, int t) {
    const std::uint64_t horizon = o.iters * w.config().injection_cost;
    std::int64_t seq = 0;
    while (w.net().busy_ticks(node, ctx) - start < horizon) {
      ++seq;  // cell holds the count after the last put lands
      win.put(target, offset, &seq, 8);
      if (static_cast<std::uint64_t>(seq) % o.window == 0) win.flush(target);
    }
    win.flush(target);
    sent[static_cast<std::size_t>(t)] = static_cast<std::uint64_t>(seq);
  };

  if (everywhere) {
    // One world-wide window; receiver ranks expose one cell each. A single
    // collective create/free keeps every rank in lockstep.
    std::vector<std::thread> ts;
    std::vector<std::int64_t> cells(static_cast<std::size_t>(2 * T), 0);
    wall0 = now_us();
    for (int t = 0; t < T; ++t) {
      ts.emplace_back([&, t] {
        Comm wc = w.rank(t).world_comm();
        Win win = win_create(wc, nullptr, 0, AccOrdering::Ordered);
        std::uint64_t start = w.net().busy_ticks(t, 0);
        run_sender(win, T + t, 0, t, 0, start, t);
        std::uint64_t n = sent[static_cast<std::size_t>(t)];
        wc.send(T + t, 7000, &n, 8);
        win.free();
      });
      ts.emplace_back([&, t] {
        Comm wc = w.rank(T + t).world_comm();
        std::int64_t* cell = &cells[static_cast<std::size_t>(T + t)];
        Win win = win_create(wc, cell, 8, AccOrdering::Ordered);
        std::uint64_t n = 0;
        Req q = wc.irecv(t, 7000, &n, 8);
        while (!q.completed()) {
          win.progress();  // software mode needs target-side dispatch
          w.rank(T + t).progress_vci(0);
          std::this_thread::yield();
        }
        q.wait();
        if (*cell != static_cast<std::int64_t>(n))
          sh.fail("msgrate/put: cell mismatch on flow " + std::to_string(t));
        win.free();
      });
    }
    for (auto& t : ts) t.join();
    wall1 = now_us();
  } else {
    std::vector<std::vector<std::int64_t>> cells(
        static_cast<std::size_t>(M));
    for (auto& v : cells) v.assign(static_cast<std::size_t>(T), 0);
    auto driver = [&](int rank) {
      Comm wc = w.rank(rank).world_comm();
      std::vector<Win> wins;
      for (int m = 0; m < M; ++m) {
        void* base = rank == 1 ? cells[static_cast<std::size_t>(m)].data()
                               : nullptr;
        std::uint64_t extent = rank == 1 ? 8u * static_cast<std::uint64_t>(T)
                                         : 0u;
        wins.push_back(win_create(wc, base, extent, AccOrdering::Ordered));
      }
      if (rank == 0) {
        std::vector<std::uint64_t> starts(static_cast<std::size_t>(T), 0);
        for (int t = 0; t < T; ++t)
          starts[static_cast<std::size_t>(t)] = w.net().busy_ticks(
              0, wins[static_cast<std::size_t>(t % M)].vci());
        wall0 = now_us();
        std::vector<std::thread> ts;
        for (int t = 0; t < T; ++t)
          ts.emplace_back([&, t] {
            Win win = wins[static_cast<std::size_t>(t % M)];
            run_sender(win, 1, 8u * static_cast<std::uint64_t>(t), 0,
                       win.vci(), starts[static_cast<std::size_t>(t)], t);
          });
        for (auto& t : ts) t.join();
        wall1 = now_us();
        stop.store(true, std::memory_order_release);
        for (int t = 0; t < T; ++t) {
          std::uint64_t n = sent[static_cast<std::size_t>(t)];
          wc.send(1, 7000 + t, &n, 8);
        }
      } else {
        while (!stop.load(std::memory_order_acquire)) {
          for (auto& win : wins) win.progress();
          std::this_thread::yield();
        }
        for (int t = 0; t < T; ++t) {
          std::uint64_t n = 0;
          if (o.rma == RmaMode::SoftwareRMA) {
            Req q = wc.irecv(0, 7000 + t, &n, 8);
            while (!q.completed()) {
              for (auto& win : wins) win.progress();
              w.rank(1).progress_vci(0);
            }
            q.wait();
          } else {
            wc.recv(0, 7000 + t, &n, 8);
          }
          if (cells[static_cast<std::size_t>(t % M)]
                   [static_cast<std::size_t>(t)] !=
              static_cast<std::int64_t>(n))
            sh.fail("msgrate/put: cell mismatch on flow " + std::to_string(t));
        }
      }
      for (auto& win : wins) win.free();
    };
    std::thread d1(driver, 1);
    driver(0);
    d1.join();
  }

  Report rep = w.finalize();
  out.lock_stats = rep.to_text();
  if (!rep.clean) sh.fail("msgrate/put: unclean shutdown");
  if (rep.net.faults != 0) sh.fail("msgrate/put: transport faults");
  std::uint64_t total = 0;
  for (int t = 0; t < T; ++t) total += sent[static_cast<std::size_t>(t)];
  out.correct = sh.ok.load();
  out.err = sh.err;
  const double horizon =
      static_cast<double>(o.iters) * static_cast<double>(
          w.config().injection_cost);
  out.virtual_rate = static_cast<double>(total) *
                     static_cast<double>(w.config().injection_cost) / horizon;
  out.wall_rate = wall1 > wall0
                      ? static_cast<double>(total) / ((wall1 - wall0) * 1e-6)
                      : 0.0;
  return out;
}

// Busy-target latency probe: put+flush round trips against a target that
// alternates compute blocks with progress calls.
inline MsgrateResult latency_probe(const BenchOptions& o) {
  MsgrateResult res;
  Config cfg = make_config(o);
  World w(2, cfg);
  std::atomic<bool> stop{false};
  std::vector<std::vector<double>> samples(
      static_cast<std::size_t>(o.reps + 1));

  std::thread target([&] {
    Comm wc = w.rank(1).world_comm();
    std::vector<std::int64_t> mem(16, 0);
    Win win = win_create(wc, mem.data(), mem.size() * 8, AccOrdering::Ordered);
    while (!stop.load(std::memory_order_acquire)) {
      if (o.target_compute_us > 0)
        spin_for_us(static_cast<double>(o.target_compute_us));
      win.progress();
    }
    win.free();
  });

  {
    Comm wc = w.rank(0).world_comm();
    Win win = win_create(wc, nullptr, 0, AccOrdering::Ordered);
    std::int64_t v = 0;
    for (int rep = 0; rep <= o.reps; ++rep) {  // rep 0 is warmup
      auto& s = samples[static_cast<std::size_t>(rep)];
      for (std::uint64_t i = 0; i < o.iters; ++i) {
        ++v;
        double t0 = now_us();
        win.put(1, 0, &v, 8);
        win.flush(1);
        s.push_back(now_us() - t0);
      }
    }
    stop.store(true, std::memory_order_release);
    win.free();
  }
  target.join();
  Report rep = w.finalize();
  res.lock_stats = rep.to_text();
  if (!rep.clean || rep.net.faults != 0) {
    res.correct = false;
    res.error = "msgrate/latency: unclean shutdown";
    return res;
  }
  std::vector<double> per_rep;
  for (int rep_i = 1; rep_i <= o.reps; ++rep_i)
    per_rep.push_back(median(samples[static_cast<std::size_t>(rep_i)]));
  Row proto;
  proto.benchmark = "msgrate";
  proto.mode = mode_name(o.mode);
  proto.threads = 1;
  proto.vcis = o.vcis;
  proto.msg_size = 8;
  proto.iters = o.iters;
  res.median_latency_us = push_metric(res.rows, proto, "latency_us", per_rep);
  return res;
}

}  // namespace detail_bench

inline MsgrateResult run_msgrate(const BenchOptions& o,
                                 RateOp op = RateOp::Isend) {
  using namespace detail_bench;
  if (o.target_compute_us > 0) return latency_probe(o);
  MsgrateResult res;
  std::vector<double> vrates, wrates;
  for (int rep = 0; rep <= o.reps; ++rep) {  // rep 0 is warmup
    RepOut r = op == RateOp::Isend ? rate_rep_isend(o) : rate_rep_put(o);
    if (!r.correct) {
      res.correct = false;
      res.error = r.err;
      return res;
    }
    if (rep > 0) {
      vrates.push_back(r.virtual_rate);
      wrates.push_back(r.wall_rate);
    }
    res.lock_stats = std::move(r.lock_stats);
  }
  Row proto;
  proto.benchmark = "msgrate";
  proto.mode = mode_name(o.mode);
  proto.threads = o.threads;
  proto.vcis = o.vcis;
  proto.msg_size = o.msg_size;
  proto.iters = o.iters;
  res.median_virtual_rate = push_metric(res.rows, proto, "virtual_rate", vrates);
  push_metric(res.rows, proto, "wall_msgs_per_sec", wrates);
  return res;
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_MSGRATE_HPP
