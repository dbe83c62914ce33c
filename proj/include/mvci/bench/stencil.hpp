// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Halo-exchange stencil pattern. A grid of ranks, a grid of worker threads
// per rank, one tile per thread. Each iteration recomputes tile edges,
// exchanges halos with the four neighbors (intranode neighbors read shared
// memory directly; internode neighbors exchange messages), and validates
// every received halo cell against the value function.
//
// Modes: ser_comm routes every internode edge over one shared communicator;
// par_comm builds the odd/even communicator scheme (per direction, per
// boundary-pair parity, which at these scales is one communicator per
// communicating thread pair); endpoints gives each thread an endpoint.
//
// The north-south and east-west exchanges run as separate sub-phases
// bracketed by world barriers, and the reported occupancy is the sum over
// sub-phases of the maximum per-context busy-tick delta (contexts >= 1;
// barrier control traffic rides the world stream on context 0 and is
// excluded). That makes the metric the virtual critical path of the
// exchange: shared-communicator runs pile every edge onto one context,
// per-pair communicators and endpoints spread them one message per context.

#ifndef MVCI_BENCH_STENCIL_HPP
#define MVCI_BENCH_STENCIL_HPP

#include <barrier>
#include <cstring>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"
#include "mvci/bench/common.hpp"

namespace mvci {
namespace bench {

struct StencilShape {
  int node_rows = 2;
  int node_cols = 2;
  int thread_rows = 2;
  int thread_cols = 2;
  int tile = 16;  // cells per edge; halo message is tile*8 bytes
};

struct StencilResult {
  std::vector<Row> rows;
  bool correct = true;
  std::string error;
  double median_occupancy = 0.0;
  double median_wall_us = 0.0;
  std::string lock_stats;
};

namespace detail_bench {

inline std::int64_t edge_base(int gr, int gc, int k, int dir) {
  return ((static_cast<std::int64_t>(gr) * 131 + gc) * 1009 +
          static_cast<std::int64_t>(k)) * 4096 + dir * 512;
}

struct StencilEdges {
  // index: 0=N 1=S 2=E 3=W
  std::vector<std::int64_t> edge[4];
  std::vector<std::int64_t> halo[4];
};

}  // namespace detail_bench

inline StencilResult run_stencil(const BenchOptions& o, StencilShape sh) {
  using namespace detail_bench;
  StencilResult res;
  Shared sherr;
  const int NR = sh.node_rows, NC = sh.node_cols;
  const int TR = sh.thread_rows, TC = sh.thread_cols;
  const int W = sh.tile;
  const int ranks = NR * NC;
  const int per = TR * TC;
  const int GR = NR * TR, GC = NC * TC;
  const int iters = static_cast<int>(o.iters);
  Config cfg = make_config(o);
  World w(ranks, cfg);

  // Canonical enumeration of internode thread pairs: dir 0 = NS (north
  // member first), dir 1 = EW (west member first).
  struct PairKey {
    int dir, gr, gc;  // coordinates of the first member's tile
    bool operator<(const PairKey& k) const {
      if (dir != k.dir) return dir < k.dir;
      if (gr != k.gr) return gr < k.gr;
      return gc < k.gc;
    }
  };
  std::vector<PairKey> pairs;
  for (int gr = 0; gr + 1 < GR; ++gr)
    if ((gr + 1) % TR == 0)  // node-row boundary
      for (int gc = 0; gc < GC; ++gc) pairs.push_back({0, gr, gc});
  for (int gc = 0; gc + 1 < GC; ++gc)
    if ((gc + 1) % TC == 0)
      for (int gr = 0; gr < GR; ++gr) pairs.push_back({1, gr, gc});

  auto rank_of = [&](int gr, int gc) {
    return (gr / TR) * NC + (gc / TC);
  };
  auto lid_of = [&](int gr, int gc) {
    return (gr % TR) * TC + (gc % TC);
  };

  std::vector<std::vector<double>> occ(static_cast<std::size_t>(iters));
  std::vector<double> wall(static_cast<std::size_t>(iters), 0.0);
  std::vector<std::vector<std::uint64_t>> snap;  // [node][ctx]
  auto take_snap = [&] {
    snap.assign(static_cast<std::size_t>(ranks), {});
    for (int n = 0; n < ranks; ++n) {
      auto& v = snap[static_cast<std::size_t>(n)];
      v.resize(static_cast<std::size_t>(cfg.contexts));
      for (int c = 0; c < cfg.contexts; ++c)
        v[static_cast<std::size_t>(c)] =
            w.net().busy_ticks(n, c);
    }
  };
  auto max_delta = [&]() {
    std::uint64_t best = 0;
    for (int n = 0; n < ranks; ++n)
      for (int c = 1; c < cfg.contexts; ++c) {  // ctx 0 carries barriers
        std::uint64_t d = w.net().busy_ticks(n, c) -
                          snap[static_cast<std::size_t>(n)]
                              [static_cast<std::size_t>(c)];
        if (d > best) best = d;
      }
    return static_cast<double>(best);
  };

  std::vector<std::thread> drivers;
  // Edge storage is addressed globally so intranode neighbors can read each
  // other's freshly computed edges directly.
  std::vector<StencilEdges> tiles(static_cast<std::size_t>(GR * GC));
  for (auto& t : tiles)
    for (int d = 0; d < 4; ++d) {
      t.edge[d].assign(static_cast<std::size_t>(W), 0);
      t.halo[d].assign(static_cast<std::size_t>(W), 0);
    }

  for (int rk = 0; rk < ranks; ++rk) {
    drivers.emplace_back([&, rk] {
      Comm wc = w.rank(rk).world_comm();
      Comm ser;
      std::map<PairKey, Comm> pair_comms;
      EpSet eps;
      if (o.mode == RunMode::SerComm) ser = wc.dup();
      if (o.mode == RunMode::ParComm) {
        for (const PairKey& k : pairs) {
          int ra = rank_of(k.gr, k.gc);
          int rb = k.dir == 0 ? rank_of(k.gr + 1, k.gc)
                              : rank_of(k.gr, k.gc + 1);
          Comm c = wc.create_group({ra, rb});
          if (rk == ra || rk == rb) pair_comms.emplace(k, c);
        }
      }
      if (o.mode == RunMode::Endpoints) eps = create_endpoints(wc, per);

      std::barrier<> local(per);
      std::vector<std::thread> workers;
      for (int lid = 0; lid < per; ++lid) {
        workers.emplace_back([&, lid] {
          const int nr = rk / NC, nc = rk % NC;
          const int gr = nr * TR + lid / TC;
          const int gc = nc * TC + lid % TC;
          StencilEdges& mine = tiles[static_cast<std::size_t>(gr * GC + gc)];
          // dir -> neighbor tile coords; -1 marks the grid border
          const int ngr[4] = {gr - 1, gr + 1, gr, gr};
          const int ngc[4] = {gc, gc, gc + 1, gc - 1};
          const int opp[4] = {1, 0, 3, 2};

          auto neighbor_ok = [&](int d) {
            return ngr[d] >= 0 && ngr[d] < GR && ngc[d] >= 0 && ngc[d] < GC;
          };
          auto internode = [&](int d) {
            return neighbor_ok(d) &&
                   rank_of(ngr[d], ngc[d]) != rk;
          };
          auto tag_for = [&](int src_gr, int src_gc, int d, int k) {
            return ((src_gr * GC + src_gc) * 4 + d) * 32 + (k % 32);
          };

          for (int k = 0; k < iters; ++k) {
            // compute: refresh this tile's four edges for iteration k
            for (int d = 0; d < 4; ++d)
              for (int j = 0; j < W; ++j)
                mine.edge[d][static_cast<std::size_t>(j)] =
                    edge_base(gr, gc, k, d) + j;
            local.arrive_and_wait();
            if (lid == 0) wc.barrier();
            local.arrive_and_wait();

            for (int phase = 0; phase < 2; ++phase) {
              // quiesce, coordinator snapshot, release
              if (lid == 0) wc.barrier();
              local.arrive_and_wait();
              if (rk == 0 && lid == 0) {
                take_snap();
                wall[static_cast<std::size_t>(k)] -= now_us();
              }
              if (lid == 0) wc.barrier();
              local.arrive_and_wait();

              const int d0 = phase == 0 ? 0 : 2;  // NS then EW
              std::vector<Req> qs;
              for (int d = d0; d < d0 + 2; ++d) {
                if (!internode(d)) continue;
                int sgr = ngr[d], sgc = ngc[d];
                int tag = tag_for(sgr, sgc, opp[d], k);
                void* buf = mine.halo[d].data();
                std::uint64_t len = static_cast<std::uint64_t>(W) * 8;
                if (o.mode == RunMode::SerComm)
                  qs.push_back(ser.irecv(rank_of(sgr, sgc), tag, buf, len));
                else if (o.mode == RunMode::ParComm) {
                  PairKey pk = d == 0   ? PairKey{0, gr - 1, gc}
                               : d == 1 ? PairKey{0, gr, gc}
                               : d == 2 ? PairKey{1, gr, gc}
                                        : PairKey{1, gr, gc - 1};
                  Comm& pc = pair_comms.at(pk);
                  qs.push_back(pc.irecv(1 - pc.rank(), tag, buf, len));
                } else {
                  Endpoint ep = eps.endpoint(lid);
                  int src_ep = rank_of(sgr, sgc) * per + lid_of(sgr, sgc);
                  qs.push_back(ep.irecv(src_ep, tag, buf, len));
                }
              }
              for (int d = d0; d < d0 + 2; ++d) {
                if (!internode(d)) continue;
                int tag = tag_for(gr, gc, d, k);
                const void* buf = mine.edge[d].data();
                std::uint64_t len = static_cast<std::uint64_t>(W) * 8;
                int dst = rank_of(ngr[d], ngc[d]);
                if (o.mode == RunMode::SerComm)
                  ser.isend(dst, tag, buf, len).wait();
                else if (o.mode == RunMode::ParComm) {
                  PairKey pk = d == 0   ? PairKey{0, gr - 1, gc}
                               : d == 1 ? PairKey{0, gr, gc}
                               : d == 2 ? PairKey{1, gr, gc}
                                        : PairKey{1, gr, gc - 1};
                  Comm& pc = pair_comms.at(pk);
                  pc.isend(1 - pc.rank(), tag, buf, len).wait();
                } else {
                  Endpoint ep = eps.endpoint(lid);
                  int dst_ep = rank_of(ngr[d], ngc[d]) * per +
                               lid_of(ngr[d], ngc[d]);
                  ep.isend(dst_ep, tag, buf, len).wait();
                }
              }
              for (Req& q : qs) q.wait();
              local.arrive_and_wait();
              if (lid == 0) wc.barrier();  // all ranks done with this phase
              local.arrive_and_wait();
              if (rk == 0 && lid == 0) {
                occ[static_cast<std::size_t>(k)].push_back(max_delta());
                wall[static_cast<std::size_t>(k)] += now_us();
              }
              // intranode halves of this phase's directions: direct reads
              for (int d = d0; d < d0 + 2; ++d) {
                if (!neighbor_ok(d) || internode(d)) continue;
                const StencilEdges& nb = tiles[static_cast<std::size_t>(
                    ngr[d] * GC + ngc[d])];
                std::memcpy(mine.halo[d].data(),
                            nb.edge[opp[d]].data(),
                            static_cast<std::size_t>(W) * 8);
              }
              local.arrive_and_wait();
            }

            // validate all four halos against the value function
            for (int d = 0; d < 4; ++d) {
              if (!neighbor_ok(d)) continue;
              for (int j = 0; j < W; ++j) {
                std::int64_t want =
                    edge_base(ngr[d], ngc[d], k, opp[d]) + j;
                if (mine.halo[d][static_cast<std::size_t>(j)] != want) {
                  sherr.fail("stencil: halo mismatch at tile (" +
                             std::to_string(gr) + "," + std::to_string(gc) +
                             ") dir " + std::to_string(d) + " iter " +
                             std::to_string(k));
                  break;
                }
              }
            }
            local.arrive_and_wait();
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& [k, c] : pair_comms) c.free();
      if (o.mode == RunMode::SerComm) ser.free();
      if (o.mode == RunMode::Endpoints) eps.free();
    });
  }
  for (auto& d : drivers) d.join();

  Report rep = w.finalize();
  res.lock_stats = rep.to_text();
  if (!rep.clean) sherr.fail("stencil: unclean shutdown");
  if (rep.net.faults != 0) sherr.fail("stencil: transport faults");
  res.correct = sherr.ok.load();
  res.error = sherr.err;
  if (!res.correct) return res;

  std::vector<double> occ_per_iter, wall_per_iter;
  for (int k = 1; k < iters; ++k) {  // iteration 0 is warmup
    double s = 0.0;
    for (double v : occ[static_cast<std::size_t>(k)]) s += v;
    occ_per_iter.push_back(s);
    wall_per_iter.push_back(wall[static_cast<std::size_t>(k)]);
  }
  Row proto;
  proto.benchmark = "stencil";
  proto.mode = mode_name(o.mode);
  proto.threads = per;
  proto.vcis = o.vcis;
  proto.msg_size = static_cast<std::uint64_t>(W) * 8;
  proto.iters = o.iters;
  res.median_occupancy =
      push_metric(res.rows, proto, "halo_occupancy_ticks", occ_per_iter);
  res.median_wall_us =
      push_metric(res.rows, proto, "halo_wall_us", wall_per_iter);
  return res;
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_STENCIL_HPP
