// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Block-sparse matrix multiply over one-sided windows.  Rank 0 hosts the
// operand tiles, the shared work counter and the result matrix; rank 1 runs
// the worker threads.  Workers claim output tiles through fetch_op on the
// counter window, pull operand tiles through a per-thread get window, and
// push partial products into the result window with accumulate.  The mode
// selects how those accumulates are issued:
//
//   par_comm   one result window shared by every worker (optionally with
//              relaxed accumulate ordering),
//   endpoints  same window, but each worker routes its accumulates through
//              a private endpoint.
//
// The timed quantity is accumulate initiation: how long the accumulate call
// itself blocks the worker.  The result matrix is validated against a
// sequential multiply of the same operands, so a run only counts if the
// answer is exact.

#pragma once

#include <atomic>
#include <cstring>
#include <thread>
#include <vector>

#include "mvci/bench/common.hpp"
#include "mvci/bench/csv.hpp"
#include "mvci/bench/stats.hpp"
#include "mvci/mvci.hpp"

namespace mvci::bench {

struct BspmmShape {
  int tile_dim = 8;     // tile edge, elements
  int grid = 6;         // tiles per matrix edge
  double density = 0.6; // fraction of operand tiles that are nonzero
};

struct BspmmResult {
  std::vector<Row> rows;
  bool correct = false;
  std::string error;
  double median_init_us = 0.0;
  std::string lock_stats;
};

namespace detail_bench {

inline std::int64_t bspmm_cell(int who, int ti, int tj, int x, int y) {
  // Small signed values so tile products stay exact in int64.
  std::int64_t v = ((who * 71 + ti) * 31 + tj) * 17 + x * 5 + y;
  return v % 23 - 11;
}

inline bool bspmm_nonzero(std::uint64_t seed, int who, int ti, int tj,
                          double density) {
  std::uint64_t h = (static_cast<std::uint64_t>(who * 1315423911u) ^ seed) +
                    static_cast<std::uint64_t>(ti) * 2654435761u +
                    static_cast<std::uint64_t>(tj) * 40503u;
  h ^= h >> 16;
  h *= 0x45d9f3b;
  h ^= h >> 13;
  return static_cast<double>(h % 1000) < density * 1000.0;
}

} // namespace detail_bench

// One benchmark repetition.  Returns accumulate-initiation samples through
// `init_us` and reports validation failures through `sh`.
inline void bspmm_rep(const BenchOptions& o, const BspmmShape& shape,
                      bool use_endpoints, std::vector<double>& init_us,
                      Shared& sh, std::string* lock_stats) {
  using namespace detail_bench;
  const int T = o.threads;
  const int nt = shape.grid;
  const int td = shape.tile_dim;
  const std::uint64_t tile_cells = static_cast<std::uint64_t>(td) * td;
  const std::uint64_t tile_bytes = tile_cells * 8;
  const std::uint64_t mat_cells = static_cast<std::uint64_t>(nt) * nt * tile_cells;
  const std::uint64_t seed = bench_seed();
  const int tasks = nt * nt;

  // Windows: counter, result, and one get window per worker.  The endpoint
  // mode adds T endpoints on top.
  Config cfg = make_config(o);
  World world(2, cfg);

  // Operands concatenated so a single extent covers both.
  std::vector<std::int64_t> ab(2 * mat_cells, 0);
  std::vector<std::int64_t> cmat(mat_cells, 0);
  std::int64_t counter = 0;
  auto a_off = [&](int i, int l) {
    return (static_cast<std::uint64_t>(i) * nt + l) * tile_bytes;
  };
  auto b_off = [&](int l, int j) {
    return mat_cells * 8 + (static_cast<std::uint64_t>(l) * nt + j) * tile_bytes;
  };
  auto c_off = [&](int i, int j) {
    return (static_cast<std::uint64_t>(i) * nt + j) * tile_bytes;
  };
  for (int i = 0; i < nt; ++i)
    for (int l = 0; l < nt; ++l) {
      if (!bspmm_nonzero(seed, 0, i, l, shape.density)) continue;
      std::int64_t* t = ab.data() + a_off(i, l) / 8;
      for (int x = 0; x < td; ++x)
        for (int y = 0; y < td; ++y) t[x * td + y] = bspmm_cell(0, i, l, x, y);
    }
  for (int l = 0; l < nt; ++l)
    for (int j = 0; j < nt; ++j) {
      if (!bspmm_nonzero(seed, 1, l, j, shape.density)) continue;
      std::int64_t* t = ab.data() + b_off(l, j) / 8;
      for (int x = 0; x < td; ++x)
        for (int y = 0; y < td; ++y) t[x * td + y] = bspmm_cell(1, l, j, x, y);
    }

  std::atomic<bool> host_stop{false};
  std::mutex init_mu;

  auto driver = [&](int rk) {
    try {
      Rank r = world.rank(rk);
      Comm wc = r.world_comm();

      Win wctr = win_create(wc, rk == 0 ? &counter : nullptr,
                            rk == 0 ? 8 : 0, AccOrdering::Ordered);
      Win wc_res = win_create(wc, rk == 0 ? cmat.data() : nullptr,
                              rk == 0 ? mat_cells * 8 : 0, o.acc_ordering);
      std::vector<Win> wget(T);
      for (int t = 0; t < T; ++t)
        wget[t] = win_create(wc, rk == 0 ? ab.data() : nullptr,
                             rk == 0 ? ab.size() * 8 : 0, AccOrdering::Ordered);
      EpSet eps;
      if (use_endpoints) eps = create_endpoints(wc, T);

      if (rk == 0) {
        // Host side.  Hardware windows complete without help; a software
        // target has to be progressed until the workers are done.
        while (!host_stop.load(std::memory_order_acquire)) {
          if (o.rma == RmaMode::SoftwareRMA) {
            wctr.progress();
            wc_res.progress();
            for (auto& w : wget) w.progress();
          }
          std::this_thread::yield();
        }
      } else {
        std::vector<std::thread> workers;
        std::vector<std::vector<double>> samples(T);
        for (int t = 0; t < T; ++t) {
          workers.emplace_back([&, t] {
            try {
              std::vector<std::int64_t> ta(tile_cells), tb(tile_cells),
                  tc(tile_cells);
              for (;;) {
                std::int64_t k = 0;
                Win(wctr).fetch_op(0, 0, 1, &k);
                Win(wctr).flush(0); // fetch result lands at flush
                if (k >= tasks) break;
                int i = static_cast<int>(k) / nt;
                int j = static_cast<int>(k) % nt;
                std::memset(tc.data(), 0, tile_bytes);
                bool any = false;
                for (int l = 0; l < nt; ++l) {
                  if (!bspmm_nonzero(seed, 0, i, l, shape.density) ||
                      !bspmm_nonzero(seed, 1, l, j, shape.density))
                    continue;
                  Win(wget[t]).get(0, a_off(i, l), ta.data(), tile_bytes);
                  Win(wget[t]).get(0, b_off(l, j), tb.data(), tile_bytes);
                  Win(wget[t]).flush(0);
                  for (int x = 0; x < td; ++x)
                    for (int z = 0; z < td; ++z) {
                      std::int64_t axz = ta[x * td + z];
                      if (axz == 0) continue;
                      for (int y = 0; y < td; ++y)
                        tc[x * td + y] += axz * tb[z * td + y];
                    }
                  any = true;
                }
                if (!any) continue;
                double t0 = now_us();
                if (use_endpoints)
                  Win(wc_res).accumulate_via(eps.endpoint(t), 0, c_off(i, j),
                                             tc.data(), tile_cells);
                else
                  Win(wc_res).accumulate(0, c_off(i, j), tc.data(), tile_cells);
                samples[t].push_back(now_us() - t0);
              }
              Win(wc_res).flush_all();
            } catch (const std::exception& e) {
              sh.fail(std::string("bspmm worker: ") + e.what());
            }
          });
        }
        for (auto& w : workers) w.join();
        {
          std::lock_guard<std::mutex> g(init_mu);
          for (auto& s : samples)
            init_us.insert(init_us.end(), s.begin(), s.end());
        }
        host_stop.store(true, std::memory_order_release);
      }

      // Teardown is collective; the host leaves its serving loop first.
      if (use_endpoints) eps.free();
      for (int t = T - 1; t >= 0; --t) wget[t].free();
      wc_res.free();
      wctr.free();

      if (rk == 0) {
        // Sequential oracle over the same operand buffer.
        std::vector<std::int64_t> want(mat_cells, 0);
        for (int i = 0; i < nt; ++i)
          for (int j = 0; j < nt; ++j) {
            std::int64_t* out = want.data() + c_off(i, j) / 8;
            for (int l = 0; l < nt; ++l) {
              const std::int64_t* pa = ab.data() + a_off(i, l) / 8;
              const std::int64_t* pb = ab.data() + b_off(l, j) / 8;
              for (int x = 0; x < td; ++x)
                for (int z = 0; z < td; ++z) {
                  std::int64_t axz = pa[x * td + z];
                  if (axz == 0) continue;
                  for (int y = 0; y < td; ++y)
                    out[x * td + y] += axz * pb[z * td + y];
                }
            }
          }
        if (want != cmat) sh.fail("bspmm: result matrix differs from oracle");
        if (counter < tasks) sh.fail("bspmm: work counter never reached the task count");
      }
    } catch (const std::exception& e) {
      sh.fail(std::string("bspmm driver: ") + e.what());
      host_stop.store(true, std::memory_order_release);
    }
  };

  std::thread r1(driver, 1);
  driver(0);
  r1.join();

  Report rep = world.finalize();
  if (lock_stats) *lock_stats = rep.to_text();
  if (!rep.clean) sh.fail("bspmm: finalize reported leftover traffic");
  if (rep.net.faults != 0) sh.fail("bspmm: transport faults");
}

inline BspmmResult run_bspmm(const BenchOptions& o, const BspmmShape& shape) {
  BspmmResult res;
  if (o.mode == RunMode::SerComm || o.mode == RunMode::Everywhere) {
    res.error = "bspmm supports --mode par and --mode ep only";
    return res;
  }
  const bool use_endpoints = o.mode == RunMode::Endpoints;
  std::string mode = mode_name(o.mode);
  if (!use_endpoints && o.acc_ordering == AccOrdering::None) mode += "+none";

  Shared sh;
  std::vector<double> medians;
  for (int rep = 0; rep <= o.reps; ++rep) {
    std::vector<double> init_us;
    bspmm_rep(o, shape, use_endpoints, init_us, sh,
              rep == o.reps ? &res.lock_stats : nullptr);
    if (!sh.ok.load()) break;
    if (rep == 0) continue; // warmup
    if (init_us.empty()) {
      sh.fail("bspmm: no accumulate samples");
      break;
    }
    medians.push_back(median(init_us));
  }
  if (!sh.ok.load()) {
    res.error = sh.err;
    return res;
  }

  Row proto;
  proto.benchmark = "bspmm";
  proto.mode = mode;
  proto.threads = o.threads;
  proto.vcis = o.vcis;
  proto.msg_size = shape.tile_dim * shape.tile_dim * 8;
  proto.iters = static_cast<std::uint64_t>(shape.grid) * shape.grid;
  res.median_init_us = push_metric(res.rows, proto, "acc_init_us", medians);
  res.correct = true;
  return res;
}

} // namespace mvci::bench
