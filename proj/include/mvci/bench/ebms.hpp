// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Band-fetch pattern: two ranks, one window per band, every rank exposes its
// copy of each band. Each thread loops: compute, fetch a rotating band from
// the peer with get+flush, validate, rank-local barrier. The rotation means
// a thread's fetch usually lands on a window whose owner thread is off
// computing, so in software RMA mode the fetch waits for whoever next
// touches that window's VCI (or for escalated progress). With all windows
// collapsed onto the fallback VCI (vcis=0, the one-VCI configuration),
// any thread's flush serves every incoming fetch immediately; that is the
// single-VCI run the multi-VCI software numbers are compared against.

#ifndef MVCI_BENCH_EBMS_HPP
#define MVCI_BENCH_EBMS_HPP

#include <barrier>
#include <string>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"
#include "mvci/bench/common.hpp"

namespace mvci {
namespace bench {

struct EbmsResult {
  std::vector<Row> rows;
  bool correct = true;
  std::string error;
  double median_fetch_us = 0.0;
  std::string lock_stats;
};

namespace detail_bench {

inline std::int64_t band_cell(int rank, int band, std::uint64_t i) {
  return (static_cast<std::int64_t>(rank) * 1000 + band) * 131071 +
         static_cast<std::int64_t>(i);
}

// Sense-reversing barrier whose waiters keep driving progress. A plain
// thread barrier can strand software-mode fetches: every waiter here polls
// its own window so incoming gets are always dispatched eventually.
struct ProgressBarrier {
  explicit ProgressBarrier(int n) : n_(n) {}
  template <class F>
  void wait(F&& progress) {
    int s = sense_.load(std::memory_order_acquire);
    if (count_.fetch_add(1, std::memory_order_acq_rel) + 1 == n_) {
      count_.store(0, std::memory_order_relaxed);
      sense_.store(1 - s, std::memory_order_release);
    } else {
      while (sense_.load(std::memory_order_acquire) == s) {
        progress();
        std::this_thread::yield();
      }
    }
  }

 private:
  int n_;
  std::atomic<int> count_{0};
  std::atomic<int> sense_{0};
};

}  // namespace detail_bench

// msg_size is the band size in bytes (rounded down to whole 8-byte cells).
inline EbmsResult run_ebms(const BenchOptions& o) {
  using namespace detail_bench;
  EbmsResult res;
  Shared sh;
  const int T = o.threads;
  const std::uint64_t cells = o.msg_size / 8 ? o.msg_size / 8 : 1;
  const std::uint64_t band_bytes = cells * 8;
  const int iters = static_cast<int>(o.iters);
  Config cfg = make_config(o);

  std::vector<double> per_rep;
  for (int rep = 0; rep <= o.reps; ++rep) {  // rep 0 is warmup
    World w(2, cfg);
    std::vector<double> samples;
    std::mutex samples_mu;
    ProgressBarrier bar(2 * T);  // global: both ranks' threads
    std::vector<std::thread> drivers;
    // bands[rank][band][cell]
    std::vector<std::vector<std::vector<std::int64_t>>> bands(2);
    for (int r = 0; r < 2; ++r) {
      bands[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(T));
      for (int b = 0; b < T; ++b) {
        auto& v = bands[static_cast<std::size_t>(r)]
                       [static_cast<std::size_t>(b)];
        v.resize(cells);
        for (std::uint64_t i = 0; i < cells; ++i)
          v[i] = band_cell(r, b, i);
      }
    }
    for (int rk = 0; rk < 2; ++rk) {
      drivers.emplace_back([&, rk] {
        Comm wc = w.rank(rk).world_comm();
        std::vector<Win> wins;
        for (int b = 0; b < T; ++b)
          wins.push_back(win_create(
              wc,
              bands[static_cast<std::size_t>(rk)][static_cast<std::size_t>(b)]
                  .data(),
              band_bytes, AccOrdering::Ordered));
        std::vector<std::thread> ts;
        for (int t = 0; t < T; ++t) {
          ts.emplace_back([&, t] {
            Win own = wins[static_cast<std::size_t>(t)];
            std::vector<std::int64_t> dst(cells, 0);
            for (int s = 0; s < iters; ++s) {
              if (o.target_compute_us > 0)
                spin_for_us(static_cast<double>(o.target_compute_us));
              const int b = (t + s) % T;
              Win win = wins[static_cast<std::size_t>(b)];
              double t0 = now_us();
              win.get(1 - rk, 0, dst.data(), band_bytes);
              win.flush(1 - rk);
              double dt = now_us() - t0;
              for (std::uint64_t i = 0; i < cells; ++i)
                if (dst[i] != band_cell(1 - rk, b, i)) {
                  sh.fail("ebms: band content mismatch");
                  break;
                }
              {
                std::lock_guard<std::mutex> g(samples_mu);
                samples.push_back(dt);
              }
              bar.wait([&] { own.progress(); });
            }
          });
        }
        for (auto& t : ts) t.join();
        for (auto& win : wins) win.free();
      });
    }
    for (auto& d : drivers) d.join();
    Report report = w.finalize();
    res.lock_stats = report.to_text();
    if (!report.clean) sh.fail("ebms: unclean shutdown");
    if (report.net.faults != 0) sh.fail("ebms: transport faults");
    if (rep > 0) per_rep.push_back(median(samples));
  }
  res.correct = sh.ok.load();
  res.error = sh.err;
  if (!res.correct) return res;
  Row proto;
  proto.benchmark = "ebms";
  proto.mode = mode_name(o.mode);
  proto.threads = T;
  proto.vcis = o.vcis;
  proto.msg_size = band_bytes;
  proto.iters = o.iters;
  res.median_fetch_us = push_metric(res.rows, proto, "fetch_us", per_rep);
  return res;
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_EBMS_HPP
