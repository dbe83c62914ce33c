// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_BENCH_COMMON_HPP
#define MVCI_BENCH_COMMON_HPP

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <random>
#include <string>

#include "mvci/config.hpp"
#include "mvci/bench/csv.hpp"
#include "mvci/bench/stats.hpp"

namespace mvci {
namespace bench {

// First-failure collector shared by a harness's worker threads.
struct Shared {
  std::atomic<bool> ok{true};
  std::mutex err_mu;
  std::string err;
  void fail(const std::string& why) {
    ok.store(false, std::memory_order_relaxed);
    std::lock_guard<std::mutex> g(err_mu);
    if (err.empty()) err = why;
  }
};

// Thread topology of a run. ser_comm shares one communicator among all
// threads; par_comm gives each flow its own communicator; endpoints uses
// user-visible endpoints; everywhere runs one single-threaded rank per flow.
enum class RunMode { SerComm, ParComm, Endpoints, Everywhere };

inline const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::SerComm: return "ser_comm";
    case RunMode::ParComm: return "par_comm";
    case RunMode::Endpoints: return "endpoints";
    case RunMode::Everywhere: return "everywhere";
  }
  return "?";
}

inline bool parse_mode(const std::string& s, RunMode& out) {
  if (s == "ser" || s == "ser_comm") { out = RunMode::SerComm; return true; }
  if (s == "par" || s == "par_comm") { out = RunMode::ParComm; return true; }
  if (s == "ep" || s == "endpoints") { out = RunMode::Endpoints; return true; }
  if (s == "everywhere") { out = RunMode::Everywhere; return true; }
  return false;
}

struct BenchOptions {
  RunMode mode = RunMode::ParComm;
  int threads = 8;
  int vcis = 8;             // usable VCIs beyond the fallback
  int distinct_comms = -1;  // flows mapped round-robin; -1 means one per thread
  CsMode cs = CsMode::FGCache;
  std::uint64_t msg_size = 8;
  std::uint64_t iters = 1000;  // per-context message budget (virtual horizon)
  std::uint64_t window = 64;   // outstanding ops between credit/flush points
  int reps = 5;
  RmaMode rma = RmaMode::HardwareRMA;
  AccOrdering acc_ordering = AccOrdering::Ordered;
  std::uint64_t target_compute_us = 0;
  bool dump_lock_stats = false;
};

inline Config make_config(const BenchOptions& o) {
  Config cfg;
  cfg.cs_mode = o.cs;
  cfg.contexts = o.vcis + 1;  // pool VCIs plus the world/fallback VCI
  cfg.rma_mode = o.rma;
  return cfg;
}

inline std::uint64_t bench_seed() {
  if (const char* s = std::getenv("BENCH_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(s, &end, 10);
    if (end && *end == '\0') return v;
  }
  return 0xC0FFEEu;
}

inline double now_us() {
  auto t = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double, std::micro>(t).count();
}

inline void spin_for_us(double us) {
  double t0 = now_us();
  while (now_us() - t0 < us) {
  }
}

// Appends one row per repetition plus a run_id=0 median row.
inline double push_metric(std::vector<Row>& rows, Row proto,
                          const std::string& metric,
                          const std::vector<double>& per_rep) {
  proto.metric = metric;
  for (std::size_t i = 0; i < per_rep.size(); ++i) {
    proto.value = per_rep[i];
    proto.run_id = static_cast<int>(i) + 1;
    rows.push_back(proto);
  }
  double med = median(per_rep);
  proto.metric = metric + "_median";
  proto.value = med;
  proto.run_id = 0;
  rows.push_back(proto);
  return med;
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_COMMON_HPP
