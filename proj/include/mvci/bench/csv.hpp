// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark result rows. The schema is part of the tool's contract:
//   benchmark,mode,threads,vcis,msg_size,iters,metric,value,run_id
// run_id is the repetition index; 0 carries derived rows (medians).

#ifndef MVCI_BENCH_CSV_HPP
#define MVCI_BENCH_CSV_HPP

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace mvci {
namespace bench {

struct Row {
  std::string benchmark;
  std::string mode;
  int threads = 0;
  int vcis = 0;
  std::uint64_t msg_size = 0;
  std::uint64_t iters = 0;
  std::string metric;
  double value = 0.0;
  int run_id = 0;
};

inline const char* csv_header() {
  return "benchmark,mode,threads,vcis,msg_size,iters,metric,value,run_id";
}

inline void write_csv(std::ostream& os, const std::vector<Row>& rows) {
  os << csv_header() << "\n";
  for (const Row& r : rows) {
    os << r.benchmark << ',' << r.mode << ',' << r.threads << ',' << r.vcis
       << ',' << r.msg_size << ',' << r.iters << ',' << r.metric << ','
       << r.value << ',' << r.run_id << "\n";
  }
}

}  // namespace bench
}  // namespace mvci

#endif  // MVCI_BENCH_CSV_HPP
