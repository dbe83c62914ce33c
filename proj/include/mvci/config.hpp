// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_CONFIG_HPP
#define MVCI_CONFIG_HPP

#include <chrono>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "mvci/common.hpp"

namespace mvci {

// Critical-section strategy for the whole runtime.
enum class CsMode : std::uint8_t {
  Global,   // one big lock per rank
  FG,       // per-VCI locks, shared request pool
  FGCache,  // per-VCI locks, per-VCI request caches
};

enum class RmaMode : std::uint8_t {
  HardwareRMA,  // transport applies one-sided ops at injection time
  SoftwareRMA,  // target-side dispatch required
};

enum class AccOrdering : std::uint8_t {
  Ordered,  // per (source,target) FIFO application
  None,     // commutative-only, unordered fast path
};

// MPI-4.0 style usage assertions; purely advisory except where noted.
struct Hints {
  bool no_any_source = false;          // receives never use the source wildcard
  bool accumulate_ordering_none = false;  // windows default to AccOrdering::None
};

inline constexpr std::uint64_t kNoEscalation =
    std::numeric_limits<std::uint64_t>::max();

struct Config {
  CsMode cs_mode = CsMode::FGCache;
  int contexts = 16;  // simulated NIC contexts per node; VCI pool size matches
  std::uint32_t injection_cost = 200;   // work units per injected message
  std::size_t eager_threshold = 8 * 1024;
  std::uint64_t hybrid_threshold = 100;  // kNoEscalation disables global rounds
  RmaMode rma_mode = RmaMode::HardwareRMA;
  AccOrdering default_acc_ordering = AccOrdering::Ordered;
  Hints hints;
  std::size_t request_pool_size = std::size_t{1} << 16;
  std::size_t request_cache_capacity = 64;
  int poll_budget = 16;  // max events drained per context poll
  std::chrono::milliseconds watchdog{0};  // 0 disables stuck detection
  bool debug_checks = true;  // cross-window accumulate overlap checker etc.

  void validate() const {
    if (contexts < 1) throw UsageFault("config: contexts must be >= 1");
    if (injection_cost == 0) throw UsageFault("config: injection_cost must be > 0");
    if (request_pool_size == 0) throw UsageFault("config: request pool empty");
    if (poll_budget < 1) throw UsageFault("config: poll_budget must be >= 1");
  }

  void apply(const std::string& key, const std::string& value) {
    auto as_u64 = [&] { return std::stoull(value); };
    if (key == "cs_mode") {
      if (value == "global") cs_mode = CsMode::Global;
      else if (value == "fg") cs_mode = CsMode::FG;
      else if (value == "fgcache") cs_mode = CsMode::FGCache;
      else throw UsageFault("config: unknown cs_mode '" + value + "'");
    } else if (key == "contexts" || key == "vcis") {
      contexts = static_cast<int>(as_u64());
    } else if (key == "injection_cost") {
      injection_cost = static_cast<std::uint32_t>(as_u64());
    } else if (key == "eager_threshold") {
      eager_threshold = as_u64();
    } else if (key == "hybrid_threshold") {
      hybrid_threshold = value == "inf" ? kNoEscalation : as_u64();
    } else if (key == "rma_mode") {
      if (value == "hw") rma_mode = RmaMode::HardwareRMA;
      else if (value == "sw") rma_mode = RmaMode::SoftwareRMA;
      else throw UsageFault("config: unknown rma_mode '" + value + "'");
    } else if (key == "accumulate_ordering") {
      if (value == "ordered") default_acc_ordering = AccOrdering::Ordered;
      else if (value == "none") default_acc_ordering = AccOrdering::None;
      else throw UsageFault("config: unknown accumulate_ordering '" + value + "'");
    } else if (key == "hint_no_any_source") {
      hints.no_any_source = value == "1" || value == "true";
    } else if (key == "hint_accumulate_ordering_none") {
      hints.accumulate_ordering_none = value == "1" || value == "true";
    } else if (key == "request_pool_size") {
      request_pool_size = as_u64();
    } else if (key == "request_cache_capacity") {
      request_cache_capacity = as_u64();
    } else if (key == "poll_budget") {
      poll_budget = static_cast<int>(as_u64());
    } else if (key == "watchdog_ms") {
      watchdog = std::chrono::milliseconds(as_u64());
    } else if (key == "debug_checks") {
      debug_checks = value == "1" || value == "true";
    } else {
      throw UsageFault("config: unknown key '" + key + "'");
    }
  }

  // Flat key=value format; '#' starts a comment, blank lines ignored.
  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageFault("config: cannot open '" + path + "'");
    Config cfg;
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) continue;
      cfg.apply(key, value);
    }
    cfg.validate();
    return cfg;
  }
};

}  // namespace mvci

#endif  // MVCI_CONFIG_HPP
