// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_COMMON_HPP
#define MVCI_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvci {

inline constexpr std::size_t kCacheLine = 64;

using bytes = std::vector<std::uint8_t>;

// Caller broke an API precondition (bad rank, freed handle, size overflow).
class UsageFault : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A fixed-capacity resource ran out (request pool, VCI pool misuse).
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Transport-level addressing error detectable before injection.
class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A blocking call exceeded its watchdog budget; carries a queue-state dump.
class StuckError : public std::runtime_error {
 public:
  explicit StuckError(const std::string& diagnostic)
      : std::runtime_error(diagnostic) {}
};

// Busy arithmetic; the optimizer cannot elide the dependency chain.
inline void spin_work(std::uint32_t units) {
  volatile std::uint64_t acc = 0x9e3779b97f4a7c15ull;
  for (std::uint32_t i = 0; i < units; ++i) {
    acc = acc * 6364136223846793005ull + 1442695040888963407ull;
  }
}

}  // namespace mvci

#endif  // MVCI_COMMON_HPP
