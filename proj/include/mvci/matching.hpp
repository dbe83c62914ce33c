// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_MATCHING_HPP
#define MVCI_MATCHING_HPP

#include <cstdint>
#include <deque>
#include <optional>

#include "mvci/request.hpp"
#include "mvci/wire.hpp"

namespace mvci {

struct PostedRecv {
  Envelope pattern;  // rank/tag may be wildcards
  std::uint8_t* buf = nullptr;
  std::uint64_t cap = 0;
  Request* req = nullptr;
};

// An arrival that found no posted receive. Eager entries carry the payload;
// rendezvous entries carry what is needed to answer with a CTS later.
struct UnexpectedMsg {
  Envelope env;
  bool rndv = false;
  bytes payload;            // eager only
  std::int32_t src_node = 0;  // rendezvous reply route
  std::int32_t src_ctx = 0;
  std::uint64_t token = 0;  // sender-side record key
  std::uint64_t len = 0;
};

// Per-VCI matching state: one posted queue, one unexpected queue, both FIFO.
// Guarded by the owning VCI's lock; this class itself takes no locks, and a
// scan always walks front to back so the first compatible entry wins.
class MatchQueues {
 public:
  void push_posted(PostedRecv r) { posted_.push_back(std::move(r)); }
  void push_unexpected(UnexpectedMsg m) { unexpected_.push_back(std::move(m)); }

  // Receive side: first unexpected arrival compatible with the pattern.
  std::optional<UnexpectedMsg> match_arrival_for(const Envelope& pattern) {
    for (auto it = unexpected_.begin(); it != unexpected_.end(); ++it) {
      if (envelope_matches(pattern, it->env)) {
        UnexpectedMsg m = std::move(*it);
        unexpected_.erase(it);
        return m;
      }
    }
    return std::nullopt;
  }

  // Arrival side: first posted receive whose pattern admits the envelope.
  std::optional<PostedRecv> match_receive_for(const Envelope& env) {
    for (auto it = posted_.begin(); it != posted_.end(); ++it) {
      if (envelope_matches(it->pattern, env)) {
        PostedRecv r = *it;
        posted_.erase(it);
        return r;
      }
    }
    return std::nullopt;
  }

  std::size_t posted_count() const { return posted_.size(); }
  std::size_t unexpected_count() const { return unexpected_.size(); }
  bool empty() const { return posted_.empty() && unexpected_.empty(); }

 private:
  std::deque<PostedRecv> posted_;
  std::deque<UnexpectedMsg> unexpected_;
};

}  // namespace mvci

#endif  // MVCI_MATCHING_HPP
