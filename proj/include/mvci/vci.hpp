// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_VCI_HPP
#define MVCI_VCI_HPP

#include <atomic>
#include <cstdint>
#include <deque>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "mvci/common.hpp"
#include "mvci/instrument.hpp"
#include "mvci/matching.hpp"
#include "mvci/request.hpp"

namespace mvci {

struct RndvSend {
  bytes payload;
  Request* req = nullptr;
};

struct RndvRecv {
  std::uint8_t* buf = nullptr;
  std::uint64_t cap = 0;
  Request* req = nullptr;
};

// One virtual communication interface. Everything mutable here is guarded by
// `lock` (or by the rank's global lock in Global mode); the struct is padded
// to cache-line multiples so adjacent VCIs never false-share.
struct alignas(kCacheLine) Vci {
  CsMutex lock{LockClass::Vci};
  std::int32_t vci_id = -1;
  std::int32_t context_id = -1;  // fixed 1:1 mapping to a hardware context
  std::atomic<bool> active{false};

  // Request cache: LIFO ring in front of the global pool. Starts empty and
  // warms through free/alloc churn.
  std::vector<Request*> cache_slots;
  std::size_t cache_count = 0;

  // Pre-completed lightweight request for eager sends. The counter tracks
  // not-yet-waited immediate operations; it is diagnostic only, so the
  // wait-side decrement may be a lock-free non-RMW update.
  Request lw;
  std::atomic<std::int64_t> lw_count{0};

  MatchQueues mq;
  std::unordered_map<std::uint64_t, RndvSend> pending_rndv;
  std::unordered_map<std::uint64_t, RndvRecv> awaiting_data;

  Request* cache_pop() {
    if (cache_count == 0) return nullptr;
    return cache_slots[--cache_count];
  }

  bool cache_push(Request* r) {
    if (cache_count == cache_slots.size()) return false;
    cache_slots[cache_count++] = r;
    return true;
  }

  void lw_add(std::int64_t d) {
    // Non-RMW on purpose: immediate-wait paths must not pay an atomic RMW or
    // a lock. Lost updates only blur a diagnostic counter.
    lw_count.store(lw_count.load(std::memory_order_relaxed) + d,
                   std::memory_order_relaxed);
  }

  bool quiesced() const {
    return mq.empty() && pending_rndv.empty() && awaiting_data.empty();
  }
};

static_assert(alignof(Vci) == kCacheLine);
static_assert(sizeof(Vci) % kCacheLine == 0);

// Fixed pool of VCIs, one per hardware context. vci 0 belongs to the world
// communicator and doubles as the fallback: exhausted acquires multiplex onto
// it under a usage counter instead of failing. Freed VCIs go to the back of
// the free list, so allocation replays in FCFS order.
class VciPool {
 public:
  VciPool(int count, std::size_t cache_capacity)
      : all_(static_cast<std::size_t>(count)) {
    if (count < 1) throw UsageFault("vci pool: need at least one VCI");
    for (int i = 0; i < count; ++i) {
      Vci& v = all_[static_cast<std::size_t>(i)];
      v.vci_id = i;
      v.context_id = i;
      v.cache_slots.assign(cache_capacity, nullptr);
      v.lw.reset(ReqKind::Lightweight, i);
      v.lw.finish(CompletionSlot{});
      if (i > 0) free_.push_back(i);
    }
    all_[0].active.store(true, std::memory_order_relaxed);
    fallback_users_ = 1;  // the world communicator
  }

  int count() const { return static_cast<int>(all_.size()); }

  Vci& vci(std::int32_t id) { return all_[static_cast<std::size_t>(id)]; }
  const Vci& vci(std::int32_t id) const {
    return all_[static_cast<std::size_t>(id)];
  }

  std::int32_t acquire() {
    std::lock_guard<std::mutex> g(mu_);
    if (!free_.empty()) {
      std::int32_t id = free_.front();
      free_.pop_front();
      all_[static_cast<std::size_t>(id)].active.store(
          true, std::memory_order_relaxed);
      return id;
    }
    ++fallback_users_;
    return 0;
  }

  void release(std::int32_t id) {
    std::lock_guard<std::mutex> g(mu_);
    if (id == 0) {
      if (fallback_users_ <= 1)
        throw UsageFault("vci pool: fallback release underflow");
      --fallback_users_;
      return;
    }
    Vci& v = all_[static_cast<std::size_t>(id)];
    if (!v.active.load(std::memory_order_relaxed))
      throw UsageFault("vci pool: releasing a free VCI");
    v.active.store(false, std::memory_order_relaxed);
    free_.push_back(id);
  }

  std::int64_t fallback_users() const {
    std::lock_guard<std::mutex> g(mu_);
    return fallback_users_;
  }

  std::size_t free_count() const {
    std::lock_guard<std::mutex> g(mu_);
    return free_.size();
  }

  // Accounting at quiesce: records parked in every VCI cache.
  std::size_t cached_requests() const {
    std::size_t n = 0;
    for (const Vci& v : all_) n += v.cache_count;
    return n;
  }

 private:
  mutable std::mutex mu_;  // pool bookkeeping only; never on the data path
  std::vector<Vci> all_;
  std::deque<std::int32_t> free_;
  std::int64_t fallback_users_ = 0;
};

}  // namespace mvci

#endif  // MVCI_VCI_HPP
