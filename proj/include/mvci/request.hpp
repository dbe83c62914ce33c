// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_REQUEST_HPP
#define MVCI_REQUEST_HPP

#include <atomic>
#include <cstdint>
#include <deque>
#include <vector>

#include "mvci/common.hpp"
#include "mvci/instrument.hpp"

namespace mvci {

enum class ReqKind : std::uint8_t { Pt2pt, Rma, Lightweight };

// Filled at completion time, before the Complete flip publishes it.
struct CompletionSlot {
  std::int32_t source = -1;
  std::int32_t tag = -1;
  std::uint64_t nbytes = 0;
  bool truncated = false;
};

struct Request {
  std::uint64_t req_id = 0;
  std::int32_t vci_id = -1;  // VCI whose progress completes this request
  ReqKind kind = ReqKind::Pt2pt;
  std::atomic<bool> complete{false};
  std::atomic<std::int32_t> refcount{0};
  CompletionSlot slot;

  void reset(ReqKind k, std::int32_t vci) {
    kind = k;
    vci_id = vci;
    slot = CompletionSlot{};
    refcount.store(1, std::memory_order_relaxed);
    complete.store(false, std::memory_order_relaxed);
  }

  void finish(const CompletionSlot& s) {
    slot = s;
    complete.store(true, std::memory_order_release);
  }

  bool is_complete() const { return complete.load(std::memory_order_acquire); }
};

// Fixed-size global pool with a FIFO free list. The free-list lock is the
// request-class lock; per-VCI caches in front of it live with the VCI.
class RequestPool {
 public:
  explicit RequestPool(std::size_t size)
      : lock_(LockClass::Request), storage_(size) {
    for (std::size_t i = 0; i < size; ++i) {
      storage_[i].req_id = i;
      free_.push_back(&storage_[i]);
    }
  }

  std::size_t size() const { return storage_.size(); }

  // Caller must hold the request-class lock (or the rank's global lock in
  // Global mode, where this lock is not taken at all).
  Request* pop_front_unlocked() {
    if (free_.empty()) return nullptr;
    Request* r = free_.front();
    free_.pop_front();
    return r;
  }

  void push_back_unlocked(Request* r) { free_.push_back(r); }

  std::size_t free_count_unlocked() const { return free_.size(); }

  CsMutex& lock() { return lock_; }

  // Quiesce-time accounting helper; takes the lock itself.
  std::size_t free_count() {
    lock_.lock();
    std::size_t n = free_.size();
    lock_.unlock();
    return n;
  }

 private:
  CsMutex lock_;
  std::vector<Request> storage_;
  std::deque<Request*> free_;
};

}  // namespace mvci

#endif  // MVCI_REQUEST_HPP
