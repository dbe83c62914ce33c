// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runtime core: world/rank lifecycle, object registries (communicators,
// windows, endpoint sets), VCI binding, and the guard helpers that implement
// the three critical-section modes. Operation bodies live in p2p.hpp,
// rma.hpp, and progress.hpp; include mvci/mvci.hpp to get everything.

#ifndef MVCI_RUNTIME_HPP
#define MVCI_RUNTIME_HPP

#include <array>
#include <atomic>
#include <chrono>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mvci/common.hpp"
#include "mvci/config.hpp"
#include "mvci/instrument.hpp"
#include "mvci/matching.hpp"
#include "mvci/request.hpp"
#include "mvci/transport.hpp"
#include "mvci/vci.hpp"
#include "mvci/wire.hpp"

namespace mvci {

class World;
struct RankCtx;

struct Status {
  std::int32_t source = -1;
  std::int32_t tag = -1;
  std::uint64_t nbytes = 0;
  bool truncated = false;
};

// A communicator as seen by one rank. `id` is the user message stream;
// id + 1 is the internal collective stream, so wildcard receives on the user
// stream can never match barrier traffic.
struct CommRec {
  std::int32_t id = -1;
  std::vector<std::int32_t> members;  // comm rank -> node id
  std::int32_t my_rank = -1;
  std::int32_t vci_id = -1;
  std::vector<std::int32_t> peer_ctx;  // comm rank -> context at that node
  std::uint32_t coll_seq = 0;          // collective call counter
  bool freed = false;

  int size() const { return static_cast<int>(members.size()); }
};

struct GetRec {
  std::uint8_t* dst = nullptr;
  std::uint64_t len = 0;
  std::int64_t* fetch_dst = nullptr;
  std::int32_t target = -1;
  bool chained = false;  // member of an ordered-accumulate chain
};

struct WinRec {
  std::int32_t id = -1;
  std::int32_t vci_id = -1;
  AccOrdering ordering = AccOrdering::Ordered;
  std::uint8_t* base = nullptr;
  std::uint64_t extent = 0;
  std::vector<std::int32_t> members;
  std::int32_t my_rank = -1;
  std::vector<std::int32_t> peer_ctx;
  std::vector<std::uint64_t> peer_extent;
  std::int32_t comm_id = -1;  // creating communicator, used for the free barrier

  // One slot per target rank; incremented at initiation, decremented when the
  // completion event is dispatched. flush spins on these.
  std::unique_ptr<std::atomic<std::int64_t>[]> outstanding;

  // Ordered-accumulate chains, one per target, guarded by the window VCI's
  // lock: at most one chained op is on the wire per (source, target).
  struct PendingAcc {
    bool fetch = false;
    std::uint64_t offset = 0;
    bytes payload;
    std::uint64_t token = 0;
  };
  struct Chain {
    std::deque<PendingAcc> q;
    bool inflight = false;
  };
  std::vector<Chain> chains;

  // In-flight get/fetch records, guarded by the window VCI's lock.
  std::unordered_map<std::uint64_t, GetRec> gets;

  // Raw contexts used as unordered-accumulate lanes; flush polls these.
  std::unique_ptr<std::atomic<bool>[]> lane_used;
  int lane_count = 0;

  std::atomic<std::int64_t> faults{0};
  bool freed = false;

  std::int64_t total_outstanding() const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < members.size(); ++i)
      n += outstanding[i].load(std::memory_order_relaxed);
    return n;
  }
};

struct EpSetRec {
  std::int32_t id = -1;
  int per_rank = 0;
  std::vector<std::int32_t> rank_members;  // parent rank -> node id
  std::int32_t my_rank = -1;
  std::vector<std::int32_t> my_vcis;  // local endpoint -> vci
  std::vector<std::int32_t> ep_ctx;   // global endpoint rank -> context
  std::int32_t parent_comm_id = -1;   // for the collective free barrier
  bool freed = false;

  int total() const {
    return static_cast<int>(rank_members.size()) * per_rank;
  }
};

struct Hook {
  CsMutex guard{LockClass::Hook};
  std::function<void()> fn;
  std::int32_t id = -1;
};

struct RankCtx {
  World* world = nullptr;
  std::int32_t node_id = -1;
  VciPool pool;
  RequestPool reqs;
  CsMutex global_cs{LockClass::Global};

  std::mutex obj_mu;  // registry edits and dispatch-side window lookup
  std::unordered_map<std::int32_t, std::unique_ptr<CommRec>> comms;
  std::unordered_map<std::int32_t, std::unique_ptr<WinRec>> wins;
  std::unordered_map<std::int32_t, std::unique_ptr<EpSetRec>> eps;

  std::mutex hooks_mu;
  std::vector<std::shared_ptr<Hook>> hooks;
  std::int32_t next_hook_id = 0;

  std::atomic<std::uint64_t> tokens{1};
  std::atomic<std::uint64_t> stray_events{0};
  CommRec* world_comm = nullptr;

  RankCtx(World* w, std::int32_t node, int vcis, std::size_t cache_cap,
          std::size_t pool_size)
      : world(w), node_id(node), pool(vcis, cache_cap), reqs(pool_size) {}

  WinRec* find_win(std::int32_t id) {
    std::lock_guard<std::mutex> g(obj_mu);
    auto it = wins.find(id);
    return it == wins.end() ? nullptr : it->second.get();
  }
};

// ---------------------------------------------------------------------------
// Handles. All are cheap value types; validity is the user's problem after
// the underlying object is freed.

class Req {
 public:
  Req() = default;
  Req(RankCtx* r, Request* rec) : r_(r), rec_(rec) {}
  bool valid() const { return rec_ != nullptr; }
  bool completed() const { return rec_ && rec_->is_complete(); }
  Status wait();             // defined in p2p.hpp
  bool test(Status* out = nullptr);  // defined in p2p.hpp

  RankCtx* rank_ctx() const { return r_; }
  Request* record() const { return rec_; }

 private:
  RankCtx* r_ = nullptr;
  Request* rec_ = nullptr;
};

class Comm {
 public:
  Comm() = default;
  Comm(RankCtx* r, CommRec* rec) : r_(r), rec_(rec) {}
  bool valid() const { return rec_ != nullptr && !rec_->freed; }
  int size() const { return rec_->size(); }
  int rank() const { return rec_->my_rank; }
  std::int32_t id() const { return rec_->id; }
  std::int32_t vci() const { return rec_->vci_id; }

  Req isend(int dst, int tag, const void* data, std::uint64_t len);
  Req issend(int dst, int tag, const void* data, std::uint64_t len);
  Req irecv(int src, int tag, void* buf, std::uint64_t cap);
  Status send(int dst, int tag, const void* data, std::uint64_t len);
  Status recv(int src, int tag, void* buf, std::uint64_t cap);
  void barrier();
  Comm dup();
  // Collective over this comm; ranks outside `group` get an invalid handle.
  Comm create_group(const std::vector<int>& group);
  void free();
  void progress();  // one user-driven pass over this comm's VCI

  RankCtx* rank_ctx() const { return r_; }
  CommRec* rec() const { return rec_; }

 private:
  RankCtx* r_ = nullptr;
  CommRec* rec_ = nullptr;
};

class Endpoint {
 public:
  Endpoint() = default;
  Endpoint(RankCtx* r, EpSetRec* rec, int local) : r_(r), rec_(rec), local_(local) {}
  bool valid() const { return rec_ != nullptr && !rec_->freed; }
  int ep_rank() const { return rec_->my_rank * rec_->per_rank + local_; }
  int total() const { return rec_->total(); }
  std::int32_t vci() const { return rec_->my_vcis[static_cast<std::size_t>(local_)]; }

  Req isend(int dst_ep, int tag, const void* data, std::uint64_t len);
  Req irecv(int src_ep, int tag, void* buf, std::uint64_t cap);
  void progress();

  RankCtx* rank_ctx() const { return r_; }
  EpSetRec* rec() const { return rec_; }

 private:
  RankCtx* r_ = nullptr;
  EpSetRec* rec_ = nullptr;
  int local_ = 0;
};

class EpSet {
 public:
  EpSet() = default;
  EpSet(RankCtx* r, EpSetRec* rec) : r_(r), rec_(rec) {}
  bool valid() const { return rec_ != nullptr && !rec_->freed; }
  int per_rank() const { return rec_->per_rank; }
  Endpoint endpoint(int local) { return Endpoint(r_, rec_, local); }
  void free();

  RankCtx* rank_ctx() const { return r_; }
  EpSetRec* rec() const { return rec_; }

 private:
  RankCtx* r_ = nullptr;
  EpSetRec* rec_ = nullptr;
};

class Win {
 public:
  Win() = default;
  Win(RankCtx* r, WinRec* rec) : r_(r), rec_(rec) {}
  bool valid() const { return rec_ != nullptr && !rec_->freed; }
  std::int32_t id() const { return rec_->id; }
  std::int32_t vci() const { return rec_->vci_id; }
  int size() const { return static_cast<int>(rec_->members.size()); }
  int rank() const { return rec_->my_rank; }
  std::int64_t faults() const {
    return rec_->faults.load(std::memory_order_relaxed);
  }

  void put(int target, std::uint64_t offset, const void* data, std::uint64_t len);
  void get(int target, std::uint64_t offset, void* dst, std::uint64_t len);
  void accumulate(int target, std::uint64_t offset, const std::int64_t* addends,
                  std::uint64_t count);
  // Endpoint-routed accumulate: injects on the endpoint's context instead of
  // the window VCI; completion still tracked by this window's counters.
  void accumulate_via(const Endpoint& ep, int target, std::uint64_t offset,
                      const std::int64_t* addends, std::uint64_t count);
  void fetch_op(int target, std::uint64_t offset, std::int64_t operand,
                std::int64_t* result);
  void flush(int target);
  void flush_all();
  void free();
  void progress();

  RankCtx* rank_ctx() const { return r_; }
  WinRec* rec() const { return rec_; }

 private:
  RankCtx* r_ = nullptr;
  WinRec* rec_ = nullptr;
};

class Rank {
 public:
  Rank() = default;
  Rank(World* w, RankCtx* r) : w_(w), r_(r) {}
  Comm world_comm() { return Comm(r_, r_->world_comm); }
  std::int32_t node_id() const { return r_->node_id; }

  std::int32_t add_progress_hook(std::function<void()> fn) {
    auto h = std::make_shared<Hook>();
    h->fn = std::move(fn);
    std::lock_guard<std::mutex> g(r_->hooks_mu);
    h->id = r_->next_hook_id++;
    r_->hooks.push_back(h);
    return h->id;
  }

  void remove_progress_hook(std::int32_t id) {
    std::lock_guard<std::mutex> g(r_->hooks_mu);
    auto n = std::erase_if(
        r_->hooks,
        [&](const std::shared_ptr<Hook>& h) { return h->id == id; });
    if (n == 0) throw UsageFault("remove_progress_hook: unknown hook id");
  }

  void progress_vci(std::int32_t vci_id);  // progress.hpp
  void progress_global();                  // one escalated round, progress.hpp

  std::int64_t fallback_users() const { return r_->pool.fallback_users(); }
  RankCtx* ctx() { return r_; }
  World* world() { return w_; }

 private:
  World* w_ = nullptr;
  RankCtx* r_ = nullptr;
};

// ---------------------------------------------------------------------------

struct RankReport {
  std::int32_t node = -1;
  std::size_t pool_size = 0;
  std::size_t pool_free = 0;
  std::size_t cached = 0;
  std::size_t live = 0;  // neither free nor cached: leaked if nonzero
  std::int64_t fallback_users = 0;
  std::size_t vcis_torn_down = 0;
  std::uint64_t stray_events = 0;
};

struct Report {
  instr::Counters counters;  // merged over threads, since world construction
  NetTotals net;
  std::uint64_t acc_overlap_flags = 0;
  std::vector<RankReport> ranks;
  std::vector<std::string> diagnostics;
  bool clean = true;

  std::string to_text() const {
    std::ostringstream os;
    os << "lock acquisitions by op class (rows) and lock class (columns)\n";
    os << "op,global,vci,request,hook\n";
    for (std::size_t i = 0; i < kOpClassCount; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < kLockClassCount; ++j)
        any |= counters.locks[i][j] != 0;
      if (!any) continue;
      os << op_class_name(static_cast<OpClass>(i));
      for (std::size_t j = 0; j < kLockClassCount; ++j)
        os << "," << counters.locks[i][j];
      os << "\n";
    }
    os << "vci_polls=" << counters.vci_polls
       << " poll_events=" << counters.poll_events
       << " global_rounds=" << counters.global_rounds
       << " contended=" << counters.contended << "\n";
    os << "net injected=" << net.injected
       << " delivered=" << net.delivered_incoming + net.delivered_completions
       << " drained=" << net.drained_incoming + net.drained_completions
       << " faults=" << net.faults
       << " acc_overlap_flags=" << acc_overlap_flags << "\n";
    for (const RankReport& r : ranks) {
      os << "rank " << r.node << ": pool " << r.pool_free << "/" << r.pool_size
         << " free, " << r.cached << " cached, " << r.live << " live"
         << ", fallback_users=" << r.fallback_users
         << ", vcis_torn_down=" << r.vcis_torn_down
         << ", stray_events=" << r.stray_events << "\n";
    }
    for (const std::string& d : diagnostics) os << "!! " << d << "\n";
    os << (clean ? "clean shutdown\n" : "UNCLEAN shutdown\n");
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "op,global,vci,request,hook\n";
    for (std::size_t i = 0; i < kOpClassCount; ++i) {
      os << op_class_name(static_cast<OpClass>(i));
      for (std::size_t j = 0; j < kLockClassCount; ++j)
        os << "," << counters.locks[i][j];
      os << "\n";
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------

class World {
 public:
  World(int nodes, Config cfg) : cfg_(cfg) {
    cfg_.validate();
    if (nodes < 1) throw UsageFault("world: need at least one rank");
    TransportConfig tc;
    tc.contexts = cfg_.contexts;
    tc.injection_cost = cfg_.injection_cost;
    tc.rma_mode = cfg_.rma_mode;
    tc.debug_checks = cfg_.debug_checks;
    net_ = std::make_unique<SimNetwork>(nodes, tc);
    baseline_ = instr::merged_snapshot();
    for (int n = 0; n < nodes; ++n)
      ranks_.push_back(std::make_unique<RankCtx>(
          this, n, cfg_.contexts, cfg_.request_cache_capacity,
          cfg_.request_pool_size));
    // World communicator: vci 0 everywhere, context 0 everywhere.
    std::vector<std::int32_t> all(static_cast<std::size_t>(nodes));
    for (int n = 0; n < nodes; ++n) all[static_cast<std::size_t>(n)] = n;
    std::int32_t wid = alloc_id();
    for (int n = 0; n < nodes; ++n) {
      auto rec = std::make_unique<CommRec>();
      rec->id = wid;
      rec->members = all;
      rec->my_rank = n;
      rec->vci_id = 0;
      rec->peer_ctx.assign(all.size(), 0);
      RankCtx& r = *ranks_[static_cast<std::size_t>(n)];
      r.world_comm = rec.get();
      std::lock_guard<std::mutex> g(r.obj_mu);
      r.comms.emplace(wid, std::move(rec));
    }
  }

  ~World() {
    if (!finalized_) {
      try {
        finalize();
      } catch (...) {
      }
    }
  }

  int size() const { return static_cast<int>(ranks_.size()); }
  const Config& config() const { return cfg_; }
  SimNetwork& net() { return *net_; }
  Rank rank(int n) {
    if (n < 0 || n >= size()) throw UsageFault("world: rank out of range");
    return Rank(this, ranks_[static_cast<std::size_t>(n)].get());
  }
  RankCtx& rank_ctx(int n) { return *ranks_[static_cast<std::size_t>(n)]; }

  std::int32_t alloc_id() { return next_id_.fetch_add(2, std::memory_order_relaxed); }

  // Rendezvous data exchange backing creation collectives: every member
  // writes a blob, a barrier orders writes before reads, the last reader
  // retires the record. First writer may also allocate the new object id.
  using ExKey = std::array<std::int64_t, 3>;

  std::int32_t exchange_write(const ExKey& key, int pos, int n,
                              bytes blob, bool want_id) {
    std::lock_guard<std::mutex> g(ex_mu_);
    ExchangeRec& rec = ex_[key];
    if (rec.slots.empty()) rec.slots.resize(static_cast<std::size_t>(n));
    if (want_id && rec.alloc_id < 0) rec.alloc_id = alloc_id();
    rec.slots[static_cast<std::size_t>(pos)] = std::move(blob);
    rec.writes++;
    return rec.alloc_id;
  }

  std::vector<bytes> exchange_read(const ExKey& key, int n) {
    std::lock_guard<std::mutex> g(ex_mu_);
    auto it = ex_.find(key);
    if (it == ex_.end() || it->second.writes != n)
      throw UsageFault("exchange: read before all members wrote");
    std::vector<bytes> out = it->second.slots;
    if (++it->second.reads == n) ex_.erase(it);
    return out;
  }

  Report finalize();  // defined in progress.hpp (needs a final drain)
  bool finalized() const { return finalized_; }

 private:
  friend struct RankCtx;
  struct ExchangeRec {
    std::vector<bytes> slots;
    int writes = 0;
    int reads = 0;
    std::int32_t alloc_id = -1;
  };

  Config cfg_;
  std::unique_ptr<SimNetwork> net_;
  std::vector<std::unique_ptr<RankCtx>> ranks_;
  std::mutex ex_mu_;
  std::map<ExKey, ExchangeRec> ex_;
  std::atomic<std::int32_t> next_id_{2};  // id 0 reserved; ids step by 2
  instr::Counters baseline_;
  bool finalized_ = false;

  friend class Rank;
};

namespace detail {

inline CsMode mode_of(const RankCtx& r) { return r.world->config().cs_mode; }

// The rank whose global critical section this thread currently holds.
inline RankCtx*& held_global() {
  thread_local RankCtx* p = nullptr;
  return p;
}

// API-boundary guard: in Global mode, takes the rank's big lock unless this
// thread already holds it (nested internal calls); no-op otherwise.
class ApiGuard {
 public:
  explicit ApiGuard(RankCtx& r) {
    if (mode_of(r) == CsMode::Global && held_global() != &r) {
      r.global_cs.lock();
      held_global() = &r;
      r_ = &r;
    }
  }
  ~ApiGuard() {
    if (r_) {
      held_global() = nullptr;
      r_->global_cs.unlock();
    }
  }
  ApiGuard(const ApiGuard&) = delete;
  ApiGuard& operator=(const ApiGuard&) = delete;

 private:
  RankCtx* r_ = nullptr;
};

// Per-VCI guard: locks the VCI in the fine-grained modes; no-op under the
// global lock, which already covers all VCI state of the rank.
class VciGuard {
 public:
  VciGuard(RankCtx& r, Vci& v) {
    if (mode_of(r) != CsMode::Global) {
      v.lock.lock();
      v_ = &v;
    }
  }
  ~VciGuard() {
    if (v_) v_->lock.unlock();
  }
  VciGuard(const VciGuard&) = delete;
  VciGuard& operator=(const VciGuard&) = delete;

 private:
  Vci* v_ = nullptr;
};

// Allocation: FGCache pops the per-VCI cache first (caller holds the VCI
// lock); FG goes to the shared pool under the request-class lock; Global
// relies on the big lock alone.
inline Request* alloc_request(RankCtx& r, Vci& v, ReqKind kind) {
  Request* q = nullptr;
  switch (mode_of(r)) {
    case CsMode::Global:
      q = r.reqs.pop_front_unlocked();
      break;
    case CsMode::FG: {
      CsMutex& L = r.reqs.lock();
      L.lock();
      q = r.reqs.pop_front_unlocked();
      L.unlock();
      break;
    }
    case CsMode::FGCache:
      q = v.cache_pop();
      if (!q) {
        CsMutex& L = r.reqs.lock();
        L.lock();
        q = r.reqs.pop_front_unlocked();
        L.unlock();
      }
      break;
  }
  if (!q) throw ResourceError("request pool exhausted");
  q->reset(kind, v.vci_id);
  return q;
}

// Freeing: FGCache prefers the owning VCI's cache (one VCI lock, taken here);
// FG returns to the shared pool (request lock); Global pushes under the big
// lock, which the caller holds.
inline void free_request_record(RankCtx& r, Request* q) {
  switch (mode_of(r)) {
    case CsMode::Global:
      r.reqs.push_back_unlocked(q);
      break;
    case CsMode::FG: {
      CsMutex& L = r.reqs.lock();
      L.lock();
      r.reqs.push_back_unlocked(q);
      L.unlock();
      break;
    }
    case CsMode::FGCache: {
      Vci& v = r.pool.vci(q->vci_id);
      v.lock.lock();
      bool cached = v.cache_push(q);
      v.lock.unlock();
      if (!cached) {
        CsMutex& L = r.reqs.lock();
        L.lock();
        r.reqs.push_back_unlocked(q);
        L.unlock();
      }
      break;
    }
  }
}

inline void release_request(RankCtx& r, Request* q) {
  if (q->refcount.fetch_sub(1, std::memory_order_acq_rel) == 1)
    free_request_record(r, q);
}

inline std::uint64_t next_token(RankCtx& r) {
  return r.tokens.fetch_add(1, std::memory_order_relaxed);
}

inline int ceil_log2(int n) {
  int k = 0;
  while ((1 << k) < n) ++k;
  return k;
}

// Defined in progress.hpp.
int progress_pass(RankCtx& r, Vci& v);
void progress_global_round(RankCtx& r);
std::string stuck_diagnostic(RankCtx& r, const char* what);

// Blocking loop shared by wait/flush/collectives: guarded per-VCI progress,
// hybrid escalation to global rounds after `hybrid_threshold` consecutive
// empty polls, optional watchdog, and a yield every few empty polls so a
// single host core cannot starve the peer threads the predicate depends on.
template <typename Done, typename Extra>
void block_until(RankCtx& r, Vci& v, Done done, Extra extra, const char* what) {
  const Config& cfg = r.world->config();
  std::uint64_t fails = 0;
  std::uint32_t empty_streak = 0;
  const bool watchdog = cfg.watchdog.count() > 0;
  const auto deadline = std::chrono::steady_clock::now() + cfg.watchdog;
  for (;;) {
    int events = 0;
    bool ok;
    {
      ApiGuard g(r);
      VciGuard vg(r, v);
      events = progress_pass(r, v);
      ok = done();
    }
    if (!ok) events += extra();
    if (ok) return;
    if (events == 0) {
      ++fails;
      if (++empty_streak >= 8) {
        empty_streak = 0;
        std::this_thread::yield();
      }
      if (cfg.hybrid_threshold != kNoEscalation &&
          fails >= cfg.hybrid_threshold) {
        ApiGuard g(r);
        progress_global_round(r);
        fails = 0;
      }
      if (watchdog && std::chrono::steady_clock::now() > deadline)
        throw StuckError(stuck_diagnostic(r, what));
    } else {
      fails = 0;
      empty_streak = 0;
    }
  }
}

}  // namespace detail

}  // namespace mvci

#endif  // MVCI_RUNTIME_HPP
