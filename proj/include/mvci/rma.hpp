// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// One-sided operations. Every window binds one VCI; puts, gets, and ordered
// accumulates ride that VCI's context and take exactly one VCI lock to
// initiate. Unordered accumulates bypass the VCI entirely: they inject on a
// per-thread lane context and complete through record-less atomic counters,
// so eight threads can initiate on one window without sharing a lock.

#ifndef MVCI_RMA_HPP
#define MVCI_RMA_HPP

#include "mvci/p2p.hpp"
#include "mvci/progress.hpp"
#include "mvci/runtime.hpp"

namespace mvci {
namespace detail {

inline int& lane_rotor() {
  thread_local int rotor = static_cast<int>(
      std::hash<std::thread::id>{}(std::this_thread::get_id()) & 0x7fffffff);
  return rotor;
}

// Drains completion events from every lane context the window has used.
// Lock-free for unordered acks; anything else re-dispatches under the owning
// window's VCI lock.
inline int poll_lanes(RankCtx& r, WinRec& w) {
  int n = 0;
  std::vector<CompletionEvent> evs;
  for (int lane = 0; lane < w.lane_count; ++lane) {
    if (!w.lane_used[lane].load(std::memory_order_relaxed)) continue;
    n += r.world->net().poll_completions(r.node_id, lane,
                                         r.world->config().poll_budget, evs);
  }
  for (CompletionEvent& ev : evs) {
    if (ev.kind == CompletionEvent::Kind::RmaAck && !ev.acc_ordered) {
      WinRec* t = r.find_win(ev.win_id);
      if (!t) {
        r.stray_events.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      if (ev.target_rank >= 0)
        t->outstanding[static_cast<std::size_t>(ev.target_rank)].fetch_sub(
            1, std::memory_order_acq_rel);
      continue;
    }
    if (ev.kind == CompletionEvent::Kind::Fault && !ev.acc_ordered) {
      WinRec* t = r.find_win(ev.win_id);
      if (!t) {
        r.stray_events.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      t->faults.fetch_add(1, std::memory_order_relaxed);
      if (ev.target_rank >= 0)
        t->outstanding[static_cast<std::size_t>(ev.target_rank)].fetch_sub(
            1, std::memory_order_acq_rel);
      continue;
    }
    // Ordered or reply-carrying event that happened to share a lane context
    // with a window VCI: dispatch it under that window's lock.
    WinRec* t = r.find_win(ev.win_id);
    if (!t) {
      r.stray_events.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    ApiGuard g(r);
    Vci& v = r.pool.vci(t->vci_id);
    VciGuard vg(r, v);
    dispatch_completion(r, ev);
  }
  return n;
}

}  // namespace detail

inline Win win_create(Comm comm, void* base, std::uint64_t extent,
                      AccOrdering ordering) {
  CommRec& c = *comm.rec();
  RankCtx& r = *comm.rank_ctx();
  World& w = *r.world;
  instr::OpScope op(OpClass::Coll);
  std::uint32_t seq = c.coll_seq;

  std::int32_t vci_id = r.pool.acquire();
  std::int32_t my_ctx = r.pool.vci(vci_id).context_id;
  bytes blob(12);
  std::memcpy(blob.data(), &my_ctx, 4);
  std::memcpy(blob.data() + 4, &extent, 8);
  World::ExKey key{c.id, static_cast<std::int64_t>(seq), 3};
  std::int32_t id = w.exchange_write(key, c.my_rank, c.size(), std::move(blob), true);
  w.net().register_window(r.node_id, id, static_cast<std::uint8_t*>(base), extent);
  comm.barrier();  // all members registered before anyone can target them
  std::vector<bytes> slots = w.exchange_read(key, c.size());

  auto rec = std::make_unique<WinRec>();
  rec->id = id;
  rec->vci_id = vci_id;
  rec->ordering = ordering;
  rec->base = static_cast<std::uint8_t*>(base);
  rec->extent = extent;
  rec->members = c.members;
  rec->my_rank = c.my_rank;
  rec->comm_id = c.id;
  rec->peer_ctx.resize(slots.size());
  rec->peer_extent.resize(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    std::memcpy(&rec->peer_ctx[i], slots[i].data(), 4);
    std::memcpy(&rec->peer_extent[i], slots[i].data() + 4, 8);
  }
  rec->outstanding =
      std::make_unique<std::atomic<std::int64_t>[]>(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i)
    rec->outstanding[i].store(0, std::memory_order_relaxed);
  rec->chains.resize(slots.size());
  rec->lane_count = w.config().contexts;
  rec->lane_used = std::make_unique<std::atomic<bool>[]>(
      static_cast<std::size_t>(rec->lane_count));
  for (int i = 0; i < rec->lane_count; ++i)
    rec->lane_used[i].store(false, std::memory_order_relaxed);

  WinRec* raw = rec.get();
  {
    std::lock_guard<std::mutex> g(r.obj_mu);
    r.wins.emplace(id, std::move(rec));
  }
  return Win(&r, raw);
}

inline Win win_create(Comm comm, void* base, std::uint64_t extent) {
  const Config& cfg = comm.rank_ctx()->world->config();
  AccOrdering ord = cfg.hints.accumulate_ordering_none
                        ? AccOrdering::None
                        : cfg.default_acc_ordering;
  return win_create(comm, base, extent, ord);
}

namespace detail {

inline void check_target(const WinRec& w, int target) {
  if (w.freed) throw UsageFault("rma: window already freed");
  if (target < 0 || target >= static_cast<int>(w.members.size()))
    throw UsageFault("rma: target rank out of range");
}

// Local range check: out-of-range one-sided ops become fault events on this
// window, target memory untouched, no exception.
inline bool range_ok(WinRec& w, int target, std::uint64_t offset,
                     std::uint64_t len) {
  std::uint64_t ext = w.peer_extent[static_cast<std::size_t>(target)];
  if (offset + len > ext || offset + len < offset) {
    w.faults.fetch_add(1, std::memory_order_relaxed);
    return false;
  }
  return true;
}

}  // namespace detail

inline void Win::put(int target, std::uint64_t offset, const void* data,
                     std::uint64_t len) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  if (!detail::range_ok(w, target, offset, len)) return;
  instr::OpScope op(OpClass::Put);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(w.vci_id);
  detail::VciGuard vg(*r_, v);
  w.outstanding[static_cast<std::size_t>(target)].fetch_add(
      1, std::memory_order_acq_rel);
  WireMessage m;
  m.kind = MsgKind::RmaPut;
  m.dst_node = w.members[static_cast<std::size_t>(target)];
  m.dst_ctx = w.peer_ctx[static_cast<std::size_t>(target)];
  m.win_id = w.id;
  m.target_rank = target;
  m.offset = offset;
  m.len = len;
  const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
  m.payload.assign(p, p + len);
  r_->world->net().inject(r_->node_id, v.context_id, m);
}

inline void Win::get(int target, std::uint64_t offset, void* dst,
                     std::uint64_t len) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  if (!detail::range_ok(w, target, offset, len)) return;
  instr::OpScope op(OpClass::Get);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(w.vci_id);
  detail::VciGuard vg(*r_, v);
  std::uint64_t token = detail::next_token(*r_);
  GetRec rec;
  rec.dst = static_cast<std::uint8_t*>(dst);
  rec.len = len;
  rec.target = target;
  w.gets.emplace(token, rec);
  w.outstanding[static_cast<std::size_t>(target)].fetch_add(
      1, std::memory_order_acq_rel);
  WireMessage m;
  m.kind = MsgKind::RmaGet;
  m.dst_node = w.members[static_cast<std::size_t>(target)];
  m.dst_ctx = w.peer_ctx[static_cast<std::size_t>(target)];
  m.win_id = w.id;
  m.target_rank = target;
  m.offset = offset;
  m.len = len;
  m.op_token = token;
  r_->world->net().inject(r_->node_id, v.context_id, m);
}

namespace detail {

// Shared unordered-accumulate initiation: no VCI lock, injection on `lane`.
inline void lane_accumulate(RankCtx& r, WinRec& w, int target,
                            std::uint64_t offset, const std::int64_t* addends,
                            std::uint64_t count, int lane) {
  ApiGuard g(r);
  w.lane_used[lane].store(true, std::memory_order_relaxed);
  w.outstanding[static_cast<std::size_t>(target)].fetch_add(
      1, std::memory_order_acq_rel);
  WireMessage m;
  m.kind = MsgKind::RmaAcc;
  m.dst_node = w.members[static_cast<std::size_t>(target)];
  m.dst_ctx = w.peer_ctx[static_cast<std::size_t>(target)];
  m.win_id = w.id;
  m.target_rank = target;
  m.offset = offset;
  m.len = count * 8;
  m.acc_ordered = false;
  const std::uint8_t* p = reinterpret_cast<const std::uint8_t*>(addends);
  m.payload.assign(p, p + count * 8);
  r.world->net().inject(r.node_id, lane, m);
}

}  // namespace detail

inline void Win::accumulate(int target, std::uint64_t offset,
                            const std::int64_t* addends, std::uint64_t count) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  if (!detail::range_ok(w, target, offset, count * 8)) return;
  instr::OpScope op(OpClass::Acc);
  if (w.ordering == AccOrdering::None) {
    int lane = (detail::lane_rotor()++ & 0x7fffffff) % w.lane_count;
    detail::lane_accumulate(*r_, w, target, offset, addends, count, lane);
    return;
  }
  Vci& v = r_->pool.vci(w.vci_id);
  WinRec::Chain& ch = w.chains[static_cast<std::size_t>(target)];
  WinRec::PendingAcc p;
  p.fetch = false;
  p.offset = offset;
  const std::uint8_t* src = reinterpret_cast<const std::uint8_t*>(addends);
  p.payload.assign(src, src + count * 8);
  // One ordered op per target in flight: initiation waits its turn on the
  // window VCI, so a single shared window serializes issuing threads.
  for (;;) {
    {
      detail::ApiGuard g(*r_);
      detail::VciGuard vg(*r_, v);
      if (!ch.inflight) {
        ch.inflight = true;
        w.outstanding[static_cast<std::size_t>(target)].fetch_add(
            1, std::memory_order_acq_rel);
        ch.q.push_front(std::move(p));
        detail::chain_advance(*r_, w, target);
        return;
      }
    }
    detail::block_until(
        *r_, v, [&] { return !ch.inflight; },
        [&] { return detail::poll_lanes(*r_, w); }, "accumulate");
  }
}

inline void Win::accumulate_via(const Endpoint& ep, int target,
                                std::uint64_t offset,
                                const std::int64_t* addends,
                                std::uint64_t count) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  if (!detail::range_ok(w, target, offset, count * 8)) return;
  instr::OpScope op(OpClass::Acc);
  int lane = r_->pool.vci(ep.vci()).context_id;
  detail::lane_accumulate(*r_, w, target, offset, addends, count, lane);
}

// Counts as an accumulate for ordering purposes; the reply needs the token
// table, so both orderings go through the window VCI.
inline void Win::fetch_op(int target, std::uint64_t offset,
                          std::int64_t operand, std::int64_t* result) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  if (!detail::range_ok(w, target, offset, 8)) return;
  instr::OpScope op(OpClass::FetchOp);
  Vci& v = r_->pool.vci(w.vci_id);
  const bool chained = w.ordering == AccOrdering::Ordered;
  if (chained) {
    WinRec::Chain& ch = w.chains[static_cast<std::size_t>(target)];
    // Same claim-or-wait discipline as ordered accumulate.
    for (;;) {
      {
        detail::ApiGuard g(*r_);
        detail::VciGuard vg(*r_, v);
        if (!ch.inflight) {
          ch.inflight = true;
          std::uint64_t token = detail::next_token(*r_);
          GetRec rec;
          rec.fetch_dst = result;
          rec.len = 8;
          rec.target = target;
          rec.chained = true;
          w.gets.emplace(token, rec);
          w.outstanding[static_cast<std::size_t>(target)].fetch_add(
              1, std::memory_order_acq_rel);
          WinRec::PendingAcc p;
          p.fetch = true;
          p.offset = offset;
          p.token = token;
          p.payload.resize(8);
          std::memcpy(p.payload.data(), &operand, 8);
          ch.q.push_front(std::move(p));
          detail::chain_advance(*r_, w, target);
          return;
        }
      }
      detail::block_until(
          *r_, v, [&] { return !ch.inflight; },
          [&] { return detail::poll_lanes(*r_, w); }, "fetch_op");
    }
  }
  detail::ApiGuard g(*r_);
  detail::VciGuard vg(*r_, v);
  std::uint64_t token = detail::next_token(*r_);
  GetRec rec;
  rec.fetch_dst = result;
  rec.len = 8;
  rec.target = target;
  rec.chained = false;
  w.gets.emplace(token, rec);
  w.outstanding[static_cast<std::size_t>(target)].fetch_add(
      1, std::memory_order_acq_rel);
  WireMessage m;
  m.kind = MsgKind::RmaFetchOp;
  m.dst_node = w.members[static_cast<std::size_t>(target)];
  m.dst_ctx = w.peer_ctx[static_cast<std::size_t>(target)];
  m.win_id = w.id;
  m.target_rank = target;
  m.offset = offset;
  m.len = 8;
  m.op_token = token;
  m.payload.resize(8);
  std::memcpy(m.payload.data(), &operand, 8);
  r_->world->net().inject(r_->node_id, v.context_id, m);
}

inline void Win::flush(int target) {
  WinRec& w = *rec_;
  detail::check_target(w, target);
  instr::OpScope op(OpClass::Flush);
  Vci& v = r_->pool.vci(w.vci_id);
  std::atomic<std::int64_t>& out = w.outstanding[static_cast<std::size_t>(target)];
  detail::block_until(
      *r_, v, [&] { return out.load(std::memory_order_acquire) == 0; },
      [&] { return detail::poll_lanes(*r_, w); }, "flush");
}

inline void Win::flush_all() {
  WinRec& w = *rec_;
  if (w.freed) throw UsageFault("flush_all: window already freed");
  instr::OpScope op(OpClass::Flush);
  Vci& v = r_->pool.vci(w.vci_id);
  detail::block_until(
      *r_, v, [&] { return w.total_outstanding() == 0; },
      [&] { return detail::poll_lanes(*r_, w); }, "flush_all");
}

inline void Win::free() {
  WinRec& w = *rec_;
  if (w.freed) throw UsageFault("free: window already freed");
  flush_all();
  CommRec* comm = nullptr;
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    auto it = r_->comms.find(w.comm_id);
    if (it != r_->comms.end()) comm = it->second.get();
  }
  // All members quiesce before memory is deregistered anywhere.
  if (comm) Comm(r_, comm).barrier();
  r_->world->net().deregister_window(r_->node_id, w.id);
  w.freed = true;
  std::int32_t vci_id = w.vci_id;
  std::int32_t id = w.id;
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    r_->wins.erase(id);
  }
  r_->pool.release(vci_id);
  rec_ = nullptr;
}

}  // namespace mvci

#endif  // MVCI_RMA_HPP
