// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Progress engine. A per-VCI pass drains that VCI's hardware context and
// dispatches what it finds; escalated global rounds sweep every active VCI
// with try-lock (one retry) plus the registered progress hooks, each behind
// its own hook-class lock.

#ifndef MVCI_PROGRESS_HPP
#define MVCI_PROGRESS_HPP

#include <algorithm>
#include <string>

#include "mvci/runtime.hpp"

namespace mvci {
namespace detail {

inline void complete_recv(PostedRecv& p, const Envelope& env,
                          const std::uint8_t* data, std::uint64_t len) {
  CompletionSlot slot;
  slot.source = env.rank;
  slot.tag = env.tag;
  std::uint64_t n = std::min(len, p.cap);
  if (data && n > 0) std::memcpy(p.buf, data, n);
  slot.nbytes = n;
  slot.truncated = n < len;
  p.req->finish(slot);
}

// Receiver side of the rendezvous handshake: file the destination buffer,
// then tell the sender which context to land the data on.
inline void send_cts(RankCtx& r, Vci& v, const UnexpectedMsg& m,
                     const PostedRecv& p) {
  std::uint64_t recv_token = next_token(r);
  RndvRecv rec;
  rec.buf = p.buf;
  rec.cap = p.cap;
  rec.req = p.req;
  // Stash the envelope for the eventual completion slot.
  rec.req->slot.source = m.env.rank;
  rec.req->slot.tag = m.env.tag;
  v.awaiting_data.emplace(recv_token, std::move(rec));

  WireMessage cts;
  cts.kind = MsgKind::RndvCts;
  cts.dst_node = m.src_node;
  cts.dst_ctx = m.src_ctx;
  cts.op_token = m.token;       // sender-side record
  cts.peer_token = recv_token;  // my record, echoed on the data message
  r.world->net().inject(r.node_id, v.context_id, cts);
}

inline void dispatch_message(RankCtx& r, Vci& v, WireMessage& m) {
  SimNetwork& net = r.world->net();
  switch (m.kind) {
    case MsgKind::Eager: {
      if (auto p = v.mq.match_receive_for(m.env)) {
        complete_recv(*p, m.env, m.payload.data(), m.payload.size());
      } else {
        UnexpectedMsg u;
        u.env = m.env;
        u.rndv = false;
        u.payload = std::move(m.payload);
        u.len = u.payload.size();
        v.mq.push_unexpected(std::move(u));
      }
      break;
    }
    case MsgKind::RndvRts: {
      UnexpectedMsg u;
      u.env = m.env;
      u.rndv = true;
      u.src_node = m.src_node;
      u.src_ctx = m.src_ctx;
      u.token = m.op_token;
      u.len = m.len;
      if (auto p = v.mq.match_receive_for(m.env)) {
        send_cts(r, v, u, *p);
      } else {
        v.mq.push_unexpected(std::move(u));
      }
      break;
    }
    case MsgKind::RndvCts: {
      auto it = v.pending_rndv.find(m.op_token);
      if (it == v.pending_rndv.end()) {
        r.stray_events.fetch_add(1, std::memory_order_relaxed);
        break;
      }
      WireMessage data;
      data.kind = MsgKind::RndvData;
      data.dst_node = m.src_node;
      data.dst_ctx = m.src_ctx;  // the context the receiver matched on
      data.op_token = m.peer_token;
      data.len = it->second.payload.size();
      data.payload = std::move(it->second.payload);

      CompletionSlot slot;
      slot.nbytes = data.len;
      Request* req = it->second.req;
      v.pending_rndv.erase(it);
      net.inject(r.node_id, v.context_id, data);
      req->finish(slot);
      break;
    }
    case MsgKind::RndvData: {
      auto it = v.awaiting_data.find(m.op_token);
      if (it == v.awaiting_data.end()) {
        r.stray_events.fetch_add(1, std::memory_order_relaxed);
        break;
      }
      RndvRecv& rec = it->second;
      CompletionSlot slot;
      slot.source = rec.req->slot.source;
      slot.tag = rec.req->slot.tag;
      std::uint64_t n = std::min<std::uint64_t>(m.payload.size(), rec.cap);
      if (n > 0) std::memcpy(rec.buf, m.payload.data(), n);
      slot.nbytes = n;
      slot.truncated = n < m.payload.size();
      Request* req = rec.req;
      v.awaiting_data.erase(it);
      req->finish(slot);
      break;
    }
    case MsgKind::RmaPut:
    case MsgKind::RmaGet:
    case MsgKind::RmaAcc:
    case MsgKind::RmaFetchOp: {
      // SoftwareRMA target side: apply against local memory and answer from
      // the context the request arrived on.
      CompletionEvent ev = net.apply_rma(r.node_id, m);
      net.inject(r.node_id, v.context_id, SimNetwork::make_reply(m, ev));
      break;
    }
    default:
      r.stray_events.fetch_add(1, std::memory_order_relaxed);
      break;
  }
}

// Launches the next queued ordered accumulate for (this rank -> target), if
// any. Caller holds the window VCI's lock.
inline void chain_advance(RankCtx& r, WinRec& w, int target) {
  WinRec::Chain& ch = w.chains[static_cast<std::size_t>(target)];
  if (ch.q.empty()) {
    ch.inflight = false;
    return;
  }
  WinRec::PendingAcc p = std::move(ch.q.front());
  ch.q.pop_front();
  WireMessage m;
  m.kind = p.fetch ? MsgKind::RmaFetchOp : MsgKind::RmaAcc;
  m.dst_node = w.members[static_cast<std::size_t>(target)];
  m.dst_ctx = w.peer_ctx[static_cast<std::size_t>(target)];
  m.win_id = w.id;
  m.target_rank = target;
  m.offset = p.offset;
  m.len = p.payload.size();
  m.acc_ordered = true;
  m.op_token = p.token;
  m.payload = std::move(p.payload);
  r.world->net().inject(r.node_id,
                        r.pool.vci(w.vci_id).context_id, m);
}

// Handles one completion event. Ordered events arrive on the window's own
// VCI whose lock the caller already holds; unordered acks touch only atomic
// counters and may be dispatched from any thread with no lock at all.
inline void dispatch_completion(RankCtx& r, CompletionEvent& ev) {
  WinRec* w = r.find_win(ev.win_id);
  if (!w) {
    r.stray_events.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  switch (ev.kind) {
    case CompletionEvent::Kind::RmaAck: {
      if (ev.target_rank >= 0)
        w->outstanding[static_cast<std::size_t>(ev.target_rank)].fetch_sub(
            1, std::memory_order_acq_rel);
      if (ev.acc_ordered) chain_advance(r, *w, ev.target_rank);
      break;
    }
    case CompletionEvent::Kind::RmaGetReply:
    case CompletionEvent::Kind::RmaFetchOpReply: {
      auto it = w->gets.find(ev.op_token);
      if (it != w->gets.end()) {
        GetRec rec = it->second;
        w->gets.erase(it);
        if (rec.fetch_dst) {
          std::memcpy(rec.fetch_dst, ev.payload.data(), 8);
        } else if (rec.dst) {
          std::memcpy(rec.dst, ev.payload.data(),
                      std::min<std::uint64_t>(ev.payload.size(), rec.len));
        }
        if (rec.target >= 0)
          w->outstanding[static_cast<std::size_t>(rec.target)].fetch_sub(
              1, std::memory_order_acq_rel);
        if (rec.chained) chain_advance(r, *w, rec.target);
      } else {
        r.stray_events.fetch_add(1, std::memory_order_relaxed);
      }
      break;
    }
    case CompletionEvent::Kind::Fault: {
      w->faults.fetch_add(1, std::memory_order_relaxed);
      if (ev.target_rank >= 0)
        w->outstanding[static_cast<std::size_t>(ev.target_rank)].fetch_sub(
            1, std::memory_order_acq_rel);
      if (ev.acc_ordered) chain_advance(r, *w, ev.target_rank);
      break;
    }
  }
}

// One pass over a VCI's context. Caller holds the VCI's lock (or the global
// lock). Returns the number of events dispatched.
inline int progress_pass(RankCtx& r, Vci& v) {
  PolledBatch batch = r.world->net().poll_context(
      r.node_id, v.context_id, r.world->config().poll_budget);
  for (WireMessage& m : batch.messages) dispatch_message(r, v, m);
  for (CompletionEvent& ev : batch.completions) dispatch_completion(r, ev);
  instr::on_vci_poll(batch.size());
  return static_cast<int>(batch.size());
}

// Escalated round: every active VCI via try-lock with one retry (skip if
// still busy; its owner is making progress anyway), then the hooks.
inline void progress_global_round(RankCtx& r) {
  const bool global = mode_of(r) == CsMode::Global;
  for (int i = 0; i < r.pool.count(); ++i) {
    Vci& v = r.pool.vci(i);
    if (!v.active.load(std::memory_order_relaxed)) continue;
    if (global) {
      progress_pass(r, v);
      continue;
    }
    if (v.lock.try_lock() || v.lock.try_lock()) {
      progress_pass(r, v);
      v.lock.unlock();
    }
  }
  std::vector<std::shared_ptr<Hook>> hooks;
  {
    std::lock_guard<std::mutex> g(r.hooks_mu);
    hooks = r.hooks;
  }
  for (auto& h : hooks) {
    h->guard.lock();
    h->fn();
    h->guard.unlock();
  }
  instr::on_global_round();
}

inline std::string stuck_diagnostic(RankCtx& r, const char* what) {
  std::ostringstream os;
  os << "stuck: rank " << r.node_id << " blocked in " << what
     << " past the watchdog budget;";
  for (int i = 0; i < r.pool.count(); ++i) {
    Vci& v = r.pool.vci(i);
    if (!v.active.load(std::memory_order_relaxed)) continue;
    std::size_t in = r.world->net().pending_incoming(r.node_id, v.context_id);
    std::size_t comp =
        r.world->net().pending_completions(r.node_id, v.context_id);
    bool sampled = v.lock.try_lock();
    std::size_t posted = v.mq.posted_count();
    std::size_t unexpected = v.mq.unexpected_count();
    std::size_t rndv = v.pending_rndv.size();
    std::size_t awaiting = v.awaiting_data.size();
    if (sampled) v.lock.unlock();
    os << " vci " << i << ": net_in=" << in << " net_comp=" << comp
       << " posted=" << posted << " unexpected=" << unexpected
       << " rndv=" << rndv << " awaiting=" << awaiting
       << (sampled ? "" : " (busy)") << ";";
  }
  return os.str();
}

}  // namespace detail

inline void Rank::progress_vci(std::int32_t vci_id) {
  if (vci_id < 0 || vci_id >= r_->pool.count())
    throw UsageFault("progress_vci: vci out of range");
  instr::OpScope op(OpClass::Progress);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(vci_id);
  detail::VciGuard vg(*r_, v);
  detail::progress_pass(*r_, v);
}

inline void Rank::progress_global() {
  instr::OpScope op(OpClass::Progress);
  detail::ApiGuard g(*r_);
  detail::progress_global_round(*r_);
}

inline void Comm::progress() {
  instr::OpScope op(OpClass::Progress);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(rec_->vci_id);
  detail::VciGuard vg(*r_, v);
  detail::progress_pass(*r_, v);
}

inline void Win::progress() {
  instr::OpScope op(OpClass::Progress);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(rec_->vci_id);
  detail::VciGuard vg(*r_, v);
  detail::progress_pass(*r_, v);
}

inline void Endpoint::progress() {
  instr::OpScope op(OpClass::Progress);
  detail::ApiGuard g(*r_);
  Vci& v = r_->pool.vci(vci());
  detail::VciGuard vg(*r_, v);
  detail::progress_pass(*r_, v);
}

// Final drain, teardown accounting, and the instrumentation report.
inline Report World::finalize() {
  Report rep;
  for (auto& rp : ranks_) {
    RankCtx& r = *rp;
    RankReport rr;
    rr.node = r.node_id;
    {
      detail::ApiGuard g(r);
      for (int i = 0; i < r.pool.count(); ++i) {
        Vci& v = r.pool.vci(i);
        if (!v.active.load(std::memory_order_relaxed)) continue;
        detail::VciGuard vg(r, v);
        detail::progress_pass(r, v);
        rr.vcis_torn_down++;
      }
    }
    rr.pool_size = r.reqs.size();
    rr.pool_free = r.reqs.free_count();
    rr.cached = r.pool.cached_requests();
    rr.live = rr.pool_size - rr.pool_free - rr.cached;
    rr.fallback_users = r.pool.fallback_users();
    rr.stray_events = r.stray_events.load(std::memory_order_relaxed);
    if (rr.live > 0) {
      rep.clean = false;
      rep.diagnostics.push_back(
          "rank " + std::to_string(r.node_id) + ": " +
          std::to_string(rr.live) + " request(s) never released");
    }
    if (rr.stray_events > 0) {
      rep.clean = false;
      rep.diagnostics.push_back("rank " + std::to_string(r.node_id) + ": " +
                                std::to_string(rr.stray_events) +
                                " stray event(s)");
    }
    rep.ranks.push_back(rr);
  }
  rep.counters = instr::diff(instr::merged_snapshot(), baseline_);
  rep.net = net_->totals();
  rep.acc_overlap_flags = net_->acc_overlap_flags();
  if (rep.net.injected !=
      rep.net.delivered_incoming + rep.net.delivered_completions) {
    rep.clean = false;
    rep.diagnostics.push_back("transport: injected != delivered");
  }
  finalized_ = true;
  return rep;
}

}  // namespace mvci

#endif  // MVCI_PROGRESS_HPP
