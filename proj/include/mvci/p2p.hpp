// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-sided operations: eager and rendezvous sends, posted receives, waits,
// the dissemination barrier, and communicator/endpoint-set creation.

#ifndef MVCI_P2P_HPP
#define MVCI_P2P_HPP

#include <span>

#include "mvci/progress.hpp"
#include "mvci/runtime.hpp"

namespace mvci {
namespace detail {

struct SendRoute {
  std::int32_t stream_id = 0;
  std::int32_t env_rank = 0;  // sender's rank within the stream
  std::int32_t dst_node = 0;
  std::int32_t dst_ctx = 0;
  Vci* vci = nullptr;
};

// Eager sends complete at injection against the VCI's pre-completed
// lightweight request; rendezvous sends allocate a real request and park the
// payload until the receiver's CTS names a destination context.
inline Req isend_core(RankCtx& r, const SendRoute& rt, int tag,
                      const void* data, std::uint64_t len, bool sync) {
  const bool eager = !sync && len <= r.world->config().eager_threshold;
  instr::OpScope op(eager ? OpClass::IsendImm : OpClass::Isend);
  ApiGuard g(r);
  Vci& v = *rt.vci;
  VciGuard vg(r, v);
  if (eager) {
    WireMessage m;
    m.kind = MsgKind::Eager;
    m.env = Envelope{rt.stream_id, rt.env_rank, tag};
    m.dst_node = rt.dst_node;
    m.dst_ctx = rt.dst_ctx;
    if (len > 0) {
      const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
      m.payload.assign(p, p + len);
    }
    r.world->net().inject(r.node_id, v.context_id, m);
    v.lw_add(1);
    return Req(&r, &v.lw);
  }
  Request* q = alloc_request(r, v, ReqKind::Pt2pt);
  std::uint64_t token = next_token(r);
  RndvSend s;
  if (len > 0) {
    const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
    s.payload.assign(p, p + len);
  }
  s.req = q;
  v.pending_rndv.emplace(token, std::move(s));
  WireMessage m;
  m.kind = MsgKind::RndvRts;
  m.env = Envelope{rt.stream_id, rt.env_rank, tag};
  m.dst_node = rt.dst_node;
  m.dst_ctx = rt.dst_ctx;
  m.op_token = token;
  m.len = len;
  r.world->net().inject(r.node_id, v.context_id, m);
  return Req(&r, q);
}

inline Req irecv_core(RankCtx& r, Vci& v, const Envelope& pattern, void* buf,
                      std::uint64_t cap) {
  if (r.world->config().hints.no_any_source && pattern.rank == kAnySource)
    throw UsageFault("irecv: source wildcard banned by the no_any_source hint");
  instr::OpScope op(OpClass::Irecv);
  ApiGuard g(r);
  VciGuard vg(r, v);
  Request* q = alloc_request(r, v, ReqKind::Pt2pt);
  PostedRecv p;
  p.pattern = pattern;
  p.buf = static_cast<std::uint8_t*>(buf);
  p.cap = cap;
  p.req = q;
  if (auto m = v.mq.match_arrival_for(pattern)) {
    if (!m->rndv)
      complete_recv(p, m->env, m->payload.data(), m->payload.size());
    else
      send_cts(r, v, *m, p);
  } else {
    v.mq.push_posted(std::move(p));
  }
  return Req(&r, q);
}

inline Status status_of(const Request& q) {
  Status st;
  st.source = q.slot.source;
  st.tag = q.slot.tag;
  st.nbytes = q.slot.nbytes;
  st.truncated = q.slot.truncated;
  return st;
}

}  // namespace detail

inline Status Req::wait() {
  if (!rec_) throw UsageFault("wait: invalid request");
  RankCtx& r = *r_;
  if (rec_->kind == ReqKind::Lightweight) {
    instr::OpScope op(OpClass::WaitImm);
    Vci& v = r.pool.vci(rec_->vci_id);
    if (detail::mode_of(r) == CsMode::Global) {
      detail::ApiGuard g(r);
      v.lw_add(-1);
    } else {
      v.lw_add(-1);  // lock-free by design; the counter is diagnostic only
    }
    rec_ = nullptr;
    return Status{};
  }
  instr::OpScope op(OpClass::Wait);
  Request* q = rec_;
  Vci& v = r.pool.vci(q->vci_id);
  bool freed_in_cs = false;
  detail::block_until(
      r, v,
      [&] {
        if (!q->is_complete()) return false;
        if (detail::mode_of(r) == CsMode::Global) {
          // Still inside the big lock: free without re-acquiring anything.
          detail::release_request(r, q);
          freed_in_cs = true;
        }
        return true;
      },
      [] { return 0; }, "wait");
  Status st = detail::status_of(*q);
  if (!freed_in_cs) detail::release_request(r, q);
  rec_ = nullptr;
  return st;
}

inline bool Req::test(Status* out) {
  if (!rec_) throw UsageFault("test: invalid request");
  RankCtx& r = *r_;
  if (rec_->kind == ReqKind::Lightweight) {
    instr::OpScope op(OpClass::Test);
    Vci& v = r.pool.vci(rec_->vci_id);
    if (detail::mode_of(r) == CsMode::Global) {
      detail::ApiGuard g(r);
      v.lw_add(-1);
    } else {
      v.lw_add(-1);
    }
    rec_ = nullptr;
    if (out) *out = Status{};
    return true;
  }
  instr::OpScope op(OpClass::Test);
  Request* q = rec_;
  Vci& v = r.pool.vci(q->vci_id);
  bool done = false;
  bool freed_in_cs = false;
  {
    detail::ApiGuard g(r);
    detail::VciGuard vg(r, v);
    if (!q->is_complete()) detail::progress_pass(r, v);
    done = q->is_complete();
    if (done && detail::mode_of(r) == CsMode::Global) {
      detail::release_request(r, q);
      freed_in_cs = true;
    }
  }
  if (!done) return false;
  if (out) *out = detail::status_of(*q);
  if (!freed_in_cs) detail::release_request(r, q);
  rec_ = nullptr;
  return true;
}

inline void waitall(std::span<Req> rs) {
  for (Req& q : rs)
    if (q.valid()) q.wait();
}

// ---------------------------------------------------------------------------
// Communicator operations.

inline Req Comm::isend(int dst, int tag, const void* data, std::uint64_t len) {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("isend: communicator already freed");
  if (dst < 0 || dst >= c.size()) throw UsageFault("isend: bad destination");
  detail::SendRoute rt;
  rt.stream_id = c.id;
  rt.env_rank = c.my_rank;
  rt.dst_node = c.members[static_cast<std::size_t>(dst)];
  rt.dst_ctx = c.peer_ctx[static_cast<std::size_t>(dst)];
  rt.vci = &r_->pool.vci(c.vci_id);
  return detail::isend_core(*r_, rt, tag, data, len, false);
}

inline Req Comm::issend(int dst, int tag, const void* data, std::uint64_t len) {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("issend: communicator already freed");
  if (dst < 0 || dst >= c.size()) throw UsageFault("issend: bad destination");
  detail::SendRoute rt;
  rt.stream_id = c.id;
  rt.env_rank = c.my_rank;
  rt.dst_node = c.members[static_cast<std::size_t>(dst)];
  rt.dst_ctx = c.peer_ctx[static_cast<std::size_t>(dst)];
  rt.vci = &r_->pool.vci(c.vci_id);
  return detail::isend_core(*r_, rt, tag, data, len, true);
}

inline Req Comm::irecv(int src, int tag, void* buf, std::uint64_t cap) {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("irecv: communicator already freed");
  if (src != kAnySource && (src < 0 || src >= c.size()))
    throw UsageFault("irecv: bad source");
  Envelope pattern{c.id, src, tag};
  return detail::irecv_core(*r_, r_->pool.vci(c.vci_id), pattern, buf, cap);
}

inline Status Comm::send(int dst, int tag, const void* data, std::uint64_t len) {
  return isend(dst, tag, data, len).wait();
}

inline Status Comm::recv(int src, int tag, void* buf, std::uint64_t cap) {
  return irecv(src, tag, buf, cap).wait();
}

// Dissemination barrier on the communicator's collective stream (id + 1);
// user-stream wildcards can never match these messages.
inline void Comm::barrier() {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("barrier: communicator already freed");
  std::uint32_t gen = c.coll_seq++;
  if (c.size() == 1) return;
  instr::OpScope op(OpClass::Coll);
  Vci& v = r_->pool.vci(c.vci_id);
  int n = c.size(), me = c.my_rank;
  int rounds = detail::ceil_log2(n);
  for (int k = 0; k < rounds; ++k) {
    int to = (me + (1 << k)) % n;
    int from = ((me - (1 << k)) % n + n) % n;
    int tag = static_cast<int>((gen % (1u << 24)) * 64 + static_cast<std::uint32_t>(k));
    detail::SendRoute rt;
    rt.stream_id = c.id + 1;
    rt.env_rank = me;
    rt.dst_node = c.members[static_cast<std::size_t>(to)];
    rt.dst_ctx = c.peer_ctx[static_cast<std::size_t>(to)];
    rt.vci = &v;
    std::uint8_t token = 0, got = 0;
    Req s = detail::isend_core(*r_, rt, tag, &token, 1, false);
    Envelope pattern{c.id + 1, from, tag};
    Req rv = detail::irecv_core(*r_, v, pattern, &got, 1);
    rv.wait();
    s.wait();
  }
}

inline Comm Comm::create_group(const std::vector<int>& group) {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("create_group: communicator already freed");
  instr::OpScope op(OpClass::Coll);
  std::uint32_t seq = c.coll_seq;  // barrier() below consumes this slot
  int my_pos = -1;
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == c.my_rank) my_pos = static_cast<int>(i);

  std::int32_t vci_id = -1;
  std::int32_t my_ctx = -1;
  if (my_pos >= 0) {
    vci_id = r_->pool.acquire();
    my_ctx = r_->pool.vci(vci_id).context_id;
  }
  bytes blob(8);
  std::memcpy(blob.data(), &my_pos, 4);
  std::memcpy(blob.data() + 4, &my_ctx, 4);
  World::ExKey key{c.id, static_cast<std::int64_t>(seq), 2};
  World& w = *r_->world;
  std::int32_t new_id =
      w.exchange_write(key, c.my_rank, c.size(), std::move(blob), true);
  barrier();
  std::vector<bytes> slots = w.exchange_read(key, c.size());
  if (my_pos < 0) return Comm{};

  auto rec = std::make_unique<CommRec>();
  rec->id = new_id;
  rec->my_rank = my_pos;
  rec->vci_id = vci_id;
  rec->members.resize(group.size());
  rec->peer_ctx.resize(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    int parent_rank = group[i];
    rec->members[i] = c.members[static_cast<std::size_t>(parent_rank)];
    std::int32_t ctx;
    std::memcpy(&ctx, slots[static_cast<std::size_t>(parent_rank)].data() + 4, 4);
    rec->peer_ctx[i] = ctx;
  }
  CommRec* raw = rec.get();
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    r_->comms.emplace(new_id, std::move(rec));
  }
  return Comm(r_, raw);
}

inline Comm Comm::dup() {
  std::vector<int> all(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return create_group(all);
}

inline void Comm::free() {
  CommRec& c = *rec_;
  if (c.freed) throw UsageFault("free: communicator already freed");
  if (r_->world_comm == &c)
    throw UsageFault("free: the world communicator cannot be freed");
  barrier();  // quiesce user traffic on this stream
  {
    detail::ApiGuard g(*r_);
    Vci& v = r_->pool.vci(c.vci_id);
    detail::VciGuard vg(*r_, v);
    detail::progress_pass(*r_, v);
  }
  c.freed = true;
  std::int32_t vci_id = c.vci_id;
  std::int32_t id = c.id;
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    r_->comms.erase(id);
  }
  r_->pool.release(vci_id);
  rec_ = nullptr;
}

// ---------------------------------------------------------------------------
// Endpoint sets: per-thread communication streams inside one stream id.

inline EpSet create_endpoints(Comm parent, int per_rank) {
  if (per_rank < 1) throw UsageFault("create_endpoints: per_rank must be >= 1");
  CommRec& c = *parent.rec();
  RankCtx& r = *parent.rank_ctx();
  instr::OpScope op(OpClass::Coll);
  std::uint32_t seq = c.coll_seq;

  std::vector<std::int32_t> my_vcis(static_cast<std::size_t>(per_rank));
  bytes blob(static_cast<std::size_t>(per_rank) * 4);
  for (int e = 0; e < per_rank; ++e) {
    my_vcis[static_cast<std::size_t>(e)] = r.pool.acquire();
    std::int32_t ctx = r.pool.vci(my_vcis[static_cast<std::size_t>(e)]).context_id;
    std::memcpy(blob.data() + 4 * e, &ctx, 4);
  }
  World::ExKey key{c.id, static_cast<std::int64_t>(seq), 4};
  World& w = *r.world;
  std::int32_t id = w.exchange_write(key, c.my_rank, c.size(), std::move(blob), true);
  parent.barrier();
  std::vector<bytes> slots = w.exchange_read(key, c.size());

  auto rec = std::make_unique<EpSetRec>();
  rec->id = id;
  rec->per_rank = per_rank;
  rec->rank_members = c.members;
  rec->my_rank = c.my_rank;
  rec->my_vcis = std::move(my_vcis);
  rec->ep_ctx.resize(static_cast<std::size_t>(c.size()) * per_rank);
  for (int g = 0; g < c.size(); ++g)
    for (int e = 0; e < per_rank; ++e) {
      std::int32_t ctx;
      std::memcpy(&ctx, slots[static_cast<std::size_t>(g)].data() + 4 * e, 4);
      rec->ep_ctx[static_cast<std::size_t>(g * per_rank + e)] = ctx;
    }
  rec->parent_comm_id = c.id;
  EpSetRec* raw = rec.get();
  {
    std::lock_guard<std::mutex> g(r.obj_mu);
    r.eps.emplace(id, std::move(rec));
  }
  return EpSet(&r, raw);
}

inline Req Endpoint::isend(int dst_ep, int tag, const void* data,
                           std::uint64_t len) {
  EpSetRec& e = *rec_;
  if (e.freed) throw UsageFault("isend: endpoint set already freed");
  if (dst_ep < 0 || dst_ep >= e.total())
    throw UsageFault("isend: bad destination endpoint");
  detail::SendRoute rt;
  rt.stream_id = e.id;
  rt.env_rank = ep_rank();
  rt.dst_node = e.rank_members[static_cast<std::size_t>(dst_ep / e.per_rank)];
  rt.dst_ctx = e.ep_ctx[static_cast<std::size_t>(dst_ep)];
  rt.vci = &r_->pool.vci(vci());
  return detail::isend_core(*r_, rt, tag, data, len, false);
}

inline Req Endpoint::irecv(int src_ep, int tag, void* buf, std::uint64_t cap) {
  EpSetRec& e = *rec_;
  if (e.freed) throw UsageFault("irecv: endpoint set already freed");
  if (src_ep != kAnySource && (src_ep < 0 || src_ep >= e.total()))
    throw UsageFault("irecv: bad source endpoint");
  Envelope pattern{e.id, src_ep, tag};
  return detail::irecv_core(*r_, r_->pool.vci(vci()), pattern, buf, cap);
}

inline void EpSet::free() {
  EpSetRec& e = *rec_;
  if (e.freed) throw UsageFault("free: endpoint set already freed");
  CommRec* parent = nullptr;
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    auto it = r_->comms.find(e.parent_comm_id);
    if (it != r_->comms.end()) parent = it->second.get();
  }
  // Collective free: synchronize over the parent before teardown.
  if (parent) Comm(r_, parent).barrier();
  for (std::int32_t vid : e.my_vcis) {
    detail::ApiGuard g(*r_);
    Vci& v = r_->pool.vci(vid);
    detail::VciGuard vg(*r_, v);
    detail::progress_pass(*r_, v);
  }
  e.freed = true;
  std::vector<std::int32_t> vcis = e.my_vcis;
  std::int32_t id = e.id;
  {
    std::lock_guard<std::mutex> g(r_->obj_mu);
    r_->eps.erase(id);
  }
  for (std::int32_t vid : vcis) r_->pool.release(vid);
  rec_ = nullptr;
}

}  // namespace mvci

#endif  // MVCI_P2P_HPP
