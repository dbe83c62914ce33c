// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Simulated multi-context network. Each node owns `contexts` independent
// hardware contexts; injecting on a context holds that context's injection
// lock, burns injection_cost work units, and advances the context's virtual
// busy-tick clock by the same amount. Throughput measurements in this project
// are defined on those tick clocks: contexts accrue ticks independently, so
// aggregate capacity scales with the number of contexts kept busy regardless
// of how many host cores the test machine has.

#ifndef MVCI_TRANSPORT_HPP
#define MVCI_TRANSPORT_HPP

#include <atomic>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvci/common.hpp"
#include "mvci/config.hpp"
#include "mvci/wire.hpp"

namespace mvci {

struct TransportConfig {
  int contexts = 16;
  std::uint32_t injection_cost = 200;
  RmaMode rma_mode = RmaMode::HardwareRMA;
  bool debug_checks = true;
};

struct PolledBatch {
  std::vector<WireMessage> messages;
  std::vector<CompletionEvent> completions;
  std::size_t size() const { return messages.size() + completions.size(); }
};

// Network-wide conservation counters; at quiesce every injected message has
// been delivered exactly once and every delivery eventually drained.
struct NetTotals {
  std::uint64_t injected = 0;
  std::uint64_t delivered_incoming = 0;
  std::uint64_t delivered_completions = 0;
  std::uint64_t drained_incoming = 0;
  std::uint64_t drained_completions = 0;
  std::uint64_t faults = 0;
};

class SimNetwork {
  struct Context {
    std::mutex injection_lock;
    std::atomic<std::uint64_t> busy_ticks{0};
    std::atomic<std::uint64_t> injected{0};
    std::atomic<std::uint64_t> lock_contended{0};
    std::mutex in_mu;
    std::deque<WireMessage> incoming;
    std::mutex comp_mu;
    std::deque<CompletionEvent> completions;
  };

  struct WinMem {
    std::uint8_t* base = nullptr;
    std::uint64_t extent = 0;
    std::unique_ptr<std::mutex> apply_mu = std::make_unique<std::mutex>();
  };

  struct ActiveAcc {
    std::int32_t win_id;
    std::uint8_t* lo;
    std::uint8_t* hi;
  };

  struct Node {
    std::vector<std::unique_ptr<Context>> ctx;
    std::mutex win_mu;
    std::unordered_map<std::int32_t, WinMem> windows;
    std::mutex acc_dbg_mu;
    std::vector<ActiveAcc> active_accs;
  };

 public:
  SimNetwork(int nodes, TransportConfig cfg) : cfg_(cfg) {
    if (nodes < 1) throw UsageFault("transport: need at least one node");
    if (cfg.contexts < 1) throw UsageFault("transport: need at least one context");
    nodes_.reserve(static_cast<std::size_t>(nodes));
    for (int n = 0; n < nodes; ++n) {
      auto node = std::make_unique<Node>();
      for (int c = 0; c < cfg.contexts; ++c)
        node->ctx.push_back(std::make_unique<Context>());
      nodes_.push_back(std::move(node));
    }
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int context_count() const { return cfg_.contexts; }
  const TransportConfig& config() const { return cfg_; }

  // Injects one message from (src_node, src_ctx). Holds the source context's
  // injection lock for the duration of the simulated send, then routes:
  // data-class messages to the destination's incoming queue, completion-class
  // messages to its completions queue. In HardwareRMA mode one-sided ops are
  // applied here and their completion goes straight back to the initiator.
  void inject(int src_node, int src_ctx, WireMessage msg) {
    check_addr(src_node, src_ctx, "inject source");
    if (msg.dst_node < 0 || msg.dst_node >= node_count())
      throw RoutingError("inject: unknown destination node " +
                         std::to_string(msg.dst_node));
    if (msg.dst_ctx < 0 || msg.dst_ctx >= cfg_.contexts)
      throw RoutingError("inject: destination context out of range");
    msg.src_node = src_node;
    msg.src_ctx = src_ctx;

    Context& c = *nodes_[static_cast<std::size_t>(src_node)]
                      ->ctx[static_cast<std::size_t>(src_ctx)];
    if (!c.injection_lock.try_lock()) {
      c.lock_contended.fetch_add(1, std::memory_order_relaxed);
      c.injection_lock.lock();
    }
    spin_work(cfg_.injection_cost);
    c.busy_ticks.fetch_add(cfg_.injection_cost, std::memory_order_relaxed);
    c.injected.fetch_add(1, std::memory_order_relaxed);
    injected_.fetch_add(1, std::memory_order_relaxed);

    bool hw_rma = cfg_.rma_mode == RmaMode::HardwareRMA &&
                  (msg.kind == MsgKind::RmaPut || msg.kind == MsgKind::RmaGet ||
                   msg.kind == MsgKind::RmaAcc || msg.kind == MsgKind::RmaFetchOp);
    if (hw_rma) {
      CompletionEvent ev = apply_rma(msg.dst_node, msg);
      c.injection_lock.unlock();
      deliver_completion(src_node, src_ctx, std::move(ev));
      return;
    }
    if (is_completion_kind(msg.kind)) {
      CompletionEvent ev = to_completion(msg);
      int dn = msg.dst_node, dc = msg.dst_ctx;
      c.injection_lock.unlock();
      deliver_completion(dn, dc, std::move(ev));
      return;
    }
    // Enqueue under the injection lock: injection order on a context is
    // delivery order, which is what nonovertaking rests on.
    {
      Context& d = *nodes_[static_cast<std::size_t>(msg.dst_node)]
                        ->ctx[static_cast<std::size_t>(msg.dst_ctx)];
      std::lock_guard<std::mutex> g(d.in_mu);
      d.incoming.push_back(std::move(msg));
    }
    delivered_incoming_.fetch_add(1, std::memory_order_relaxed);
    c.injection_lock.unlock();
  }

  // Drains up to budget entries, incoming first, then completions.
  PolledBatch poll_context(int node, int ctx, int budget) {
    check_addr(node, ctx, "poll_context");
    PolledBatch out;
    if (budget <= 0) return out;
    Context& c = *nodes_[static_cast<std::size_t>(node)]
                      ->ctx[static_cast<std::size_t>(ctx)];
    {
      std::lock_guard<std::mutex> g(c.in_mu);
      while (!c.incoming.empty() &&
             out.messages.size() < static_cast<std::size_t>(budget)) {
        out.messages.push_back(std::move(c.incoming.front()));
        c.incoming.pop_front();
      }
    }
    drained_incoming_.fetch_add(out.messages.size(), std::memory_order_relaxed);
    int left = budget - static_cast<int>(out.messages.size());
    if (left > 0) {
      std::lock_guard<std::mutex> g(c.comp_mu);
      while (!c.completions.empty() &&
             out.completions.size() < static_cast<std::size_t>(left)) {
        out.completions.push_back(std::move(c.completions.front()));
        c.completions.pop_front();
      }
    }
    drained_completions_.fetch_add(out.completions.size(),
                                   std::memory_order_relaxed);
    return out;
  }

  // Completion-only drain used by the unordered-accumulate lane path; never
  // touches the incoming queue, so it is safe from any thread.
  int poll_completions(int node, int ctx, int budget,
                       std::vector<CompletionEvent>& out) {
    check_addr(node, ctx, "poll_completions");
    Context& c = *nodes_[static_cast<std::size_t>(node)]
                      ->ctx[static_cast<std::size_t>(ctx)];
    int n = 0;
    {
      std::lock_guard<std::mutex> g(c.comp_mu);
      while (!c.completions.empty() && n < budget) {
        out.push_back(std::move(c.completions.front()));
        c.completions.pop_front();
        ++n;
      }
    }
    drained_completions_.fetch_add(static_cast<std::uint64_t>(n),
                                   std::memory_order_relaxed);
    return n;
  }

  void register_window(int node, std::int32_t win_id, std::uint8_t* base,
                       std::uint64_t extent) {
    check_addr(node, 0, "register_window");
    Node& nd = *nodes_[static_cast<std::size_t>(node)];
    std::lock_guard<std::mutex> g(nd.win_mu);
    if (nd.windows.count(win_id))
      throw UsageFault("register_window: duplicate window id");
    WinMem wm;
    wm.base = base;
    wm.extent = extent;
    nd.windows.emplace(win_id, std::move(wm));
  }

  void deregister_window(int node, std::int32_t win_id) {
    Node& nd = *nodes_[static_cast<std::size_t>(node)];
    std::lock_guard<std::mutex> g(nd.win_mu);
    nd.windows.erase(win_id);
  }

  // Applies a one-sided op against target-node memory and returns the event
  // owed to the initiator. Unknown window and out-of-range become Fault
  // events, never crashes; the initiator's bookkeeping decides what to do.
  CompletionEvent apply_rma(int node, const WireMessage& m) {
    CompletionEvent ev;
    ev.op_token = m.op_token;
    ev.win_id = m.win_id;
    ev.target_rank = m.target_rank;
    ev.acc_ordered = m.acc_ordered;

    std::uint8_t* base = nullptr;
    std::uint64_t extent = 0;
    std::mutex* apply_mu = nullptr;
    {
      Node& nd = *nodes_[static_cast<std::size_t>(node)];
      std::lock_guard<std::mutex> g(nd.win_mu);
      auto it = nd.windows.find(m.win_id);
      if (it != nd.windows.end()) {
        base = it->second.base;
        extent = it->second.extent;
        apply_mu = it->second.apply_mu.get();
      }
    }
    if (!base) {
      ev.kind = CompletionEvent::Kind::Fault;
      ev.fault = FaultKind::UnknownWindow;
      faults_.fetch_add(1, std::memory_order_relaxed);
      return ev;
    }
    if (m.offset + m.len > extent || m.offset + m.len < m.offset) {
      ev.kind = CompletionEvent::Kind::Fault;
      ev.fault = FaultKind::OutOfRange;
      faults_.fetch_add(1, std::memory_order_relaxed);
      return ev;
    }

    switch (m.kind) {
      case MsgKind::RmaPut: {
        std::lock_guard<std::mutex> g(*apply_mu);
        std::memcpy(base + m.offset, m.payload.data(), m.payload.size());
        ev.kind = CompletionEvent::Kind::RmaAck;
        break;
      }
      case MsgKind::RmaGet: {
        ev.payload.resize(m.len);
        std::lock_guard<std::mutex> g(*apply_mu);
        std::memcpy(ev.payload.data(), base + m.offset, m.len);
        ev.kind = CompletionEvent::Kind::RmaGetReply;
        break;
      }
      case MsgKind::RmaAcc: {
        DebugAccScope dbg(this, node, m.win_id, base + m.offset,
                          base + m.offset + m.len);
        std::lock_guard<std::mutex> g(*apply_mu);
        const std::int64_t* add =
            reinterpret_cast<const std::int64_t*>(m.payload.data());
        std::int64_t* dst = reinterpret_cast<std::int64_t*>(base + m.offset);
        for (std::uint64_t i = 0; i < m.len / 8; ++i) dst[i] += add[i];
        ev.kind = CompletionEvent::Kind::RmaAck;
        break;
      }
      case MsgKind::RmaFetchOp: {
        std::int64_t operand;
        std::memcpy(&operand, m.payload.data(), 8);
        std::int64_t old;
        {
          std::lock_guard<std::mutex> g(*apply_mu);
          std::int64_t* cell = reinterpret_cast<std::int64_t*>(base + m.offset);
          old = *cell;
          *cell += operand;
        }
        ev.payload.resize(8);
        std::memcpy(ev.payload.data(), &old, 8);
        ev.kind = CompletionEvent::Kind::RmaFetchOpReply;
        break;
      }
      default:
        throw UsageFault("apply_rma: not a one-sided op");
    }
    return ev;
  }

  // Wraps a completion event into the wire message a software target sends
  // back; the initiator's transport classifies it into completions.
  static WireMessage make_reply(const WireMessage& req, CompletionEvent ev) {
    WireMessage r;
    switch (ev.kind) {
      case CompletionEvent::Kind::RmaGetReply:
        r.kind = MsgKind::RmaGetReply;
        break;
      case CompletionEvent::Kind::RmaFetchOpReply:
        r.kind = MsgKind::RmaFetchOpReply;
        break;
      default:
        r.kind = MsgKind::RmaCompletionAck;
        break;
    }
    r.dst_node = req.src_node;
    r.dst_ctx = req.src_ctx;
    r.op_token = ev.op_token;
    r.win_id = ev.win_id;
    r.target_rank = ev.target_rank;
    r.acc_ordered = ev.acc_ordered;
    r.fault = ev.fault;
    r.payload = std::move(ev.payload);
    return r;
  }

  // Direct completion delivery; used for hardware-applied ops where the ack
  // is NIC-internal and costs no injection.
  void deliver_completion(int node, int ctx, CompletionEvent ev) {
    check_addr(node, ctx, "deliver_completion");
    Context& c = *nodes_[static_cast<std::size_t>(node)]
                      ->ctx[static_cast<std::size_t>(ctx)];
    if (ev.kind == CompletionEvent::Kind::Fault)
      delivered_faults_seen_.fetch_add(1, std::memory_order_relaxed);
    {
      std::lock_guard<std::mutex> g(c.comp_mu);
      c.completions.push_back(std::move(ev));
    }
    delivered_completions_.fetch_add(1, std::memory_order_relaxed);
  }

  std::uint64_t busy_ticks(int node, int ctx) const {
    check_addr(node, ctx, "busy_ticks");
    return nodes_[static_cast<std::size_t>(node)]
        ->ctx[static_cast<std::size_t>(ctx)]
        ->busy_ticks.load(std::memory_order_relaxed);
  }

  std::uint64_t injected_on(int node, int ctx) const {
    check_addr(node, ctx, "injected_on");
    return nodes_[static_cast<std::size_t>(node)]
        ->ctx[static_cast<std::size_t>(ctx)]
        ->injected.load(std::memory_order_relaxed);
  }

  std::uint64_t injection_contended(int node, int ctx) const {
    check_addr(node, ctx, "injection_contended");
    return nodes_[static_cast<std::size_t>(node)]
        ->ctx[static_cast<std::size_t>(ctx)]
        ->lock_contended.load(std::memory_order_relaxed);
  }

  std::size_t pending_incoming(int node, int ctx) {
    check_addr(node, ctx, "pending_incoming");
    Context& c = *nodes_[static_cast<std::size_t>(node)]
                      ->ctx[static_cast<std::size_t>(ctx)];
    std::lock_guard<std::mutex> g(c.in_mu);
    return c.incoming.size();
  }

  std::size_t pending_completions(int node, int ctx) {
    check_addr(node, ctx, "pending_completions");
    Context& c = *nodes_[static_cast<std::size_t>(node)]
                      ->ctx[static_cast<std::size_t>(ctx)];
    std::lock_guard<std::mutex> g(c.comp_mu);
    return c.completions.size();
  }

  NetTotals totals() const {
    NetTotals t;
    t.injected = injected_.load(std::memory_order_relaxed);
    t.delivered_incoming = delivered_incoming_.load(std::memory_order_relaxed);
    t.delivered_completions =
        delivered_completions_.load(std::memory_order_relaxed);
    t.drained_incoming = drained_incoming_.load(std::memory_order_relaxed);
    t.drained_completions =
        drained_completions_.load(std::memory_order_relaxed);
    t.faults = faults_.load(std::memory_order_relaxed);
    return t;
  }

  std::uint64_t acc_overlap_flags() const {
    return acc_overlap_flags_.load(std::memory_order_relaxed);
  }

 private:
  // Debug-only tracker: flags accumulates through different windows whose
  // target byte ranges overlap while both are in flight.
  struct DebugAccScope {
    SimNetwork* net = nullptr;
    Node* nd = nullptr;
    bool armed = false;
    DebugAccScope(SimNetwork* n, int node, std::int32_t win, std::uint8_t* lo,
                  std::uint8_t* hi) {
      if (!n->cfg_.debug_checks) return;
      net = n;
      nd = n->nodes_[static_cast<std::size_t>(node)].get();
      armed = true;
      std::lock_guard<std::mutex> g(nd->acc_dbg_mu);
      for (const ActiveAcc& a : nd->active_accs) {
        if (a.win_id != win && a.lo < hi && lo < a.hi)
          net->acc_overlap_flags_.fetch_add(1, std::memory_order_relaxed);
      }
      nd->active_accs.push_back({win, lo, hi});
    }
    ~DebugAccScope() {
      if (!armed) return;
      std::lock_guard<std::mutex> g(nd->acc_dbg_mu);
      nd->active_accs.pop_back();
    }
  };
  friend struct DebugAccScope;

  static CompletionEvent to_completion(WireMessage& m) {
    CompletionEvent ev;
    switch (m.kind) {
      case MsgKind::RmaGetReply:
        ev.kind = CompletionEvent::Kind::RmaGetReply;
        break;
      case MsgKind::RmaFetchOpReply:
        ev.kind = CompletionEvent::Kind::RmaFetchOpReply;
        break;
      default:
        ev.kind = m.fault == FaultKind::None ? CompletionEvent::Kind::RmaAck
                                             : CompletionEvent::Kind::Fault;
        break;
    }
    ev.op_token = m.op_token;
    ev.win_id = m.win_id;
    ev.target_rank = m.target_rank;
    ev.acc_ordered = m.acc_ordered;
    ev.fault = m.fault;
    ev.payload = std::move(m.payload);
    return ev;
  }

  void check_addr(int node, int ctx, const char* where) const {
    if (node < 0 || node >= node_count())
      throw UsageFault(std::string(where) + ": unknown node");
    if (ctx < 0 || ctx >= cfg_.contexts)
      throw UsageFault(std::string(where) + ": context out of range");
  }

  TransportConfig cfg_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::atomic<std::uint64_t> injected_{0};
  std::atomic<std::uint64_t> delivered_incoming_{0};
  std::atomic<std::uint64_t> delivered_completions_{0};
  std::atomic<std::uint64_t> drained_incoming_{0};
  std::atomic<std::uint64_t> drained_completions_{0};
  std::atomic<std::uint64_t> faults_{0};
  std::atomic<std::uint64_t> delivered_faults_seen_{0};
  std::atomic<std::uint64_t> acc_overlap_flags_{0};
};

}  // namespace mvci

#endif  // MVCI_TRANSPORT_HPP
