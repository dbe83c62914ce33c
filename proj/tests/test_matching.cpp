// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// Matching engine: wildcard envelopes, FIFO tie-breaking on both queues,
// equivalence with a brute-force reference over randomized traces, and
// end-to-end non-overtaking through the runtime.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdint>
#include <list>
#include <random>
#include <thread>
#include <vector>

#include "mvci/mvci.hpp"

using namespace mvci;

namespace {

UnexpectedMsg arrival(std::int32_t comm, std::int32_t rank, std::int32_t tag,
                      std::uint64_t token = 0) {
  UnexpectedMsg m;
  m.env = Envelope{comm, rank, tag};
  m.token = token;
  return m;
}

PostedRecv post(std::int32_t comm, std::int32_t rank, std::int32_t tag,
                Request* req = nullptr) {
  PostedRecv p;
  p.pattern = Envelope{comm, rank, tag};
  p.req = req;
  return p;
}

}  // namespace

TEST_CASE("a posted wildcard source claims a waiting arrival") {
  MatchQueues mq;
  mq.push_unexpected(arrival(1, 0, 5, 77));
  auto m = mq.match_arrival_for(Envelope{1, kAnySource, 5});
  REQUIRE(m.has_value());
  CHECK(m->env.rank == 0);
  CHECK(m->token == 77);
  CHECK(mq.empty());
}

TEST_CASE("among equally compatible arrivals the earliest wins") {
  MatchQueues mq;
  mq.push_unexpected(arrival(1, 2, 9, 100));  // A
  mq.push_unexpected(arrival(1, 2, 9, 200));  // B
  auto m = mq.match_arrival_for(Envelope{1, 2, 9});
  REQUIRE(m.has_value());
  CHECK(m->token == 100);
  CHECK(mq.unexpected_count() == 1);
}

TEST_CASE("a communicator mismatch never matches") {
  MatchQueues mq;
  mq.push_unexpected(arrival(3, 0, 5));
  CHECK_FALSE(mq.match_arrival_for(Envelope{4, kAnySource, kAnyTag}));
  CHECK(mq.unexpected_count() == 1);
}

TEST_CASE("a double-wildcard posted receive admits any arrival on the comm") {
  MatchQueues mq;
  mq.push_posted(post(2, kAnySource, kAnyTag));
  auto p = mq.match_receive_for(Envelope{2, 7, 13});
  REQUIRE(p.has_value());
  CHECK(mq.posted_count() == 0);
  CHECK_FALSE(mq.match_receive_for(Envelope{2, 7, 13}));
}

TEST_CASE("an earlier exact post beats a later wildcard for its envelope") {
  MatchQueues mq;
  Request exact, wild;
  mq.push_posted(post(1, 0, 1, &exact));
  mq.push_posted(post(1, kAnySource, kAnyTag, &wild));
  auto p = mq.match_receive_for(Envelope{1, 0, 1});
  REQUIRE(p.has_value());
  CHECK(p->req == &exact);
  // The wildcard stays behind for the next arrival.
  auto q = mq.match_receive_for(Envelope{1, 3, 8});
  REQUIRE(q.has_value());
  CHECK(q->req == &wild);
}

TEST_CASE("an arrival with no posted receive queues as unexpected") {
  MatchQueues mq;
  CHECK_FALSE(mq.match_receive_for(Envelope{1, 0, 2}));
  mq.push_unexpected(arrival(1, 0, 2));
  CHECK(mq.unexpected_count() == 1);
  CHECK(mq.posted_count() == 0);
}

// Reference matcher: plain lists scanned front to back, the definitional
// reading of "first compatible entry wins" with no shortcuts.
namespace {

struct RefMatcher {
  std::list<PostedRecv> posted;
  std::list<UnexpectedMsg> unexpected;

  std::optional<std::uint64_t> on_post(const Envelope& pattern,
                                       std::uint64_t post_id) {
    for (auto it = unexpected.begin(); it != unexpected.end(); ++it) {
      if (envelope_matches(pattern, it->env)) {
        std::uint64_t tok = it->token;
        unexpected.erase(it);
        return tok;
      }
    }
    PostedRecv p;
    p.pattern = pattern;
    p.cap = post_id;  // repurposed as the post's identity
    posted.push_back(p);
    return std::nullopt;
  }

  std::optional<std::uint64_t> on_arrival(const Envelope& env,
                                          std::uint64_t token) {
    for (auto it = posted.begin(); it != posted.end(); ++it) {
      if (envelope_matches(it->pattern, env)) {
        std::uint64_t id = it->cap;
        posted.erase(it);
        return id;
      }
    }
    UnexpectedMsg m;
    m.env = env;
    m.token = token;
    unexpected.push_back(m);
    return std::nullopt;
  }
};

}  // namespace

TEST_CASE("randomized traces agree with the brute-force reference") {
  std::mt19937 rng(20260822);
  for (int trace = 0; trace < 1000; ++trace) {
    MatchQueues mq;
    RefMatcher ref;
    const int events = 1 + static_cast<int>(rng() % 100);
    for (int e = 0; e < events; ++e) {
      std::int32_t comm = static_cast<std::int32_t>(rng() % 3);
      std::int32_t rank = static_cast<std::int32_t>(rng() % 4);
      std::int32_t tag = static_cast<std::int32_t>(rng() % 5);
      if (rng() % 2 == 0) {
        Envelope pattern{comm, rng() % 4 == 0 ? kAnySource : rank,
                         rng() % 4 == 0 ? kAnyTag : tag};
        std::uint64_t post_id = static_cast<std::uint64_t>(e);
        auto want = ref.on_post(pattern, post_id);
        auto got = mq.match_arrival_for(pattern);
        if (want.has_value()) {
          REQUIRE(got.has_value());
          REQUIRE(got->token == *want);
        } else {
          REQUIRE_FALSE(got.has_value());
          PostedRecv p;
          p.pattern = pattern;
          p.cap = post_id;
          mq.push_posted(p);
        }
      } else {
        Envelope env{comm, rank, tag};
        std::uint64_t token = static_cast<std::uint64_t>(e) | (1ull << 32);
        auto want = ref.on_arrival(env, token);
        auto got = mq.match_receive_for(env);
        if (want.has_value()) {
          REQUIRE(got.has_value());
          REQUIRE(got->cap == *want);
        } else {
          REQUIRE_FALSE(got.has_value());
          mq.push_unexpected(arrival(comm, rank, tag, token));
        }
      }
      REQUIRE(mq.posted_count() == ref.posted.size());
      REQUIRE(mq.unexpected_count() == ref.unexpected.size());
    }
    // No compatible pair may be left straddling the two queues; it would
    // have matched at insertion time.
    for (const PostedRecv& p : ref.posted)
      for (const UnexpectedMsg& u : ref.unexpected)
        REQUIRE_FALSE(envelope_matches(p.pattern, u.env));
  }
}

TEST_CASE("same-envelope messages never overtake across a threaded stream") {
  Config cfg;
  cfg.cs_mode = CsMode::FGCache;
  cfg.contexts = 9;
  cfg.injection_cost = 1;
  World w(2, cfg);
  constexpr int kThreads = 8;
  constexpr std::uint64_t kPerThread = 1250;  // 10^4 messages total
  std::atomic<std::uint64_t> out_of_order{0};

  auto body = [&](int rank) {
    Rank r = w.rank(rank);
    Comm wc = r.world_comm();
    std::vector<Comm> comms;
    for (int t = 0; t < kThreads; ++t) comms.push_back(wc.dup());
    std::vector<std::thread> ts;
    for (int t = 0; t < kThreads; ++t) {
      ts.emplace_back([&, t] {
        Comm c = comms[static_cast<std::size_t>(t)];
        if (rank == 0) {
          for (std::uint64_t i = 0; i < kPerThread; ++i)
            c.send(1, 0, &i, 8);  // one tag: every message envelope-equal
        } else {
          for (std::uint64_t expect = 0; expect < kPerThread; ++expect) {
            std::uint64_t got = ~0ull;
            c.recv(kAnySource, kAnyTag, &got, 8);
            if (got != expect) out_of_order.fetch_add(1);
          }
        }
      });
    }
    for (auto& th : ts) th.join();
    wc.barrier();
    for (Comm& c : comms) c.free();
  };
  std::thread peer(body, 1);
  body(0);
  peer.join();

  CHECK(out_of_order.load() == 0);
  Report rep = w.finalize();
  CHECK(rep.clean);
  CHECK(rep.net.faults == 0);
}

TEST_CASE("every sent message is matched exactly once under mixed ordering") {
  // Out-of-phase senders and receivers: odd tags post first, even tags send
  // first, so both the posted and unexpected paths carry real traffic.
  Config cfg;
  cfg.cs_mode = CsMode::FGCache;
  cfg.contexts = 2;
  cfg.injection_cost = 1;
  World w(2, cfg);
  Rank r0 = w.rank(0);
  Rank r1 = w.rank(1);
  Comm c0 = r0.world_comm();
  Comm c1 = r1.world_comm();

  constexpr int kMsgs = 200;
  std::vector<Req> recvs;
  std::vector<std::uint32_t> in(kMsgs, 0xffffffff);
  for (int i = 1; i < kMsgs; i += 2)
    recvs.push_back(c1.irecv(0, i, &in[static_cast<std::size_t>(i)], 4));
  std::vector<Req> sends;
  std::vector<std::uint32_t> out(kMsgs);
  for (int i = 0; i < kMsgs; ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    sends.push_back(c0.isend(1, i, &out[static_cast<std::size_t>(i)], 4));
  }
  for (int i = 0; i < kMsgs; i += 2)
    recvs.push_back(c1.irecv(0, i, &in[static_cast<std::size_t>(i)], 4));

  std::thread peer([&] { waitall(recvs); });
  waitall(sends);
  peer.join();

  for (int i = 0; i < kMsgs; ++i)
    CHECK(in[static_cast<std::size_t>(i)] == static_cast<std::uint32_t>(i));
  // Quiesced: nothing left posted, nothing left unexpected.
  CHECK(r1.ctx()->pool.vci(0).mq.empty());
  CHECK(w.finalize().clean);
}
