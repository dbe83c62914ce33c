// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MVCI_WIRE_HPP
#define MVCI_WIRE_HPP

#include <cstdint>

#include "mvci/common.hpp"

namespace mvci {

inline constexpr std::int32_t kAnySource = -1;
inline constexpr std::int32_t kAnyTag = -1;

// Matching envelope: communicator stream, source rank within it, tag.
struct Envelope {
  std::int32_t comm_id = 0;
  std::int32_t rank = 0;
  std::int32_t tag = 0;
};

// pattern.rank/tag may hold wildcards; env must be concrete.
inline bool envelope_matches(const Envelope& pattern, const Envelope& env) {
  return pattern.comm_id == env.comm_id &&
         (pattern.rank == kAnySource || pattern.rank == env.rank) &&
         (pattern.tag == kAnyTag || pattern.tag == env.tag);
}

enum class MsgKind : std::uint8_t {
  Eager,
  RndvRts,
  RndvCts,
  RndvData,
  RmaPut,
  RmaGet,
  RmaGetReply,
  RmaAcc,
  RmaFetchOp,
  RmaFetchOpReply,
  RmaCompletionAck,
};

// Completion-class kinds are classified into the destination context's
// completions queue on delivery; data-class kinds go to incoming.
inline bool is_completion_kind(MsgKind k) {
  return k == MsgKind::RmaGetReply || k == MsgKind::RmaFetchOpReply ||
         k == MsgKind::RmaCompletionAck;
}

enum class FaultKind : std::uint8_t {
  None,
  UnknownWindow,
  OutOfRange,
};

struct WireMessage {
  MsgKind kind = MsgKind::Eager;
  Envelope env{};                // pt2pt kinds only
  std::int32_t src_node = 0;     // initiator node and context; answers return
  std::int32_t src_ctx = 0;      //   here
  std::int32_t dst_node = 0;
  std::int32_t dst_ctx = 0;
  std::uint64_t op_token = 0;    // initiator-side record key
  std::uint64_t peer_token = 0;  // responder-side record key (rendezvous)
  std::int32_t win_id = -1;
  std::int32_t target_rank = -1;  // window rank the op addressed
  std::uint64_t offset = 0;
  std::uint64_t len = 0;
  bool acc_ordered = false;  // ordered-accumulate chain member
  FaultKind fault = FaultKind::None;  // set on completion-class replies only
  bytes payload;
};

struct CompletionEvent {
  enum class Kind : std::uint8_t { RmaAck, RmaGetReply, RmaFetchOpReply, Fault };
  Kind kind = Kind::RmaAck;
  std::uint64_t op_token = 0;
  std::int32_t win_id = -1;
  std::int32_t target_rank = -1;
  bool acc_ordered = false;
  FaultKind fault = FaultKind::None;
  bytes payload;
};

}  // namespace mvci

#endif  // MVCI_WIRE_HPP
