#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dgrpc/congestion.h"
#include "dgrpc/credits.h"
#include "dgrpc/msgbuf.h"
#include "dgrpc/protocol.h"
#include "dgrpc/transport.h"

namespace dgrpc {

class Endpoint;
class Session;
struct SSlot;

enum class Role : uint8_t { kClient, kServer };

enum class SessionState : uint8_t {
  kConnecting,
  kConnected,
  kFailing,  // peer declared dead; waiting for queued packets and handlers
  kDisconnected,
};

enum class RpcStatus : uint8_t {
  kOk,
  kNodeFailure,
  kTimeout,        // session could not be connected
  kProtocolError,  // malformed traffic tore the session down
};

const char* to_string(RpcStatus s);

/// Invoked exactly once per request. Ownership of the request and response
/// msgbufs returns to the application when it runs.
using Continuation = std::function<void(RpcStatus, MsgBuf& resp)>;

enum class SlotState : uint8_t { kFree, kSendingReq, kAwaitingResp, kSendingRfrs, kDone };

struct PendingRequest {
  uint8_t req_type = 0;
  MsgBuf* req = nullptr;
  MsgBuf* resp = nullptr;
  Continuation cont;
  uint64_t ticket = 0;
};

/// Server-side view of one incoming request, handed to request handlers.
/// Stays valid until the response has been enqueued.
class ReqHandle {
 public:
  /// Request payload. For single-packet requests run in dispatch mode this
  /// points straight into the receive buffer.
  std::span<const std::byte> request() const { return request_; }
  uint8_t req_type() const { return req_type_; }
  uint16_t session_num() const;
  Endpoint& endpoint() const { return *ep_; }

  /// Response buffer of `size` bytes. Small responses use the slot's
  /// preallocated MTU-sized msgbuf when that optimization is on.
  MsgBuf& init_response(size_t size);

  /// Modeled execution time. On a virtual clock it delays the response
  /// (worker mode) or occupies the dispatch thread (dispatch mode); on the
  /// real clock it is ignored.
  void charge(Duration d) { charged_ += d; }

 private:
  friend class Endpoint;
  Endpoint* ep_ = nullptr;
  Session* session_ = nullptr;
  SSlot* slot_ = nullptr;
  std::span<const std::byte> request_;
  uint8_t req_type_ = 0;
  Duration charged_{0};
  bool in_worker_ = false;
  bool responded_ = false;
};

struct ClientSlotInfo {
  MsgBuf* req = nullptr;
  MsgBuf* resp = nullptr;
  Continuation cont;
  uint8_t req_type = 0;
  uint64_t ticket = 0;
  proto::ClientWireState wire;
  std::vector<Timestamp> tx_ts;  // indexed by tx_index % size
  uint32_t in_wheel = 0;
  uint32_t retx_in_wheel = 0;
  bool in_txq = false;
  bool error_resp = false;
};

struct ServerSlotInfo {
  proto::ServerWireState wire;
  MsgBuf req_buf;
  bool req_zero_copy = false;
  MsgBuf prealloc;
  MsgBuf dyn_resp;
  MsgBuf* resp = nullptr;
  bool error_resp = false;
  ReqHandle handle;
};

struct SSlot {
  Session* session = nullptr;
  uint32_t index = 0;
  uint32_t cur_req_num = 0;
  SlotState state = SlotState::kFree;
  ClientSlotInfo client;
  ServerSlotInfo server;
};

/// One end of a one-to-one connection between two endpoints.
class Session {
 public:
  Session(Role role, uint16_t local_num, EndpointAddr remote, uint32_t credits,
          uint32_t num_slots);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  Role role() const { return role_; }
  bool is_client() const { return role_ == Role::kClient; }
  uint16_t local_num() const { return local_num_; }
  uint16_t remote_num() const { return remote_num_; }
  EndpointAddr remote() const { return remote_; }
  uint32_t num_slots() const { return static_cast<uint32_t>(slots_.size()); }

  SessionState state;
  CreditCounter credits;
  std::deque<PendingRequest> backlog;
  std::optional<PacedSession> cc;

  void set_remote_num(uint16_t n) { remote_num_ = n; }

  SSlot& slot(size_t i) { return slots_[i]; }
  const SSlot& slot(size_t i) const { return slots_[i]; }
  std::vector<SSlot>& slots() { return slots_; }

  /// Lowest-index free client slot, or nullptr.
  SSlot* free_slot();

  size_t active_slots() const;

  /// Sum of per-slot packets in flight; equals credits.in_flight() at every
  /// observable point for a client session.
  uint32_t slots_in_flight() const;
  bool credits_conserved() const;

 private:
  Role role_;
  uint16_t local_num_;
  uint16_t remote_num_ = 0;
  EndpointAddr remote_;
  std::vector<SSlot> slots_;
};

/// Appends a request to the session's FIFO backlog.
void enqueue_backlog(Session& s, PendingRequest req);

/// Moves backlogged requests into free slots in FIFO order, calling
/// `start(slot, request)` for each. Returns how many were started.
size_t drain_backlog(Session& s, const std::function<void(SSlot&, PendingRequest&&)>& start);

}  // namespace dgrpc
