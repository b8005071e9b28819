#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dgrpc/common.h"
#include "dgrpc/credits.h"
#include "dgrpc/msgbuf.h"
#include "dgrpc/packet_header.h"

// Client-driven wire protocol. Every server packet answers exactly one client
// packet, so the client's transmissions and receptions pair up one-to-one in
// a single index space:
//
//   client tx k, k < Nr        request data packet k
//   client tx k, k >= Nr       RFR for response packet k - Nr + 1
//   client rx k, k < Nr - 1    credit return for request packet k
//   client rx k, k >= Nr - 1   response packet k - Nr + 1
//
// Only the client keeps rollback state. All functions take `now` explicitly.

namespace dgrpc::proto {

enum class DropReason : uint8_t {
  kNone,
  kReordered,   // gap or duplicate relative to the next expected packet
  kStale,       // belongs to an older request on this slot
  kBusy,        // handler for this request is still running
  kUnexpected,  // packet type not valid in this direction or state
};

/// Per-slot client progress for the current request.
struct ClientWireState {
  uint32_t num_req_pkts = 0;
  uint32_t num_resp_pkts = 0;  // 0 until response packet 0 arrives
  uint32_t resp_msg_size = 0;
  uint32_t num_tx = 0;
  uint32_t num_rx = 0;
  uint32_t num_tx_hw = 0;  // highest num_tx reached; lower indexes are retransmissions
  Timestamp rto_deadline = kNever;

  void start(uint32_t req_pkts);

  /// Transmissions the client may issue in total given what it knows now.
  uint32_t tx_target() const {
    return num_resp_pkts == 0 ? num_req_pkts : num_req_pkts + num_resp_pkts - 1;
  }
  uint32_t in_flight() const { return num_tx - num_rx; }
  bool has_pending_tx() const { return num_tx < tx_target(); }
  bool complete() const {
    return num_resp_pkts > 0 && num_rx == num_req_pkts + num_resp_pkts - 1;
  }
};

struct TxDesc {
  PktType type = PktType::kReqData;
  uint16_t pkt_num = 0;
  uint32_t tx_index = 0;
  bool retransmit = false;
};

TxDesc tx_desc_for(const ClientWireState& st, uint32_t tx_index);

/// Emits request packets, then RFRs once the response size is known, while
/// credits last. Arms the RTO at `now + rto` if anything was emitted.
size_t client_tx_step(ClientWireState& st, CreditCounter& credits, Timestamp now, Duration rto,
                      std::vector<TxDesc>& out);

/// Reception index a CR or response packet maps to, or -1 if the packet
/// cannot belong to the current request.
int64_t client_rx_index(const ClientWireState& st, const PacketHeader& h);

/// True iff the packet is not the next in-order reception for the slot.
bool client_drop_reordered(const ClientWireState& st, const PacketHeader& h,
                           uint32_t cur_req_num);

enum class ClientRxVerdict : uint8_t { kDrop, kCredit, kResponse, kProtocolError };

struct ClientRxResult {
  ClientRxVerdict verdict = ClientRxVerdict::kDrop;
  DropReason reason = DropReason::kNone;
  uint32_t rx_index = 0;
  bool first_response = false;
  bool complete = false;
};

ClientRxResult client_rx_step(ClientWireState& st, CreditCounter& credits, const PacketHeader& h,
                              uint32_t cur_req_num, size_t mtu_data);

/// Go-back-N: if the RTO has expired with packets in flight, rolls num_tx
/// back to num_rx and reclaims the credits of the rolled-back sends. Returns
/// the number of transmissions rolled back (0 if nothing was suspected).
uint32_t detect_loss_and_rollback(ClientWireState& st, CreditCounter& credits, Timestamp now);

enum class ServerStage : uint8_t { kIdle, kReceiving, kRunning, kResponded };

/// Per-slot server state. The handler for a req_num runs at most once.
struct ServerWireState {
  ServerStage stage = ServerStage::kIdle;
  uint32_t req_num = 0;
  uint32_t req_msg_size = 0;
  uint32_t num_req_pkts = 0;
  uint32_t num_rx = 0;
  uint32_t num_resp_pkts = 0;
};

enum class ServerAction : uint8_t {
  kDrop,
  kSendCr,      // accepted non-final request packet
  kDispatch,    // accepted final request packet; run the handler
  kResendCr,    // duplicate non-final request packet
  kResendResp,  // duplicate request packet or RFR for a responded request
  kSendResp,    // RFR for a response packet
  kProtocolError,
};

struct ServerRxResult {
  ServerAction action = ServerAction::kDrop;
  DropReason reason = DropReason::kNone;
  uint16_t pkt_num = 0;
  bool new_request = false;
};

ServerRxResult server_rx_step(ServerWireState& st, const PacketHeader& h, size_t mtu_data);

/// Marks the response as enqueued; later RFRs and duplicates are answered
/// from it.
void server_set_responded(ServerWireState& st, uint32_t resp_size, size_t mtu_data);

/// Copies one in-order packet's payload into its slot in `dst`. Throws
/// ProtocolError if msg_size or the payload length disagree with `dst`.
/// Returns true if this was the message's last packet.
bool reassemble(MsgBuf& dst, const PacketHeader& h, std::span<const std::byte> payload);

}  // namespace dgrpc::proto
