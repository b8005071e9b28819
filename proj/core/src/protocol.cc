#include "dgrpc/protocol.h"

#include <algorithm>
#include <cstring>
#include <string>

namespace dgrpc::proto {

void ClientWireState::start(uint32_t req_pkts) {
  *this = ClientWireState{};
  num_req_pkts = req_pkts;
}

TxDesc tx_desc_for(const ClientWireState& st, uint32_t tx_index) {
  TxDesc d;
  d.tx_index = tx_index;
  d.retransmit = tx_index < st.num_tx_hw;
  if (tx_index < st.num_req_pkts) {
    d.type = PktType::kReqData;
    d.pkt_num = static_cast<uint16_t>(tx_index);
  } else {
    d.type = PktType::kRequestForResponse;
    d.pkt_num = static_cast<uint16_t>(tx_index - st.num_req_pkts + 1);
  }
  return d;
}

size_t client_tx_step(ClientWireState& st, CreditCounter& credits, Timestamp now, Duration rto,
                      std::vector<TxDesc>& out) {
  size_t n = 0;
  while (st.num_tx < st.tx_target() && credits.try_consume()) {
    out.push_back(tx_desc_for(st, st.num_tx));
    st.num_tx++;
    st.num_tx_hw = std::max(st.num_tx_hw, st.num_tx);
    n++;
  }
  if (n > 0) st.rto_deadline = now + rto;
  return n;
}

int64_t client_rx_index(const ClientWireState& st, const PacketHeader& h) {
  switch (h.pkt_type) {
    case PktType::kCreditReturn:
      if (uint32_t{h.pkt_num} + 1 < st.num_req_pkts) return h.pkt_num;
      return -1;
    case PktType::kRespData:
      if (st.num_resp_pkts != 0 && h.pkt_num >= st.num_resp_pkts) return -1;
      return int64_t{st.num_req_pkts} - 1 + h.pkt_num;
    default:
      return -1;
  }
}

bool client_drop_reordered(const ClientWireState& st, const PacketHeader& h,
                           uint32_t cur_req_num) {
  if (h.req_num != cur_req_num) return true;
  const int64_t idx = client_rx_index(st, h);
  return idx < 0 || idx != st.num_rx || idx >= st.num_tx;
}

ClientRxResult client_rx_step(ClientWireState& st, CreditCounter& credits, const PacketHeader& h,
                              uint32_t cur_req_num, size_t mtu_data) {
  ClientRxResult r;
  if (h.pkt_type != PktType::kCreditReturn && h.pkt_type != PktType::kRespData) {
    r.reason = DropReason::kUnexpected;
    return r;
  }
  if (h.req_num != cur_req_num) {
    r.reason = DropReason::kStale;
    return r;
  }
  if (client_drop_reordered(st, h, cur_req_num)) {
    r.reason = DropReason::kReordered;
    return r;
  }

  r.rx_index = st.num_rx;
  if (h.pkt_type == PktType::kRespData) {
    if (h.pkt_num == 0) {
      st.num_resp_pkts = static_cast<uint32_t>(num_pkts_for(h.msg_size, mtu_data));
      st.resp_msg_size = h.msg_size;
      r.first_response = true;
    } else if (h.msg_size != st.resp_msg_size) {
      r.verdict = ClientRxVerdict::kProtocolError;
      return r;
    }
    r.verdict = ClientRxVerdict::kResponse;
  } else {
    r.verdict = ClientRxVerdict::kCredit;
  }

  st.num_rx++;
  credits.replenish();
  if (st.in_flight() == 0) st.rto_deadline = kNever;
  r.complete = st.complete();
  return r;
}

uint32_t detect_loss_and_rollback(ClientWireState& st, CreditCounter& credits, Timestamp now) {
  if (now < st.rto_deadline) return 0;
  const uint32_t delta = st.in_flight();
  st.rto_deadline = kNever;
  if (delta == 0) return 0;
  credits.reclaim(delta);
  st.num_tx = st.num_rx;
  return delta;
}

ServerRxResult server_rx_step(ServerWireState& st, const PacketHeader& h, size_t mtu_data) {
  ServerRxResult r;

  if (h.pkt_type == PktType::kReqData) {
    const bool newer = st.stage == ServerStage::kIdle || h.req_num > st.req_num;
    if (newer) {
      if (st.stage == ServerStage::kRunning) {
        r.reason = DropReason::kBusy;
        return r;
      }
      if (h.pkt_num != 0) {
        r.reason = DropReason::kReordered;
        return r;
      }
      st = ServerWireState{};
      st.stage = ServerStage::kReceiving;
      st.req_num = h.req_num;
      st.req_msg_size = h.msg_size;
      st.num_req_pkts = static_cast<uint32_t>(num_pkts_for(h.msg_size, mtu_data));
      r.new_request = true;
    } else if (h.req_num < st.req_num) {
      r.reason = DropReason::kStale;
      return r;
    }

    if (h.msg_size != st.req_msg_size) {
      r.action = ServerAction::kProtocolError;
      return r;
    }
    const uint32_t i = h.pkt_num;
    r.pkt_num = h.pkt_num;
    if (i >= st.num_req_pkts) {
      r.action = ServerAction::kProtocolError;
      return r;
    }
    const bool last = i + 1 == st.num_req_pkts;
    if (st.stage == ServerStage::kReceiving && i == st.num_rx) {
      st.num_rx++;
      if (last) {
        st.stage = ServerStage::kRunning;
        r.action = ServerAction::kDispatch;
      } else {
        r.action = ServerAction::kSendCr;
      }
      return r;
    }
    if (i < st.num_rx) {
      if (!last) {
        r.action = ServerAction::kResendCr;
      } else if (st.stage == ServerStage::kResponded) {
        r.action = ServerAction::kResendResp;
        r.pkt_num = 0;
      } else {
        r.reason = DropReason::kBusy;
      }
      return r;
    }
    r.reason = DropReason::kReordered;
    return r;
  }

  if (h.pkt_type == PktType::kRequestForResponse) {
    if (st.stage == ServerStage::kIdle || h.req_num > st.req_num) {
      r.reason = DropReason::kUnexpected;
      return r;
    }
    if (h.req_num < st.req_num) {
      r.reason = DropReason::kStale;
      return r;
    }
    if (st.stage != ServerStage::kResponded) {
      r.reason = DropReason::kBusy;
      return r;
    }
    if (h.pkt_num == 0 || h.pkt_num >= st.num_resp_pkts) {
      r.reason = DropReason::kUnexpected;
      return r;
    }
    r.action = ServerAction::kSendResp;
    r.pkt_num = h.pkt_num;
    return r;
  }

  r.reason = DropReason::kUnexpected;
  return r;
}

void server_set_responded(ServerWireState& st, uint32_t resp_size, size_t mtu_data) {
  st.stage = ServerStage::kResponded;
  st.num_resp_pkts = static_cast<uint32_t>(num_pkts_for(resp_size, mtu_data));
}

bool reassemble(MsgBuf& dst, const PacketHeader& h, std::span<const std::byte> payload) {
  if (h.msg_size != dst.data_size()) {
    throw ProtocolError("msg_size " + std::to_string(h.msg_size) + " disagrees with message size " +
                        std::to_string(dst.data_size()));
  }
  const size_t n = dst.num_pkts();
  if (h.pkt_num >= n) throw ProtocolError("packet number beyond message end");
  const PktRange range = dst.pkt_data_range(h.pkt_num);
  if (payload.size() != range.length) {
    throw ProtocolError("payload length " + std::to_string(payload.size()) + " != expected " +
                        std::to_string(range.length));
  }
  if (range.length > 0) {
    std::memcpy(dst.backing() + dst.data_offset() + range.offset, payload.data(), range.length);
  }
  return size_t{h.pkt_num} + 1 == n;
}

}  // namespace dgrpc::proto
