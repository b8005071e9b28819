#include "dgrpc/endpoint.h"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

namespace dgrpc {

namespace {

bool is_power_of_two(uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

void EndpointConfig::validate() const {
  if (credits < 1 || credits > 0xFFFF) throw ConfigError("credits must be in [1, 65535]");
  if (!is_power_of_two(num_slots) || num_slots > 1024) {
    throw ConfigError("num_slots must be a power of two no larger than 1024");
  }
  if (rto <= Duration::zero()) throw ConfigError("rto must be positive");
  if (rx_batch < 1) throw ConfigError("rx_batch must be at least 1");
  if (link_rate_bps <= 0) throw ConfigError("link rate must be positive");
  if (heartbeat_period <= Duration::zero() || failure_timeout <= heartbeat_period) {
    throw ConfigError("failure timeout must exceed the heartbeat period");
  }
  cc.validate();
}

uint16_t ReqHandle::session_num() const { return session_->local_num(); }

MsgBuf& ReqHandle::init_response(size_t size) { return ep_->init_response(*this, size); }

Endpoint::Endpoint(Transport& transport, EndpointClock& clock, EndpointConfig cfg)
    : transport_(&transport),
      clock_(&clock),
      cfg_(std::move(cfg)),
      mtu_(transport.mtu_data()),
      ts_(clock, cfg_.cost) {
  cfg_.validate();
  // pkt_num is 16 bits wide, so the largest message must fit in 65536 packets.
  if (mtu_ < 128) throw ConfigError("transport mtu_data must be at least 128 bytes");
  ts_.set_per_packet(!cfg_.opt.batched_timestamps);
  wheel_ = std::make_unique<TimingWheel<WheelEntry>>(cfg_.wheel_slot, cfg_.wheel_horizon);
  if (cfg_.worker_threads > 0) {
    pool_ = std::make_unique<WorkerPool>(cfg_.worker_threads);
  } else if (!clock.is_virtual()) {
    pool_ = std::make_unique<WorkerPool>(1);
  }
}

Endpoint::~Endpoint() {
  pool_.reset();
  transport_->flush_tx();
}

void Endpoint::register_handler(uint8_t req_type, RequestHandler handler, HandlerMode mode) {
  if (handlers_.count(req_type) != 0) {
    throw ConfigError("handler already registered for req_type " + std::to_string(req_type));
  }
  handlers_.emplace(req_type, Registered{std::move(handler), mode});
}

// ---------------------------------------------------------------------------
// Sessions

Session* Endpoint::find(uint16_t num) {
  return num < sessions_.size() ? sessions_[num].get() : nullptr;
}

const Session* Endpoint::session(uint16_t num) const {
  return num < sessions_.size() ? sessions_[num].get() : nullptr;
}

size_t Endpoint::num_sessions() const {
  size_t n = 0;
  for (const auto& s : sessions_) n += s->state != SessionState::kDisconnected;
  return n;
}

bool Endpoint::is_connected(uint16_t num) const {
  const Session* s = session(num);
  return s != nullptr && s->state == SessionState::kConnected;
}

Endpoint::PeerState& Endpoint::peer(EndpointAddr a) { return peers_[a]; }

void Endpoint::emit_sm(uint16_t num, SmEvent ev) {
  if (sm_handler_) sm_handler_(num, ev);
}

Session* Endpoint::make_session(Role role, EndpointAddr remote, uint32_t credits, uint32_t slots) {
  if (sessions_.size() >= 0xFFFF) throw SessionError("session numbers exhausted");
  const auto num = static_cast<uint16_t>(sessions_.size());
  sessions_.push_back(std::make_unique<Session>(role, num, remote, credits, slots));
  Session* s = sessions_.back().get();
  credit_commitment_ += credits;

  PeerState& p = peer(remote);
  if (p.sessions++ == 0 || p.dead) {
    const Timestamp now = clock_->now();
    p.last_heard = now;
    p.next_heartbeat = now + cfg_.heartbeat_period;
    p.dead = false;
  }

  if (role == Role::kClient) {
    if (cfg_.opt.congestion_control) s->cc.emplace(cfg_.link_rate_bps, cfg_.cc);
  } else {
    for (SSlot& slot : s->slots()) slot.server.prealloc = MsgBuf::alloc(mtu_, mtu_);
  }
  return s;
}

void Endpoint::release_session(Session& s) {
  if (s.state == SessionState::kDisconnected) return;
  credit_commitment_ -= s.credits.budget();
  PeerState& p = peer(s.remote());
  if (p.sessions > 0) p.sessions--;
  std::erase_if(txq_, [&](SSlot* slot) { return slot->session == &s; });
  if (s.is_client()) {
    connecting_.erase(s.local_num());
  } else {
    accepted_.erase({s.remote(), s.remote_num()});
    for (SSlot& slot : s.slots()) {
      slot.server.req_buf = MsgBuf{};
      slot.server.prealloc = MsgBuf{};
      slot.server.dyn_resp = MsgBuf{};
      slot.server.resp = nullptr;
    }
  }
  s.state = SessionState::kDisconnected;
}

uint16_t Endpoint::create_session(EndpointAddr remote, std::optional<uint32_t> credits,
                                  std::optional<uint32_t> num_slots) {
  const uint32_t c = credits.value_or(cfg_.credits);
  const uint32_t n = num_slots.value_or(cfg_.num_slots);
  if (c < 1 || c > 0xFFFF) throw ConfigError("credits must be in [1, 65535]");
  if (!is_power_of_two(n) || n > 1024) throw ConfigError("num_slots must be a power of two");
  if (credit_commitment_ + c > transport_->rx_queue_size()) {
    throw SessionError("receive queue budget exhausted: " + std::to_string(credit_commitment_) +
                       " + " + std::to_string(c) + " > " +
                       std::to_string(transport_->rx_queue_size()));
  }
  Session* s = make_session(Role::kClient, remote, c, n);
  const Timestamp now = clock_->now();
  connecting_[s->local_num()] = ConnectInfo{now, now + cfg_.connect_retry};

  MgmtMsg m;
  m.type = MgmtType::kConnectReq;
  m.client_session = s->local_num();
  m.credits = static_cast<uint16_t>(c);
  m.num_slots = static_cast<uint16_t>(n);
  m.mtu_data = static_cast<uint32_t>(mtu_);
  send_mgmt(remote, m);
  return s->local_num();
}

void Endpoint::destroy_session(uint16_t num) {
  Session* s = find(num);
  if (s == nullptr || !s->is_client()) throw SessionError("no such client session");
  if (s->state == SessionState::kDisconnected) return;
  if (s->active_slots() > 0 || !s->backlog.empty()) {
    throw SessionError("session has outstanding requests");
  }
  if (s->state == SessionState::kConnected) {
    MgmtMsg m;
    m.type = MgmtType::kDisconnect;
    m.client_session = s->local_num();
    m.server_session = s->remote_num();
    send_mgmt(s->remote(), m);
  }
  if (s->cc && s->cc->queued > 0) {
    fail_session(*s, RpcStatus::kNodeFailure);
    return;
  }
  release_session(*s);
}

void Endpoint::send_mgmt(EndpointAddr dest, const MgmtMsg& m) {
  const auto bytes = encode_mgmt(m);
  transport_->send_control(dest, bytes);
}

void Endpoint::fail_session(Session& s, RpcStatus status) {
  if (s.state == SessionState::kFailing || s.state == SessionState::kDisconnected) return;
  s.state = SessionState::kFailing;
  connecting_.erase(s.local_num());
  failing_.emplace_back(&s, status);
}

void Endpoint::teardown_protocol_error(Session& s) {
  stats_.protocol_errors++;
  MgmtMsg m;
  m.type = MgmtType::kDisconnect;
  if (s.is_client()) {
    m.client_session = s.local_num();
    m.server_session = s.remote_num();
  } else {
    m.client_session = s.remote_num();
    m.server_session = s.local_num();
  }
  send_mgmt(s.remote(), m);
  fail_session(s, RpcStatus::kProtocolError);
}

void Endpoint::handle_node_failure(EndpointAddr remote) {
  PeerState& p = peer(remote);
  if (p.dead) return;
  p.dead = true;
  stats_.node_failures++;
  flush_transport();
  for (auto& sp : sessions_) {
    Session& s = *sp;
    if (s.remote() != remote) continue;
    if (s.state == SessionState::kConnecting) {
      fail_session(s, RpcStatus::kTimeout);
      emit_sm(s.local_num(), SmEvent::kConnectFailed);
    } else if (s.state == SessionState::kConnected) {
      fail_session(s, RpcStatus::kNodeFailure);
    }
  }
}

void Endpoint::flush_transport() {
  clock_->charge(CostModel::ns(cfg_.cost.flush_tx_ns));
  stats_.flushes++;
  transport_->flush_tx();
}

// ---------------------------------------------------------------------------
// Client API

uint64_t Endpoint::enqueue_request(uint16_t num, uint8_t req_type, MsgBuf& req, MsgBuf& resp,
                                   Continuation cont) {
  Session* s = find(num);
  if (s == nullptr || !s->is_client()) throw SessionError("no such client session");
  if (!req.valid()) throw SizeError("request msgbuf is not allocated");
  if (req.mtu_data() != mtu_) throw SizeError("request msgbuf mtu differs from the endpoint's");
  if (req.locked() || resp.locked()) throw OwnershipError("msgbuf already owned by the endpoint");

  const uint64_t ticket = next_ticket_++;
  if (s->state == SessionState::kFailing || s->state == SessionState::kDisconnected) {
    stats_.continuations++;
    cont(RpcStatus::kNodeFailure, resp);
    return ticket;
  }

  req.lock();
  resp.lock();
  PendingRequest p{req_type, &req, &resp, std::move(cont), ticket};
  SSlot* slot = s->state == SessionState::kConnected && s->backlog.empty() ? s->free_slot() : nullptr;
  if (slot != nullptr) {
    start_request(*slot, std::move(p));
  } else {
    enqueue_backlog(*s, std::move(p));
  }
  transport_->wake();
  return ticket;
}

void Endpoint::start_request(SSlot& slot, PendingRequest&& p) {
  ClientSlotInfo& c = slot.client;
  c.req = p.req;
  c.resp = p.resp;
  c.cont = std::move(p.cont);
  c.req_type = p.req_type;
  c.ticket = p.ticket;
  c.wire.start(static_cast<uint32_t>(p.req->num_pkts()));
  c.tx_ts.assign(std::max<uint32_t>(slot.session->credits.budget(), 1), Timestamp{0});
  c.in_wheel = 0;
  c.retx_in_wheel = 0;
  c.error_resp = false;
  slot.state = SlotState::kSendingReq;
  add_to_txq(slot);
}

void Endpoint::add_to_txq(SSlot& slot) {
  if (slot.client.in_txq) return;
  slot.client.in_txq = true;
  txq_.push_back(&slot);
}

void Endpoint::update_slot_state(SSlot& slot) {
  const proto::ClientWireState& w = slot.client.wire;
  if (w.num_resp_pkts == 0) {
    slot.state = w.num_tx < w.num_req_pkts ? SlotState::kSendingReq : SlotState::kAwaitingResp;
  } else {
    slot.state = SlotState::kSendingRfrs;
  }
}

void Endpoint::arm_rto(SSlot& slot) {
  next_rto_check_ = std::min(next_rto_check_, slot.client.wire.rto_deadline);
}

void Endpoint::transmit_or_schedule(Session& s, SSlot& slot, const proto::TxDesc& d) {
  ClientSlotInfo& c = slot.client;
  if (s.cc) {
    const bool data = d.type == PktType::kReqData;
    const size_t bytes = kHeaderSize + (data ? c.req->pkt_data_range(d.pkt_num).length : 0);
    WheelEntry e{s.local_num(), slot.index, slot.cur_req_num, d, data ? c.req : nullptr};
    const ScheduleResult r =
        schedule_or_bypass(*wheel_, *s.cc, e, bytes, clock_->now(), cfg_.opt);
    if (r.decision == TxDecision::kScheduled) {
      clock_->charge(CostModel::ns(cfg_.cost.wheel_ns));
      stats_.wheel_inserts++;
      if (data) c.req->retain_tx();
      c.in_wheel++;
      if (d.retransmit) c.retx_in_wheel++;
      return;
    }
  }
  emit_client_packet(s, slot, d);
}

void Endpoint::emit_client_packet(Session& s, SSlot& slot, const proto::TxDesc& d) {
  ClientSlotInfo& c = slot.client;
  PacketHeader h;
  h.version = kWireVersion;
  h.pkt_type = d.type;
  h.req_type = c.req_type;
  h.session_num = s.remote_num();
  h.pkt_num = d.pkt_num;
  h.req_num = slot.cur_req_num;
  h.msg_size = static_cast<uint32_t>(c.req->data_size());

  TxPacket p;
  p.dest = s.remote();
  if (d.type == PktType::kReqData) {
    pack_header(h, c.req->header_region(d.pkt_num));
    std::memcpy(p.header.data(), c.req->header_region(d.pkt_num).data(), kHeaderSize);
    p.payload = c.req->pkt_data(d.pkt_num);
    p.owner = c.req;
    stats_.req_pkts_tx++;
  } else {
    p.header = pack_header(h);
    stats_.rfr_tx++;
  }
  c.tx_ts[d.tx_index % c.tx_ts.size()] = ts_.stamp();
  if (d.retransmit) {
    need_flush_ = true;
    stats_.retransmitted_pkts++;
  }
  clock_->charge(CostModel::ns(cfg_.cost.tx_pkt_ns));
  stats_.pkts_tx++;
  tx_batch_.push_back(p);
}

void Endpoint::on_client_pkt(Session& s, const PacketHeader& h,
                             std::span<const std::byte> payload) {
  SSlot& slot = s.slot(h.req_num % s.num_slots());
  ClientSlotInfo& c = slot.client;
  if (slot.state == SlotState::kFree) {
    stats_.drops_stale++;
    return;
  }
  // A response must not complete the request while a retransmitted packet
  // of it still waits in the rate limiter holding the request msgbuf.
  if (h.pkt_type == PktType::kRespData && c.retx_in_wheel > 0) {
    stats_.drops_resp_retx_queued++;
    return;
  }

  const proto::ClientRxResult r = proto::client_rx_step(c.wire, s.credits, h, slot.cur_req_num, mtu_);
  switch (r.verdict) {
    case proto::ClientRxVerdict::kDrop:
      switch (r.reason) {
        case proto::DropReason::kReordered: stats_.drops_reordered++; break;
        case proto::DropReason::kStale: stats_.drops_stale++; break;
        default: stats_.drops_unexpected++; break;
      }
      return;
    case proto::ClientRxVerdict::kProtocolError:
      teardown_protocol_error(s);
      return;
    default:
      break;
  }

  const Timestamp rx_ts = ts_.stamp();
  const Timestamp tx_ts = c.tx_ts[r.rx_index % c.tx_ts.size()];
  const double rtt_us = std::max(to_usec(rx_ts - tx_ts), 1e-3);
  if (cfg_.record_rtt) rtt_samples_.push_back(rtt_us);
  if (s.cc) {
    const bool bypassed = s.cc->timely.record_rtt_and_update(rtt_us, rx_ts, cfg_.opt.timely_bypass);
    if (!bypassed) {
      clock_->charge(CostModel::ns(cfg_.cost.cc_update_ns));
      stats_.cc_updates++;
    }
  }

  if (r.verdict == proto::ClientRxVerdict::kResponse) {
    if (r.first_response) {
      c.error_resp = (h.flags & kFlagErrorResponse) != 0;
      MsgBuf& resp = *c.resp;
      if (!resp.valid() || resp.capacity() < h.msg_size || resp.mtu_data() != mtu_) {
        resp = MsgBuf::alloc(std::max<size_t>(h.msg_size, 1), mtu_);
        resp.lock();
        clock_->charge(CostModel::ns(cfg_.cost.alloc_ns));
      }
      resp.resize(h.msg_size);
    }
    try {
      proto::reassemble(*c.resp, h, payload);
    } catch (const ProtocolError&) {
      teardown_protocol_error(s);
      return;
    }
    clock_->charge(cfg_.cost.copy(payload.size()));
  }

  if (r.complete) {
    complete_request(slot, c.error_resp ? RpcStatus::kProtocolError : RpcStatus::kOk);
    return;
  }
  update_slot_state(slot);
  if (c.wire.has_pending_tx()) add_to_txq(slot);
}

void Endpoint::complete_request(SSlot& slot, RpcStatus status) {
  ClientSlotInfo& c = slot.client;
  Session& s = *slot.session;
  if (c.req->tx_refs() != 0) stats_.audit_violations++;

  Continuation cont = std::move(c.cont);
  MsgBuf* req = c.req;
  MsgBuf* resp = c.resp;
  const uint32_t leftover = c.wire.in_flight();
  if (leftover > 0) s.credits.reclaim(leftover);

  c.cont = nullptr;
  c.req = nullptr;
  c.resp = nullptr;
  c.wire = proto::ClientWireState{};
  slot.cur_req_num += s.num_slots();
  slot.state = SlotState::kFree;
  req->unlock();
  resp->unlock();

  // Backlogged requests take the freed slot before the continuation can
  // issue new ones, keeping issue order.
  if (s.state == SessionState::kConnected) {
    drain_backlog(s, [this](SSlot& sl, PendingRequest&& p) { start_request(sl, std::move(p)); });
  }
  stats_.continuations++;
  cont(status, *resp);
}

// ---------------------------------------------------------------------------
// Server side

void Endpoint::on_server_pkt(Session& s, const PacketHeader& h,
                             std::span<const std::byte> payload) {
  if (s.state != SessionState::kConnected) {
    stats_.drops_bad_session++;
    return;
  }
  SSlot& slot = s.slot(h.req_num % s.num_slots());
  ServerSlotInfo& sv = slot.server;
  const proto::ServerRxResult r = proto::server_rx_step(sv.wire, h, mtu_);

  if (r.new_request) {
    // A previous response may still sit in the transmit queue.
    if (sv.prealloc.tx_refs() > 0 || sv.dyn_resp.tx_refs() > 0) flush_transport();
    sv.dyn_resp = MsgBuf{};
    sv.resp = nullptr;
    sv.error_resp = false;
    sv.req_zero_copy = false;
    sv.handle = ReqHandle{};
    sv.handle.ep_ = this;
    sv.handle.session_ = &s;
    sv.handle.slot_ = &slot;
    sv.handle.req_type_ = h.req_type;

    const auto it = handlers_.find(h.req_type);
    const bool dispatch_mode = it != handlers_.end() && it->second.mode == HandlerMode::kDispatch;
    if (sv.wire.num_req_pkts == 1 && dispatch_mode && cfg_.opt.zero_copy_rx) {
      sv.req_zero_copy = true;
      sv.req_buf = MsgBuf{};
    } else {
      sv.req_buf = MsgBuf::alloc(std::max<size_t>(h.msg_size, 1), mtu_);
      sv.req_buf.resize(h.msg_size);
      clock_->charge(CostModel::ns(cfg_.cost.alloc_ns));
    }
  }

  switch (r.action) {
    case proto::ServerAction::kDrop:
      switch (r.reason) {
        case proto::DropReason::kReordered: stats_.drops_reordered++; break;
        case proto::DropReason::kStale: stats_.drops_stale++; break;
        case proto::DropReason::kBusy: stats_.drops_busy++; break;
        default: stats_.drops_unexpected++; break;
      }
      return;
    case proto::ServerAction::kProtocolError:
      teardown_protocol_error(s);
      return;
    case proto::ServerAction::kSendCr:
    case proto::ServerAction::kDispatch:
      if (!sv.req_zero_copy) {
        try {
          proto::reassemble(sv.req_buf, h, payload);
        } catch (const ProtocolError&) {
          teardown_protocol_error(s);
          return;
        }
        clock_->charge(cfg_.cost.copy(payload.size()));
      } else if (payload.size() != h.msg_size) {
        teardown_protocol_error(s);
        return;
      }
      if (r.action == proto::ServerAction::kSendCr) {
        emit_server_packet(s, slot, PktType::kCreditReturn, r.pkt_num);
      } else {
        dispatch(s, slot, sv.req_zero_copy ? payload : std::span<const std::byte>{});
      }
      return;
    case proto::ServerAction::kResendCr:
      emit_server_packet(s, slot, PktType::kCreditReturn, r.pkt_num);
      return;
    case proto::ServerAction::kResendResp:
    case proto::ServerAction::kSendResp:
      emit_server_packet(s, slot, PktType::kRespData, r.pkt_num);
      return;
  }
}

void Endpoint::dispatch(Session& s, SSlot& slot, std::span<const std::byte> zero_copy_req) {
  ServerSlotInfo& sv = slot.server;
  ReqHandle& h = sv.handle;
  h.request_ = sv.req_zero_copy ? zero_copy_req : sv.req_buf.data();
  if (sv.req_zero_copy) {
    stats_.zero_copy_requests++;
  } else {
    stats_.copied_requests++;
  }

  const auto it = handlers_.find(h.req_type_);
  if (it == handlers_.end()) {
    sv.error_resp = true;
    init_response(h, 0);
    send_response(h);
    return;
  }
  const Registered& reg = it->second;
  stats_.handler_invocations++;

  if (reg.mode == HandlerMode::kDispatch) {
    h.in_worker_ = false;
    reg.fn(h);
    clock_->charge(h.charged_);
    h.charged_ = Duration::zero();
    if (!h.responded_ && sv.req_zero_copy) {
      // The receive buffer goes back to the NIC; keep a private copy.
      sv.req_buf = MsgBuf::alloc(std::max<size_t>(zero_copy_req.size(), 1), mtu_);
      sv.req_buf.resize(zero_copy_req.size());
      if (!zero_copy_req.empty()) {
        std::memcpy(sv.req_buf.backing() + sv.req_buf.data_offset(), zero_copy_req.data(),
                    zero_copy_req.size());
      }
      clock_->charge(CostModel::ns(cfg_.cost.alloc_ns) + cfg_.cost.copy(zero_copy_req.size()));
      sv.req_zero_copy = false;
      h.request_ = sv.req_buf.data();
    }
    return;
  }

  h.in_worker_ = true;
  (void)s;
  if (pool_) {
    const RequestHandler* fn = &reg.fn;
    ReqHandle* hp = &h;
    pool_->submit([this, fn, hp] {
      (*fn)(*hp);
      if (!hp->responded_) {
        init_response(*hp, 0);
        enqueue_response(*hp);
      }
    });
    return;
  }
  // Modeled worker: run now, hand the response back once the charged time
  // has passed.
  reg.fn(h);
  if (!h.responded_) {
    init_response(h, 0);
    enqueue_response(h);
  }
}

MsgBuf& Endpoint::init_response(ReqHandle& h, size_t size) {
  if (size > kMaxMsgSize) throw SizeError("response larger than 8 MiB");
  if (h.responded_) throw std::logic_error("response already enqueued");
  ServerSlotInfo& sv = h.slot_->server;
  const bool off_thread = h.in_worker_ && pool_;
  if (cfg_.opt.preallocated_responses && size <= mtu_ && sv.prealloc.valid()) {
    sv.prealloc.resize(size);
    sv.resp = &sv.prealloc;
    if (!off_thread) stats_.prealloc_responses++;
  } else {
    sv.dyn_resp = MsgBuf::alloc(std::max<size_t>(size, 1), mtu_);
    sv.dyn_resp.resize(size);
    sv.resp = &sv.dyn_resp;
    const Duration cost = CostModel::ns(cfg_.cost.alloc_ns);
    if (h.in_worker_) {
      h.charged_ += cost;
    } else {
      clock_->charge(cost);
    }
    if (!off_thread) stats_.dynamic_responses++;
  }
  return *sv.resp;
}

void Endpoint::enqueue_response(ReqHandle& h) {
  if (h.ep_ != this) throw std::logic_error("request handle belongs to another endpoint");
  if (h.responded_) throw std::logic_error("response already enqueued for this request");
  if (h.slot_->server.resp == nullptr) init_response(h, 0);
  h.responded_ = true;
  if (h.in_worker_) {
    if (pool_) {
      worker_done_.push(&h);
      transport_->wake();
    } else {
      deferred_.push_back({clock_->now() + h.charged_, deferred_seq_++, &h});
      std::push_heap(deferred_.begin(), deferred_.end(), std::greater<>{});
    }
    return;
  }
  send_response(h);
}

void Endpoint::send_response(ReqHandle& h) {
  Session& s = *h.session_;
  SSlot& slot = *h.slot_;
  ServerSlotInfo& sv = slot.server;
  h.request_ = {};
  sv.req_buf = MsgBuf{};
  proto::server_set_responded(sv.wire, static_cast<uint32_t>(sv.resp->data_size()), mtu_);
  if (s.state != SessionState::kConnected) return;
  emit_server_packet(s, slot, PktType::kRespData, 0);
}

void Endpoint::emit_server_packet(Session& s, SSlot& slot, PktType type, uint16_t pkt_num) {
  ServerSlotInfo& sv = slot.server;
  PacketHeader h;
  h.version = kWireVersion;
  h.pkt_type = type;
  h.req_type = sv.handle.req_type_;
  h.session_num = s.remote_num();
  h.pkt_num = pkt_num;
  h.req_num = sv.wire.req_num;

  TxPacket p;
  p.dest = s.remote();
  if (type == PktType::kRespData) {
    MsgBuf& resp = *sv.resp;
    h.msg_size = static_cast<uint32_t>(resp.data_size());
    if (sv.error_resp) h.flags |= kFlagErrorResponse;
    pack_header(h, resp.header_region(pkt_num));
    std::memcpy(p.header.data(), resp.header_region(pkt_num).data(), kHeaderSize);
    p.payload = resp.pkt_data(pkt_num);
    p.owner = &resp;
    stats_.resp_pkts_tx++;
  } else {
    h.msg_size = sv.wire.req_msg_size;
    p.header = pack_header(h);
    stats_.cr_tx++;
  }
  clock_->charge(CostModel::ns(cfg_.cost.tx_pkt_ns));
  stats_.pkts_tx++;
  tx_batch_.push_back(p);
}

// ---------------------------------------------------------------------------
// Event loop

void Endpoint::run_event_loop_once() {
  clock_->charge(CostModel::ns(cfg_.cost.loop_ns));
  stats_.loop_iterations++;
  process_control(clock_->now());
  process_rx();
  process_worker_completions();
  rto_scan(clock_->now());
  process_txq();
  poll_wheel();
  process_failing();
  flush_tx_batch();
}

void Endpoint::run_event_loop(Duration d) {
  const Timestamp end = clock_->now() + d;
  while (clock_->now() < end) run_event_loop_once();
}

void Endpoint::process_control(Timestamp now) {
  ControlMsg msg;
  while (transport_->poll_control(msg)) handle_mgmt(msg, now);

  for (auto it = connecting_.begin(); it != connecting_.end();) {
    Session* s = find(it->first);
    ConnectInfo& ci = it->second;
    if (now - ci.started >= cfg_.connect_timeout) {
      it = connecting_.erase(it);
      fail_session(*s, RpcStatus::kTimeout);
      emit_sm(s->local_num(), SmEvent::kConnectFailed);
      continue;
    }
    if (now >= ci.next_retry) {
      ci.next_retry = now + cfg_.connect_retry;
      MgmtMsg m;
      m.type = MgmtType::kConnectReq;
      m.client_session = s->local_num();
      m.credits = static_cast<uint16_t>(s->credits.budget());
      m.num_slots = static_cast<uint16_t>(s->num_slots());
      m.mtu_data = static_cast<uint32_t>(mtu_);
      send_mgmt(s->remote(), m);
    }
    ++it;
  }

  for (auto& [addr, p] : peers_) {
    if (p.sessions == 0 || p.dead) continue;
    if (now - p.last_heard > cfg_.failure_timeout) {
      handle_node_failure(addr);
      continue;
    }
    if (now >= p.next_heartbeat) {
      p.next_heartbeat = now + cfg_.heartbeat_period;
      MgmtMsg m;
      m.type = MgmtType::kHeartbeat;
      send_mgmt(addr, m);
    }
  }
}

void Endpoint::handle_mgmt(const ControlMsg& msg, Timestamp now) {
  MgmtMsg m;
  try {
    m = decode_mgmt(msg.bytes);
  } catch (const CodecError&) {
    stats_.drops_codec++;
    return;
  }
  PeerState& p = peer(msg.src);
  if (p.dead && m.type != MgmtType::kConnectReq) return;
  p.last_heard = now;

  switch (m.type) {
    case MgmtType::kConnectReq: {
      MgmtMsg resp = m;
      resp.type = MgmtType::kConnectResp;
      const auto key = std::make_pair(msg.src, m.client_session);
      if (auto it = accepted_.find(key); it != accepted_.end()) {
        resp.server_session = it->second;
        resp.status = MgmtStatus::kOk;
      } else if (m.mtu_data != mtu_ || m.credits == 0 || !is_power_of_two(m.num_slots)) {
        resp.status = MgmtStatus::kBadConfig;
      } else if (credit_commitment_ + m.credits > transport_->rx_queue_size()) {
        resp.status = MgmtStatus::kNoRxBudget;
      } else {
        Session* s = make_session(Role::kServer, msg.src, m.credits, m.num_slots);
        s->set_remote_num(m.client_session);
        s->state = SessionState::kConnected;
        accepted_[key] = s->local_num();
        resp.server_session = s->local_num();
        resp.status = MgmtStatus::kOk;
      }
      send_mgmt(msg.src, resp);
      return;
    }
    case MgmtType::kConnectResp: {
      Session* s = find(m.client_session);
      if (s == nullptr || !s->is_client() || s->state != SessionState::kConnecting ||
          s->remote() != msg.src) {
        return;
      }
      connecting_.erase(s->local_num());
      if (m.status != MgmtStatus::kOk) {
        fail_session(*s, RpcStatus::kTimeout);
        emit_sm(s->local_num(), SmEvent::kConnectFailed);
        return;
      }
      s->set_remote_num(m.server_session);
      s->state = SessionState::kConnected;
      drain_backlog(*s, [this](SSlot& sl, PendingRequest&& pr) { start_request(sl, std::move(pr)); });
      emit_sm(s->local_num(), SmEvent::kConnected);
      return;
    }
    case MgmtType::kHeartbeat:
      return;
    case MgmtType::kDisconnect: {
      // From a client: it closed the session. From a server: it tore the
      // session down after a protocol error.
      Session* srv = find(m.server_session);
      if (srv != nullptr && !srv->is_client() && srv->remote() == msg.src &&
          srv->remote_num() == m.client_session) {
        fail_session(*srv, RpcStatus::kNodeFailure);
        return;
      }
      Session* cli = find(m.client_session);
      if (cli != nullptr && cli->is_client() && cli->remote() == msg.src &&
          cli->remote_num() == m.server_session) {
        stats_.protocol_errors++;
        fail_session(*cli, RpcStatus::kProtocolError);
      }
      return;
    }
  }
}

void Endpoint::process_rx() {
  rx_pkts_.clear();
  const size_t n = transport_->rx_burst(cfg_.rx_batch, rx_pkts_);
  if (n == 0) return;
  ts_.batch_timestamp();
  for (const RxPacket& p : rx_pkts_) {
    clock_->charge(CostModel::ns(cfg_.cost.rx_pkt_ns));
    stats_.pkts_rx++;
    PacketHeader h;
    bool ok = p.bytes.size() >= kHeaderSize;
    if (ok) {
      try {
        h = unpack_header(p.bytes.first(kHeaderSize));
      } catch (const CodecError&) {
        ok = false;
      }
    }
    if (!ok || h.version != kWireVersion) {
      stats_.drops_codec++;
      transport_->release_rx(p.desc);
      continue;
    }
    const auto payload = p.bytes.subspan(kHeaderSize);
    Session* s = find(h.session_num);
    const bool to_server =
        h.pkt_type == PktType::kReqData || h.pkt_type == PktType::kRequestForResponse;
    if (s == nullptr || s->remote() != p.src || s->is_client() == to_server ||
        s->state == SessionState::kDisconnected) {
      stats_.drops_bad_session++;
    } else if (to_server) {
      on_server_pkt(*s, h, payload);
    } else {
      on_client_pkt(*s, h, payload);
    }
    transport_->release_rx(p.desc);
  }
}

void Endpoint::process_worker_completions() {
  if (pool_) {
    worker_scratch_.clear();
    worker_done_.drain(worker_scratch_);
    for (ReqHandle* h : worker_scratch_) {
      if (h->slot_->server.resp != nullptr) {
        if (h->slot_->server.resp == &h->slot_->server.prealloc) {
          stats_.prealloc_responses++;
        } else {
          stats_.dynamic_responses++;
        }
      }
      send_response(*h);
    }
    return;
  }
  const Timestamp now = clock_->now();
  while (!deferred_.empty() && deferred_.front().ready <= now) {
    std::pop_heap(deferred_.begin(), deferred_.end(), std::greater<>{});
    ReqHandle* h = deferred_.back().handle;
    deferred_.pop_back();
    send_response(*h);
  }
}

void Endpoint::rto_scan(Timestamp now) {
  if (now < next_rto_check_) return;
  Timestamp next = kNever;
  for (auto& sp : sessions_) {
    Session& s = *sp;
    if (!s.is_client() || s.state != SessionState::kConnected) continue;
    for (SSlot& slot : s.slots()) {
      if (slot.state == SlotState::kFree) continue;
      ClientSlotInfo& c = slot.client;
      // Packets still in the rate limiter have not left yet.
      if (c.in_wheel > 0) continue;
      if (c.wire.rto_deadline <= now) {
        const uint32_t n = proto::detect_loss_and_rollback(c.wire, s.credits, now);
        if (n > 0) {
          stats_.retransmit_events++;
          update_slot_state(slot);
          add_to_txq(slot);
        }
      }
      next = std::min(next, c.wire.rto_deadline);
    }
  }
  next_rto_check_ = next;
}

void Endpoint::process_txq() {
  if (txq_.empty()) return;
  txq_scratch_.clear();
  std::swap(txq_, txq_scratch_);
  bool stamped = false;
  for (SSlot* slot : txq_scratch_) {
    Session& s = *slot->session;
    ClientSlotInfo& c = slot->client;
    if (slot->state == SlotState::kFree || s.state != SessionState::kConnected ||
        !c.wire.has_pending_tx()) {
      c.in_txq = false;
      continue;
    }
    if (s.credits.available() == 0) {
      txq_.push_back(slot);
      continue;
    }
    if (!stamped) {
      ts_.batch_timestamp();
      stamped = true;
    }
    desc_scratch_.clear();
    proto::client_tx_step(c.wire, s.credits, clock_->now(), cfg_.rto, desc_scratch_);
    arm_rto(*slot);
    for (const proto::TxDesc& d : desc_scratch_) transmit_or_schedule(s, *slot, d);
    update_slot_state(*slot);
    if (c.wire.has_pending_tx()) {
      txq_.push_back(slot);
    } else {
      c.in_txq = false;
    }
  }
}

void Endpoint::poll_wheel() {
  if (wheel_->empty()) return;
  released_.clear();
  wheel_->poll(clock_->now(), released_);
  if (released_.empty()) return;
  ts_.batch_timestamp();
  for (const WheelEntry& e : released_) {
    clock_->charge(CostModel::ns(cfg_.cost.wheel_ns));
    Session* s = find(e.session);
    SSlot& slot = s->slot(e.slot);
    ClientSlotInfo& c = slot.client;
    if (s->cc) s->cc->queued--;
    if (e.owner != nullptr) e.owner->release_tx();
    if (slot.state == SlotState::kFree || slot.cur_req_num != e.req_num) continue;
    c.in_wheel--;
    if (e.desc.retransmit) c.retx_in_wheel--;
    if (s->state != SessionState::kConnected && s->state != SessionState::kFailing) continue;
    emit_client_packet(*s, slot, e.desc);
    c.wire.rto_deadline = clock_->now() + cfg_.rto;
    arm_rto(slot);
  }
}

void Endpoint::process_failing() {
  if (failing_.empty()) return;
  std::vector<std::pair<Session*, RpcStatus>> ready;
  std::erase_if(failing_, [&](const std::pair<Session*, RpcStatus>& f) {
    Session& s = *f.first;
    bool done;
    if (s.is_client()) {
      done = !s.cc || s.cc->queued == 0;
    } else {
      done = std::none_of(s.slots().begin(), s.slots().end(), [](const SSlot& sl) {
        return sl.server.wire.stage == proto::ServerStage::kRunning;
      });
    }
    if (done) ready.push_back(f);
    return done;
  });
  if (ready.empty()) return;

  // Queued packets have left the rate limiter; now make sure the transmit
  // queue drops its references too.
  flush_tx_batch();
  flush_transport();
  for (auto& [sp, status] : ready) {
    Session& s = *sp;
    const uint16_t num = s.local_num();
    if (s.is_client()) {
      std::erase_if(txq_, [&](SSlot* slot) { return slot->session == &s; });
      for (SSlot& slot : s.slots()) {
        slot.client.in_txq = false;
        if (slot.state != SlotState::kFree) complete_request(slot, status);
      }
      while (!s.backlog.empty()) {
        PendingRequest p = std::move(s.backlog.front());
        s.backlog.pop_front();
        p.req->unlock();
        p.resp->unlock();
        stats_.continuations++;
        p.cont(status, *p.resp);
      }
    }
    release_session(s);
    emit_sm(num, SmEvent::kDisconnected);
  }
}

void Endpoint::flush_tx_batch() {
  if (!tx_batch_.empty()) {
    transport_->tx_burst(tx_batch_);
    tx_batch_.clear();
  }
  if (need_flush_) {
    need_flush_ = false;
    flush_transport();
  }
}

Timestamp Endpoint::next_wakeup() const {
  const Timestamp now = clock_->now();
  for (const SSlot* slot : txq_) {
    const Session& s = *slot->session;
    if (slot->state == SlotState::kFree || s.state != SessionState::kConnected) return now;
    if (s.credits.available() > 0) return now;
  }
  for (const auto& [sp, status] : failing_) {
    const Session& s = *sp;
    if (s.is_client() && (!s.cc || s.cc->queued == 0)) return now;
  }
  if (pool_ && !worker_done_.empty()) return now;

  Timestamp t = std::min(wheel_->next_due(), next_rto_check_);
  if (!deferred_.empty()) t = std::min(t, deferred_.front().ready);
  for (const auto& [addr, p] : peers_) {
    if (p.sessions == 0 || p.dead) continue;
    t = std::min({t, p.next_heartbeat, p.last_heard + cfg_.failure_timeout + Duration(1)});
  }
  for (const auto& [num, ci] : connecting_) {
    t = std::min({t, ci.next_retry, ci.started + cfg_.connect_timeout});
  }
  return std::max(t, now);
}

}  // namespace dgrpc
