#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "dgrpc/clock.h"
#include "dgrpc/congestion.h"
#include "dgrpc/cost_model.h"
#include "dgrpc/mgmt.h"
#include "dgrpc/msgbuf.h"
#include "dgrpc/session.h"
#include "dgrpc/timely.h"
#include "dgrpc/timing_wheel.h"
#include "dgrpc/transport.h"
#include "dgrpc/worker_pool.h"

namespace dgrpc {

enum class HandlerMode : uint8_t { kDispatch, kWorker };

using RequestHandler = std::function<void(ReqHandle&)>;

enum class SmEvent : uint8_t { kConnected, kConnectFailed, kDisconnected };
using SmHandler = std::function<void(uint16_t session_num, SmEvent)>;

/// One packet waiting in the rate limiter.
struct WheelEntry {
  uint16_t session = 0;
  uint32_t slot = 0;
  uint32_t req_num = 0;
  proto::TxDesc desc;
  const MsgBuf* owner = nullptr;
};

struct EndpointConfig {
  uint32_t credits = kDefaultCredits;
  uint32_t num_slots = kDefaultNumSlots;
  Duration rto = kDefaultRto;
  Duration heartbeat_period = std::chrono::milliseconds(100);
  Duration failure_timeout = std::chrono::milliseconds(500);
  Duration connect_retry = std::chrono::milliseconds(20);
  Duration connect_timeout = std::chrono::seconds(1);
  size_t rx_batch = 32;
  double link_rate_bps = 25e9;
  Duration wheel_slot = std::chrono::microseconds(10);
  Duration wheel_horizon = std::chrono::milliseconds(10);
  CongestionKnobs cc;
  OptimizationFlags opt;
  CostModel cost;
  // 0 runs worker-mode handlers inline and defers their responses by the
  // time they charge (virtual clocks only); otherwise a thread pool.
  size_t worker_threads = 0;
  bool record_rtt = false;

  void validate() const;
};

struct EndpointStats {
  uint64_t loop_iterations = 0;
  uint64_t pkts_tx = 0;
  uint64_t pkts_rx = 0;
  uint64_t req_pkts_tx = 0;
  uint64_t rfr_tx = 0;
  uint64_t cr_tx = 0;
  uint64_t resp_pkts_tx = 0;
  uint64_t retransmit_events = 0;  // RTO expiries that rolled something back
  uint64_t retransmitted_pkts = 0;
  uint64_t flushes = 0;
  uint64_t drops_reordered = 0;
  uint64_t drops_stale = 0;
  uint64_t drops_busy = 0;
  uint64_t drops_unexpected = 0;
  uint64_t drops_bad_session = 0;
  uint64_t drops_codec = 0;
  uint64_t drops_resp_retx_queued = 0;  // response dropped: retransmission still in the wheel
  uint64_t protocol_errors = 0;
  uint64_t audit_violations = 0;
  uint64_t handler_invocations = 0;
  uint64_t continuations = 0;
  uint64_t zero_copy_requests = 0;
  uint64_t copied_requests = 0;
  uint64_t prealloc_responses = 0;
  uint64_t dynamic_responses = 0;
  uint64_t wheel_inserts = 0;
  uint64_t cc_updates = 0;
  uint64_t node_failures = 0;
};

/// An RPC endpoint. Owned by one thread, which must call
/// run_event_loop_once() (or run_event_loop) for any progress.
class Endpoint {
 public:
  Endpoint(Transport& transport, EndpointClock& clock, EndpointConfig cfg = {});
  ~Endpoint();
  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  const EndpointConfig& config() const { return cfg_; }
  EndpointAddr addr() const { return transport_->local_addr(); }
  size_t mtu_data() const { return mtu_; }

  /// Throws ConfigError if req_type already has a handler.
  void register_handler(uint8_t req_type, RequestHandler handler, HandlerMode mode);
  void set_sm_handler(SmHandler h) { sm_handler_ = std::move(h); }

  /// Starts connecting a client session. Throws SessionError when the
  /// credit budget over all sessions would exceed the receive queue size.
  uint16_t create_session(EndpointAddr remote, std::optional<uint32_t> credits = {},
                          std::optional<uint32_t> num_slots = {});
  /// Tears down an idle client session.
  void destroy_session(uint16_t session_num);
  bool is_connected(uint16_t session_num) const;
  const Session* session(uint16_t session_num) const;
  size_t num_sessions() const;
  size_t credit_commitment() const { return credit_commitment_; }

  /// Msgbuf sized for this endpoint's MTU.
  MsgBuf alloc_msg_buffer(size_t size) const { return MsgBuf::alloc(size, mtu_); }

  /// Queues a request. Both msgbufs belong to the endpoint until `cont`
  /// runs; `resp` is grown if the response does not fit. On a session that
  /// is not usable, `cont` runs before this returns with NodeFailure.
  /// Returns a ticket identifying the request.
  uint64_t enqueue_request(uint16_t session_num, uint8_t req_type, MsgBuf& req, MsgBuf& resp,
                           Continuation cont);

  /// Sends the response prepared with h.init_response(). A handler may call
  /// this after returning (e.g. from a nested RPC's continuation), except in
  /// worker mode. Throws std::logic_error on a second call.
  void enqueue_response(ReqHandle& h);

  void run_event_loop_once();
  /// Runs iterations until `d` has elapsed on the endpoint's clock.
  void run_event_loop(Duration d);

  /// Earliest time at which running the loop can make progress without new
  /// input. now() if there is work pending.
  Timestamp next_wakeup() const;

  /// Declares `remote` dead and fails or frees every session with it.
  void handle_node_failure(EndpointAddr remote);

  const EndpointStats& stats() const { return stats_; }
  const std::vector<double>& rtt_samples_us() const { return rtt_samples_; }
  void clear_rtt_samples() { rtt_samples_.clear(); }
  const TimingWheel<WheelEntry>& wheel() const { return *wheel_; }

 private:
  friend class ReqHandle;

  struct PeerState {
    uint32_t sessions = 0;
    Timestamp last_heard{0};
    Timestamp next_heartbeat{0};
    bool dead = false;
  };

  struct Registered {
    RequestHandler fn;
    HandlerMode mode;
  };

  struct DeferredResponse {
    Timestamp ready;
    uint64_t seq;
    ReqHandle* handle;
    bool operator>(const DeferredResponse& o) const {
      return ready != o.ready ? ready > o.ready : seq > o.seq;
    }
  };

  struct ConnectInfo {
    Timestamp started{0};
    Timestamp next_retry{0};
  };

  Session* find(uint16_t num);
  Session* make_session(Role role, EndpointAddr remote, uint32_t credits, uint32_t slots);
  void release_session(Session& s);
  PeerState& peer(EndpointAddr a);
  void emit_sm(uint16_t num, SmEvent ev);

  // Event-loop stages.
  void process_control(Timestamp now);
  void handle_mgmt(const ControlMsg& msg, Timestamp now);
  void process_rx();
  void process_worker_completions();
  void rto_scan(Timestamp now);
  void process_txq();
  void poll_wheel();
  void process_failing();
  void flush_tx_batch();

  // Client side.
  void start_request(SSlot& slot, PendingRequest&& p);
  void add_to_txq(SSlot& slot);
  void transmit_or_schedule(Session& s, SSlot& slot, const proto::TxDesc& d);
  void emit_client_packet(Session& s, SSlot& slot, const proto::TxDesc& d);
  void on_client_pkt(Session& s, const PacketHeader& h, std::span<const std::byte> payload);
  void complete_request(SSlot& slot, RpcStatus status);
  void update_slot_state(SSlot& slot);
  void arm_rto(SSlot& slot);

  // Server side.
  void on_server_pkt(Session& s, const PacketHeader& h, std::span<const std::byte> payload);
  void dispatch(Session& s, SSlot& slot, std::span<const std::byte> zero_copy_req);
  void send_response(ReqHandle& h);
  void emit_server_packet(Session& s, SSlot& slot, PktType type, uint16_t pkt_num);
  MsgBuf& init_response(ReqHandle& h, size_t size);

  void fail_session(Session& s, RpcStatus status);
  void teardown_protocol_error(Session& s);
  void send_mgmt(EndpointAddr dest, const MgmtMsg& m);
  void flush_transport();

  Transport* transport_;
  EndpointClock* clock_;
  EndpointConfig cfg_;
  size_t mtu_;
  RttTimestamper ts_;
  std::unique_ptr<TimingWheel<WheelEntry>> wheel_;

  std::vector<std::unique_ptr<Session>> sessions_;  // numbers are never reused
  size_t credit_commitment_ = 0;
  std::map<EndpointAddr, PeerState> peers_;
  std::map<std::pair<EndpointAddr, uint16_t>, uint16_t> accepted_;  // (peer, client sess) -> ours
  std::map<uint16_t, ConnectInfo> connecting_;
  std::vector<std::pair<Session*, RpcStatus>> failing_;

  std::map<uint8_t, Registered> handlers_;
  SmHandler sm_handler_;

  std::vector<SSlot*> txq_;
  std::vector<SSlot*> txq_scratch_;
  std::vector<proto::TxDesc> desc_scratch_;
  std::vector<TxPacket> tx_batch_;
  std::vector<RxPacket> rx_pkts_;
  std::vector<WheelEntry> released_;
  bool need_flush_ = false;
  Timestamp next_rto_check_ = kNever;

  std::vector<DeferredResponse> deferred_;  // min-heap on ready time
  uint64_t deferred_seq_ = 0;
  std::unique_ptr<WorkerPool> pool_;
  MpscQueue<ReqHandle*> worker_done_;
  std::vector<ReqHandle*> worker_scratch_;

  uint64_t next_ticket_ = 1;
  EndpointStats stats_;
  std::vector<double> rtt_samples_;
};

}  // namespace dgrpc
