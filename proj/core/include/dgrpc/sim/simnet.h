#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <vector>

#include "dgrpc/clock.h"
#include "dgrpc/packet_header.h"
#include "dgrpc/sim/config.h"
#include "dgrpc/transport.h"

namespace dgrpc::sim {

class SimNet;

/// Whatever runs on a simulated host, typically an Endpoint plus
/// application logic. run_once() executes one event-loop iteration on the
/// host's virtual clock.
class SimNode {
 public:
  virtual ~SimNode() = default;
  virtual void run_once() = 0;
  virtual Timestamp next_wakeup() const = 0;
};

struct PacketInfo {
  uint32_t src = 0;
  uint32_t dst = 0;
  bool has_header = false;
  PacketHeader header;
  size_t bytes = 0;
  Timestamp now{0};
};

struct FaultAction {
  bool drop = false;
  Duration delay{0};
};

/// Consulted once per packet as it reaches its destination host.
using FaultHook = std::function<FaultAction(const PacketInfo&)>;

struct PortStats {
  uint64_t delivered_pkts = 0;
  uint64_t delivered_bytes = 0;
  uint64_t drops = 0;
  uint64_t queue_bytes = 0;
  uint64_t peak_queue_bytes = 0;
};

struct NetStats {
  uint64_t events = 0;
  uint64_t pkts_sent = 0;
  uint64_t loss_drops = 0;
  uint64_t fault_drops = 0;
  uint64_t fault_delays = 0;
  uint64_t dead_drops = 0;
  uint64_t switch_drops = 0;
  uint64_t reordered = 0;
  uint64_t buffer_bytes = 0;
  uint64_t peak_buffer_bytes = 0;
  uint64_t buffer_violations = 0;
  uint64_t control_msgs = 0;
};

/// Transport of one simulated host. Transmissions enter the host's NIC
/// queue, which keeps msgbuf references until the packet's bytes are read
/// out when its serialization starts (or on flush_tx).
class SimTransport final : public Transport {
 public:
  SimTransport(SimNet& net, uint32_t host, size_t mtu_data, size_t rx_queue);

  EndpointAddr local_addr() const override { return {host_, 0}; }
  size_t mtu_data() const override { return mtu_data_; }
  size_t rx_queue_size() const override { return rxq_.capacity(); }

  size_t tx_burst(std::span<const TxPacket> pkts) override;
  size_t rx_burst(size_t max, std::vector<RxPacket>& out) override;
  void release_rx(uint32_t desc) override { rxq_.release(desc); }
  void flush_tx() override;
  void send_control(EndpointAddr dest, std::span<const std::byte> bytes) override;
  bool poll_control(ControlMsg& out) override;
  void wake() override;
  uint64_t rx_drops() const override { return rxq_.drops(); }

  RxQueue& rx_queue() { return rxq_; }
  bool has_input() const { return rxq_.ready_count() > 0 || !control_.empty(); }

 private:
  friend class SimNet;
  SimNet* net_;
  uint32_t host_;
  size_t mtu_data_;
  RxQueue rxq_;
  std::deque<ControlMsg> control_;
};

/// Seeded discrete-event model of hosts attached to one switch. Each host
/// has a full-duplex link to the switch; the switch forwards store-and-
/// forward into per-port FIFO queues that share one drop-tail buffer pool.
/// Events at equal times run in the order they were scheduled.
class SimNet {
 public:
  explicit SimNet(const SimConfig& cfg);
  ~SimNet();
  SimNet(const SimNet&) = delete;
  SimNet& operator=(const SimNet&) = delete;

  const SimConfig& config() const { return cfg_; }
  Timestamp now() const { return now_; }
  uint32_t num_hosts() const { return static_cast<uint32_t>(hosts_.size()); }

  VirtualClock& clock(uint32_t host) { return hosts_.at(host)->clock; }
  SimTransport& transport(uint32_t host) { return *hosts_.at(host)->transport; }
  void attach(uint32_t host, SimNode* node);

  /// Ask for a poll of `host` at or after `t`.
  void wake(uint32_t host, Timestamp t);
  /// Runs `fn` on `host` at `t` (or once the host is idle), charging its
  /// CPU time like a poll.
  void call_at(uint32_t host, Timestamp t, std::function<void()> fn);

  void run_until(Timestamp t);
  /// Runs until `pred()` holds (checked after every event), no events are
  /// left, or `limit` is reached. Returns pred().
  bool run_while_not(const std::function<bool()>& pred, Timestamp limit);

  void kill_host(uint32_t host);
  bool host_dead(uint32_t host) const { return hosts_.at(host)->dead; }
  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

  /// FNV-1a over every packet delivery and drop (time, endpoints, header,
  /// size, outcome).
  uint64_t trace_hash() const { return trace_hash_; }
  const NetStats& stats() const { return stats_; }
  const PortStats& port(uint32_t host) const { return hosts_.at(host)->port; }
  Duration cpu_time(uint32_t host) const { return hosts_.at(host)->cpu; }
  uint64_t polls(uint32_t host) const { return hosts_.at(host)->polls; }

  Duration serialization(size_t bytes) const;

 private:
  friend class SimTransport;

  enum class EvType : uint8_t {
    kPoll,
    kCall,
    kUplinkDone,
    kSwitchEnqueue,
    kPortDone,
    kHostArrive,
    kControl,
  };

  struct Event {
    int64_t t;
    uint64_t seq;
    EvType type;
    uint32_t a;
    uint64_t b;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  struct Pkt {
    uint32_t src = 0;
    uint32_t dst = 0;
    std::vector<std::byte> bytes;
    // Until read out, the payload lives in the sender's msgbuf.
    TxPacket pending;
    size_t size = 0;
    bool materialized = false;
    bool fault_done = false;
    bool reordered = false;
  };

  struct Host {
    VirtualClock clock;
    std::unique_ptr<SimTransport> transport;
    SimNode* node = nullptr;
    bool dead = false;
    Timestamp busy_until{0};
    Timestamp next_poll = kNever;
    uint64_t poll_gen = 0;
    std::deque<uint32_t> nic_q;  // waiting for the uplink
    bool uplink_busy = false;
    std::deque<uint32_t> port_q;  // switch egress toward this host
    bool port_busy = false;
    PortStats port;
    Duration cpu{0};
    uint64_t polls = 0;
    int64_t last_poll_t = -1;
    uint64_t same_time_polls = 0;
  };

  void push(int64_t t, EvType type, uint32_t a, uint64_t b = 0);
  void step(const Event& e);
  void do_poll(uint32_t host, Timestamp t);
  void after_run(uint32_t host);

  uint32_t alloc_pkt();
  void free_pkt(uint32_t id);
  void materialize(Pkt& p);
  void start_uplink(uint32_t host, Timestamp t);
  void start_port(uint32_t host, Timestamp t);
  void arrive(uint32_t id, Timestamp t);
  void hash_event(const Pkt& p, Timestamp t, uint8_t outcome);
  double uniform();

  size_t nic_tx(uint32_t host, std::span<const TxPacket> pkts);
  void nic_flush(uint32_t host);
  void control(uint32_t src, EndpointAddr dst, std::span<const std::byte> bytes);

  SimConfig cfg_;
  Duration prop_;
  Duration fwd_;
  Duration control_latency_;
  Duration reorder_delay_;
  Timestamp now_{0};
  uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<std::unique_ptr<Host>> hosts_;
  std::vector<Pkt> pkts_;
  std::vector<uint32_t> free_pkts_;
  std::map<uint64_t, std::function<void()>> calls_;
  std::map<uint64_t, ControlMsg> controls_;
  std::map<uint64_t, uint32_t> control_dst_;
  uint64_t next_id_ = 0;
  std::mt19937_64 rng_;
  FaultHook fault_hook_;
  uint64_t trace_hash_ = 0xcbf29ce484222325ull;
  NetStats stats_;
};

}  // namespace dgrpc::sim
