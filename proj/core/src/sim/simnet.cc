#include "dgrpc/sim/simnet.h"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace dgrpc::sim {

namespace {

Duration us(double v) { return Duration(static_cast<int64_t>(std::llround(v * 1e3))); }

}  // namespace

// ---------------------------------------------------------------------------
// SimTransport

SimTransport::SimTransport(SimNet& net, uint32_t host, size_t mtu_data, size_t rx_queue)
    : net_(&net), host_(host), mtu_data_(mtu_data), rxq_(rx_queue, mtu_data + kHeaderSize) {}

size_t SimTransport::tx_burst(std::span<const TxPacket> pkts) { return net_->nic_tx(host_, pkts); }

size_t SimTransport::rx_burst(size_t max, std::vector<RxPacket>& out) { return rxq_.take(max, out); }

void SimTransport::flush_tx() { net_->nic_flush(host_); }

void SimTransport::send_control(EndpointAddr dest, std::span<const std::byte> bytes) {
  net_->control(host_, dest, bytes);
}

bool SimTransport::poll_control(ControlMsg& out) {
  if (control_.empty()) return false;
  out = std::move(control_.front());
  control_.pop_front();
  return true;
}

void SimTransport::wake() { net_->wake(host_, net_->clock(host_).now()); }

// ---------------------------------------------------------------------------
// SimNet

SimNet::SimNet(const SimConfig& cfg)
    : cfg_(cfg),
      prop_(us(cfg.prop_us)),
      fwd_(Duration(static_cast<int64_t>(std::llround(cfg.fwd_ns)))),
      control_latency_(us(cfg.control_latency_us)),
      reorder_delay_(us(cfg.reorder_delay_us)),
      rng_(cfg.seed) {
  cfg_.validate();
  for (uint32_t i = 0; i < cfg_.hosts; i++) {
    auto h = std::make_unique<Host>();
    h->transport = std::make_unique<SimTransport>(*this, i, cfg_.mtu_data, cfg_.rx_queue);
    hosts_.push_back(std::move(h));
  }
}

SimNet::~SimNet() = default;

Duration SimNet::serialization(size_t bytes) const {
  return Duration(static_cast<int64_t>(std::llround(static_cast<double>(bytes) * 8.0 / cfg_.link_gbps)));
}

double SimNet::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

void SimNet::attach(uint32_t host, SimNode* node) {
  hosts_.at(host)->node = node;
  wake(host, now_);
}

void SimNet::push(int64_t t, EvType type, uint32_t a, uint64_t b) {
  events_.push(Event{t, seq_++, type, a, b});
}

void SimNet::wake(uint32_t host, Timestamp t) {
  Host& h = *hosts_.at(host);
  if (h.dead || h.node == nullptr) return;
  t = std::max({t, h.busy_until, now_});
  if (t >= h.next_poll) return;
  h.next_poll = t;
  h.poll_gen++;
  push(t.count(), EvType::kPoll, host, h.poll_gen);
}

void SimNet::call_at(uint32_t host, Timestamp t, std::function<void()> fn) {
  const uint64_t id = next_id_++;
  calls_.emplace(id, std::move(fn));
  push(std::max(t, now_).count(), EvType::kCall, host, id);
}

void SimNet::run_until(Timestamp t) {
  while (!events_.empty() && events_.top().t <= t.count()) {
    const Event e = events_.top();
    events_.pop();
    now_ = Timestamp(e.t);
    step(e);
  }
  now_ = std::max(now_, t);
}

bool SimNet::run_while_not(const std::function<bool()>& pred, Timestamp limit) {
  while (!pred()) {
    if (events_.empty() || events_.top().t > limit.count()) return pred();
    const Event e = events_.top();
    events_.pop();
    now_ = Timestamp(e.t);
    step(e);
  }
  return true;
}

void SimNet::step(const Event& e) {
  stats_.events++;
  const Timestamp t(e.t);
  switch (e.type) {
    case EvType::kPoll: {
      Host& h = *hosts_[e.a];
      if (h.dead || e.b != h.poll_gen) return;
      h.next_poll = kNever;
      do_poll(e.a, t);
      return;
    }
    case EvType::kCall: {
      auto it = calls_.find(e.b);
      auto fn = std::move(it->second);
      calls_.erase(it);
      Host& h = *hosts_[e.a];
      if (h.dead) return;
      const Timestamp start = std::max(t, h.busy_until);
      h.clock.begin(start);
      fn();
      h.busy_until = start + h.clock.used();
      h.cpu += h.clock.used();
      after_run(e.a);
      return;
    }
    case EvType::kUplinkDone: {
      const auto id = static_cast<uint32_t>(e.b);
      Pkt& p = pkts_[id];
      Host& h = *hosts_[e.a];
      h.uplink_busy = false;
      if (h.dead) {
        free_pkt(id);
      } else {
        push((t + prop_ + fwd_).count(), EvType::kSwitchEnqueue, p.dst, id);
      }
      if (!h.nic_q.empty() && !h.dead) start_uplink(e.a, t);
      return;
    }
    case EvType::kSwitchEnqueue: {
      const auto id = static_cast<uint32_t>(e.b);
      Pkt& p = pkts_[id];
      Host& port = *hosts_[e.a];
      if (stats_.buffer_bytes + p.size > cfg_.switch_buffer_bytes) {
        port.port.drops++;
        stats_.switch_drops++;
        hash_event(p, t, 1);
        free_pkt(id);
        return;
      }
      stats_.buffer_bytes += p.size;
      if (stats_.buffer_bytes > cfg_.switch_buffer_bytes) stats_.buffer_violations++;
      stats_.peak_buffer_bytes = std::max(stats_.peak_buffer_bytes, stats_.buffer_bytes);
      port.port.queue_bytes += p.size;
      port.port.peak_queue_bytes = std::max(port.port.peak_queue_bytes, port.port.queue_bytes);
      port.port_q.push_back(id);
      if (!port.port_busy) start_port(e.a, t);
      return;
    }
    case EvType::kPortDone: {
      const auto id = static_cast<uint32_t>(e.b);
      Pkt& p = pkts_[id];
      Host& port = *hosts_[e.a];
      stats_.buffer_bytes -= p.size;
      port.port.queue_bytes -= p.size;
      port.port.delivered_pkts++;
      port.port.delivered_bytes += p.size;
      port.port_busy = false;
      push((t + prop_).count(), EvType::kHostArrive, e.a, id);
      if (!port.port_q.empty()) start_port(e.a, t);
      return;
    }
    case EvType::kHostArrive:
      arrive(static_cast<uint32_t>(e.b), t);
      return;
    case EvType::kControl: {
      auto it = controls_.find(e.b);
      ControlMsg msg = std::move(it->second);
      controls_.erase(it);
      Host& h = *hosts_[e.a];
      if (h.dead) return;
      h.transport->control_.push_back(std::move(msg));
      wake(e.a, t);
      return;
    }
  }
}

void SimNet::do_poll(uint32_t host, Timestamp t) {
  Host& h = *hosts_[host];
  if (t.count() == h.last_poll_t) {
    if (++h.same_time_polls > 1000000) {
      throw std::logic_error("host " + std::to_string(host) + " polls without making progress");
    }
  } else {
    h.last_poll_t = t.count();
    h.same_time_polls = 0;
  }
  h.polls++;
  h.clock.begin(t);
  h.node->run_once();
  h.busy_until = t + h.clock.used();
  h.cpu += h.clock.used();
  after_run(host);
}

void SimNet::after_run(uint32_t host) {
  Host& h = *hosts_[host];
  if (h.dead || h.node == nullptr) return;
  Timestamp next = h.node->next_wakeup();
  if (h.transport->has_input()) next = h.busy_until;
  if (next != kNever) wake(host, std::max(next, h.busy_until));
}

uint32_t SimNet::alloc_pkt() {
  if (!free_pkts_.empty()) {
    const uint32_t id = free_pkts_.back();
    free_pkts_.pop_back();
    return id;
  }
  pkts_.emplace_back();
  return static_cast<uint32_t>(pkts_.size() - 1);
}

void SimNet::free_pkt(uint32_t id) {
  Pkt& p = pkts_[id];
  if (!p.materialized && p.pending.owner != nullptr) p.pending.owner->release_tx();
  p.pending = TxPacket{};
  p.materialized = false;
  p.fault_done = false;
  p.reordered = false;
  free_pkts_.push_back(id);
}

void SimNet::materialize(Pkt& p) {
  if (p.materialized) return;
  p.bytes.resize(kHeaderSize + p.pending.payload.size());
  std::memcpy(p.bytes.data(), p.pending.header.data(), kHeaderSize);
  if (!p.pending.payload.empty()) {
    std::memcpy(p.bytes.data() + kHeaderSize, p.pending.payload.data(), p.pending.payload.size());
  }
  if (p.pending.owner != nullptr) p.pending.owner->release_tx();
  p.pending = TxPacket{};
  p.materialized = true;
}

size_t SimNet::nic_tx(uint32_t host, std::span<const TxPacket> pkts) {
  Host& h = *hosts_.at(host);
  if (h.dead) return 0;
  for (const TxPacket& tp : pkts) {
    if (tp.dest.host >= hosts_.size() || tp.dest.host == host) {
      throw ConfigError("unresolvable destination host " + std::to_string(tp.dest.host));
    }
    if (tp.payload.size() > cfg_.mtu_data) throw SizeError("packet payload exceeds mtu_data");
    const uint32_t id = alloc_pkt();
    Pkt& p = pkts_[id];
    p.src = host;
    p.dst = tp.dest.host;
    p.pending = tp;
    p.size = kHeaderSize + tp.payload.size();
    if (tp.owner != nullptr) tp.owner->retain_tx();
    h.nic_q.push_back(id);
    stats_.pkts_sent++;
  }
  if (!h.uplink_busy && !h.nic_q.empty()) start_uplink(host, h.clock.now());
  return pkts.size();
}

void SimNet::nic_flush(uint32_t host) {
  Host& h = *hosts_.at(host);
  for (uint32_t id : h.nic_q) materialize(pkts_[id]);
}

void SimNet::start_uplink(uint32_t host, Timestamp t) {
  Host& h = *hosts_[host];
  const uint32_t id = h.nic_q.front();
  h.nic_q.pop_front();
  Pkt& p = pkts_[id];
  materialize(p);  // the NIC reads the bytes as serialization starts
  h.uplink_busy = true;
  push((t + serialization(p.size)).count(), EvType::kUplinkDone, host, id);
}

void SimNet::start_port(uint32_t host, Timestamp t) {
  Host& h = *hosts_[host];
  const uint32_t id = h.port_q.front();
  h.port_q.pop_front();
  h.port_busy = true;
  push((t + serialization(pkts_[id].size)).count(), EvType::kPortDone, host, id);
}

void SimNet::hash_event(const Pkt& p, Timestamp t, uint8_t outcome) {
  auto mix = [this](const void* data, size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; i++) {
      trace_hash_ ^= b[i];
      trace_hash_ *= 0x100000001b3ull;
    }
  };
  const int64_t tc = t.count();
  const uint64_t size = p.size;
  mix(&tc, sizeof tc);
  mix(&p.src, sizeof p.src);
  mix(&p.dst, sizeof p.dst);
  mix(&size, sizeof size);
  mix(&outcome, 1);
  mix(p.bytes.data(), std::min<size_t>(p.bytes.size(), kHeaderSize));
}

void SimNet::arrive(uint32_t id, Timestamp t) {
  Pkt& p = pkts_[id];
  Host& h = *hosts_[p.dst];
  if (h.dead) {
    stats_.dead_drops++;
    hash_event(p, t, 2);
    free_pkt(id);
    return;
  }
  if (fault_hook_ && !p.fault_done) {
    p.fault_done = true;
    PacketInfo info;
    info.src = p.src;
    info.dst = p.dst;
    info.bytes = p.size;
    info.now = t;
    try {
      info.header = unpack_header(std::span<const std::byte>(p.bytes).first(kHeaderSize));
      info.has_header = true;
    } catch (const CodecError&) {
    }
    const FaultAction act = fault_hook_(info);
    if (act.drop) {
      stats_.fault_drops++;
      hash_event(p, t, 3);
      free_pkt(id);
      return;
    }
    if (act.delay > Duration::zero()) {
      stats_.fault_delays++;
      push((t + act.delay).count(), EvType::kHostArrive, p.dst, id);
      return;
    }
  }
  if (cfg_.loss > 0 && uniform() < cfg_.loss) {
    stats_.loss_drops++;
    hash_event(p, t, 4);
    free_pkt(id);
    return;
  }
  if (cfg_.reorder > 0 && !p.reordered && uniform() < cfg_.reorder) {
    p.reordered = true;
    stats_.reordered++;
    push((t + reorder_delay_).count(), EvType::kHostArrive, p.dst, id);
    return;
  }
  const bool ok = h.transport->rxq_.deliver(EndpointAddr{p.src, 0}, p.bytes);
  hash_event(p, t, ok ? 0 : 5);
  free_pkt(id);
  if (ok) wake(p.dst, t);
}

void SimNet::control(uint32_t src, EndpointAddr dst, std::span<const std::byte> bytes) {
  if (hosts_.at(src)->dead) return;
  if (dst.host >= hosts_.size()) throw ConfigError("unresolvable control destination");
  const uint64_t id = next_id_++;
  controls_.emplace(id, ControlMsg{EndpointAddr{src, 0}, {bytes.begin(), bytes.end()}});
  stats_.control_msgs++;
  const Timestamp t = std::max(now_, hosts_[src]->clock.now());
  push((t + control_latency_).count(), EvType::kControl, dst.host, id);
}

void SimNet::kill_host(uint32_t host) {
  Host& h = *hosts_.at(host);
  if (h.dead) return;
  h.dead = true;
  h.poll_gen++;
  h.next_poll = kNever;
  for (uint32_t id : h.nic_q) free_pkt(id);
  h.nic_q.clear();
  h.transport->control_.clear();
}

}  // namespace dgrpc::sim
