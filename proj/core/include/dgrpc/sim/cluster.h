#pragma once

#include <memory>
#include <vector>

#include "dgrpc/endpoint.h"
#include "dgrpc/sim/simnet.h"

namespace dgrpc::sim {

/// SimNode running an Endpoint.
class EndpointNode final : public SimNode {
 public:
  explicit EndpointNode(Endpoint& ep) : ep_(&ep) {}
  void run_once() override { ep_->run_event_loop_once(); }
  Timestamp next_wakeup() const override { return ep_->next_wakeup(); }

 private:
  Endpoint* ep_;
};

/// A SimNet with one Endpoint per host.
class SimCluster {
 public:
  SimCluster(const SimConfig& net, const EndpointConfig& ep);
  /// Per-host endpoint configuration.
  SimCluster(const SimConfig& net, const std::vector<EndpointConfig>& eps);
  ~SimCluster();

  SimNet& net() { return *net_; }
  Endpoint& ep(uint32_t host) { return *eps_.at(host); }
  uint32_t size() const { return net_->num_hosts(); }
  static EndpointAddr addr(uint32_t host) { return {host, 0}; }

  /// Creates a client session from `client` to `server` and runs the
  /// simulation until it is connected. Throws SessionError on failure.
  uint16_t connect(uint32_t client, uint32_t server, std::optional<uint32_t> credits = {},
                   std::optional<uint32_t> num_slots = {});

  /// Runs `fn` on `host`'s thread at time `t`.
  void at(uint32_t host, Timestamp t, std::function<void()> fn) {
    net_->call_at(host, t, std::move(fn));
  }

 private:
  std::unique_ptr<SimNet> net_;
  std::vector<std::unique_ptr<Endpoint>> eps_;
  std::vector<std::unique_ptr<EndpointNode>> nodes_;
};

}  // namespace dgrpc::sim
