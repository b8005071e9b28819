#include "dgrpc/sim/cluster.h"

namespace dgrpc::sim {

SimCluster::SimCluster(const SimConfig& net, const EndpointConfig& ep)
    : SimCluster(net, std::vector<EndpointConfig>(net.hosts, ep)) {}

SimCluster::SimCluster(const SimConfig& net, const std::vector<EndpointConfig>& eps)
    : net_(std::make_unique<SimNet>(net)) {
  if (eps.size() != net.hosts) throw ConfigError("need one endpoint config per host");
  for (uint32_t i = 0; i < net.hosts; i++) {
    EndpointConfig cfg = eps[i];
    cfg.link_rate_bps = net.link_bps();
    eps_.push_back(std::make_unique<Endpoint>(net_->transport(i), net_->clock(i), cfg));
    nodes_.push_back(std::make_unique<EndpointNode>(*eps_.back()));
    net_->attach(i, nodes_.back().get());
  }
}

SimCluster::~SimCluster() {
  for (uint32_t i = 0; i < nodes_.size(); i++) net_->attach(i, nullptr);
  nodes_.clear();
  eps_.clear();
}

uint16_t SimCluster::connect(uint32_t client, uint32_t server, std::optional<uint32_t> credits,
                             std::optional<uint32_t> num_slots) {
  uint16_t num = 0;
  net_->call_at(client, net_->now(), [&] { num = ep(client).create_session(addr(server), credits, num_slots); });
  net_->run_until(net_->now());
  Endpoint& c = ep(client);
  const bool ok = net_->run_while_not(
      [&] {
        const Session* s = c.session(num);
        return s != nullptr && s->state != SessionState::kConnecting;
      },
      net_->now() + std::chrono::seconds(2));
  if (!ok || !c.is_connected(num)) throw SessionError("session did not connect");
  return num;
}

}  // namespace dgrpc::sim
