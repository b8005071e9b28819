#pragma once

#include <string>
#include <vector>

#include "dgrpc/endpoint.h"
#include "dgrpc/sim/config.h"
#include "dgrpc/sim/stats.h"

// Canned experiments on the simulator. Host 0 is the server (or victim)
// unless stated otherwise. All of them are deterministic for a given
// configuration and seed.

namespace dgrpc::sim {

inline constexpr uint8_t kEchoReqType = 1;

struct LatencyParams {
  size_t num_rpcs = 10000;
  size_t msg_size = 32;
};

struct LatencyResult {
  size_t completed = 0;
  double p50_us = 0;
  double p99_us = 0;
  double p999_us = 0;
  uint64_t retransmits = 0;
  std::vector<double> samples_us;
};

/// Closed loop with one request outstanding; the server echoes requests.
LatencyResult run_latency(const SimConfig& net, const EndpointConfig& ep, const LatencyParams& p);

struct IncastParams {
  uint32_t fan_in = 50;
  size_t msg_size = size_t{8} << 20;
  uint32_t credits = 32;
  Duration warmup = std::chrono::milliseconds(20);
  Duration measure = std::chrono::milliseconds(30);
};

struct IncastResult {
  uint32_t fan_in = 0;
  bool cc = false;
  size_t msg_size = 0;
  uint64_t bytes = 0;  // delivered to the victim during the measurement window
  double total_gbps = 0;
  double p50_rtt_us = 0;
  double p99_rtt_us = 0;
  uint64_t drops = 0;
};

/// `fan_in` clients each keep one large request outstanding to host 0.
/// RTTs are per-packet samples taken by the clients.
IncastResult run_incast(const SimConfig& net, const EndpointConfig& ep, const IncastParams& p);

struct BandwidthParams {
  size_t msg_size = size_t{8} << 20;
  uint32_t credits = 32;
  size_t num_msgs = 50;
};

struct BandwidthResult {
  double loss = 0;
  size_t msg_size = 0;
  size_t completed = 0;
  double goodput_gbps = 0;
  double elapsed_ms = 0;
  uint64_t retransmits = 0;
};

/// One client sends `num_msgs` requests back to back, one outstanding.
BandwidthResult run_bandwidth(const SimConfig& net, const EndpointConfig& ep,
                              const BandwidthParams& p);

struct RateParams {
  uint32_t hosts = 4;
  uint32_t batch = 8;
  uint32_t batches_in_flight = 8;
  uint32_t credits = 32;
  uint32_t slots = 32;  // enough that the wheel's slot delay does not cap concurrency
  size_t msg_size = 32;
  Duration warmup = std::chrono::milliseconds(1);
  Duration measure = std::chrono::milliseconds(4);
};

struct RateResult {
  std::string label;
  double mrps_per_endpoint = 0;
  double p50_us = 0;
  uint64_t retransmits = 0;
};

/// Every host is client and server: it issues batches of `batch` small
/// requests spread over all other hosts.
RateResult run_rate(const SimConfig& net, const EndpointConfig& ep, const RateParams& p);

/// The rate benchmark with optimizations switched off one after another,
/// starting from `ep`'s flags.
std::vector<RateResult> run_rate_factor_analysis(const SimConfig& net, const EndpointConfig& ep,
                                                 const RateParams& p);

struct KvParams {
  uint32_t clients = 2;
  uint32_t outstanding = 4;
  size_t ops = 20000;
  size_t keys = 1000;
  uint32_t scan_every = 100;  // every n-th operation is a scan
  Duration scan_cost = std::chrono::milliseconds(1);
};

struct KvResult {
  size_t ops = 0;
  double kops_per_s = 0;
  double get_p50_us = 0;
  double get_p99_us = 0;
  double scan_p50_us = 0;
  size_t mismatches = 0;
};

/// In-memory key-value store on host 0: GET and PUT run in the dispatch
/// thread, SCAN (a long operation) in worker mode.
KvResult run_kv(const SimConfig& net, const EndpointConfig& ep, const KvParams& p);

Table incast_table(const std::vector<IncastResult>& rows);
Table bandwidth_table(const std::vector<BandwidthResult>& rows);
Table latency_table(const std::vector<LatencyResult>& rows);
Table rate_table(const std::vector<RateResult>& rows);
Table kv_table(const std::vector<KvResult>& rows);

}  // namespace dgrpc::sim
