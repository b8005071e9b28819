#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dgrpc/common.h"

namespace dgrpc::sim {

/// Network parameters. Text form is one `key = value` per line; `#` starts
/// a comment. Keys match the field names.
struct SimConfig {
  uint32_t hosts = 2;
  double link_gbps = 25;
  double prop_us = 1.25;           // per link
  double fwd_ns = 500;             // switch forwarding latency
  uint64_t switch_buffer_bytes = 12ull << 20;
  double loss = 0;                 // per-packet, applied at the receiving host
  double reorder = 0;              // probability a packet is held back
  double reorder_delay_us = 20;
  double control_latency_us = 10;  // management channel, lossless
  size_t mtu_data = kDefaultMtuData;
  size_t rx_queue = kDefaultRxQueueSize;
  uint64_t seed = 1;

  double link_bps() const { return link_gbps * 1e9; }

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  static SimConfig parse(const std::string& text);
  static SimConfig load(const std::string& path);
  std::string to_text() const;
};

}  // namespace dgrpc::sim
