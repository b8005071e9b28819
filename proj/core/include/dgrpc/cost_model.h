#pragma once

#include <cmath>

#include "dgrpc/common.h"

namespace dgrpc {

/// CPU cost charged to an endpoint's clock for each unit of work. Only a
/// virtual clock turns these into elapsed time; with the real clock they
/// are ignored. Values are per operation, in nanoseconds.
struct CostModel {
  double loop_ns = 40;         // fixed cost of one event-loop iteration
  double rx_pkt_ns = 50;       // per received packet
  double tx_pkt_ns = 40;       // per transmitted packet
  double timestamp_ns = 8;     // one clock read for RTT measurement
  double cc_update_ns = 30;    // one Timely rate computation
  double wheel_ns = 20;        // insert into and release from the timing wheel
  double alloc_ns = 60;        // dynamic msgbuf allocation
  double copy_ns_per_byte = 0.05;
  double flush_tx_ns = 2000;   // TX queue flush

  static CostModel zero() {
    return {0, 0, 0, 0, 0, 0, 0, 0, 0};
  }

  static Duration ns(double v) { return Duration(static_cast<int64_t>(std::llround(v))); }
  Duration copy(size_t bytes) const { return ns(copy_ns_per_byte * static_cast<double>(bytes)); }
};

}  // namespace dgrpc
