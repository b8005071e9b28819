#pragma once

#include <algorithm>
#include <cstdint>

#include "dgrpc/clock.h"
#include "dgrpc/cost_model.h"
#include "dgrpc/timely.h"
#include "dgrpc/timing_wheel.h"

namespace dgrpc {

/// Rate-control state of one client session: its Timely instance, the
/// earliest time its next packet may leave, and how many of its packets sit
/// in the wheel.
struct PacedSession {
  explicit PacedSession(double link_rate_bps, const CongestionKnobs& knobs)
      : timely(link_rate_bps, knobs) {}

  TimelyState timely;
  Timestamp next_send{0};
  uint32_t queued = 0;
};

enum class TxDecision : uint8_t { kTransmitNow, kScheduled };

struct ScheduleResult {
  TxDecision decision = TxDecision::kTransmitNow;
  Timestamp release_at{0};
};

inline Duration serialization_time(size_t bytes, double rate_bps) {
  return Duration(static_cast<int64_t>(static_cast<double>(bytes) * 8e9 / rate_bps + 0.5));
}

/// Sends directly when congestion control is off, or when the limiter
/// bypass applies (session uncongested with nothing already queued, so
/// bypassing cannot reorder its packets). Otherwise places the packet in
/// the wheel at the session's next send time and advances that time by the
/// packet's serialization time at the current rate.
template <typename T>
ScheduleResult schedule_or_bypass(TimingWheel<T>& wheel, PacedSession& s, T entry,
                                  size_t wire_bytes, Timestamp now,
                                  const OptimizationFlags& flags) {
  if (!flags.congestion_control) return {TxDecision::kTransmitNow, now};
  if (flags.limiter_bypass && s.timely.uncongested() && s.queued == 0) {
    return {TxDecision::kTransmitNow, now};
  }
  const Timestamp send = std::max(now, s.next_send);
  s.next_send = send + serialization_time(wire_bytes, s.timely.rate_bps());
  const Timestamp bucket = wheel.insert(std::move(entry), send, now);
  s.queued++;
  return {TxDecision::kScheduled, bucket};
}

/// Timestamps for RTT measurement. In batched mode the clock is read once
/// per RX or TX batch and every packet of the batch shares that value;
/// otherwise each packet pays for its own read.
class RttTimestamper {
 public:
  RttTimestamper(EndpointClock& clock, const CostModel& cost) : clock_(&clock), cost_(&cost) {}

  void set_per_packet(bool per_packet) { per_packet_ = per_packet; }

  /// Called once at each batch boundary.
  Timestamp batch_timestamp() {
    clock_->charge(CostModel::ns(cost_->timestamp_ns));
    batch_ts_ = clock_->now();
    return batch_ts_;
  }

  Timestamp stamp() {
    if (!per_packet_) return batch_ts_;
    clock_->charge(CostModel::ns(cost_->timestamp_ns));
    return clock_->now();
  }

 private:
  EndpointClock* clock_;
  const CostModel* cost_;
  bool per_packet_ = false;
  Timestamp batch_ts_{0};
};

}  // namespace dgrpc
