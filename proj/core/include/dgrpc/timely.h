#pragma once

#include <cstdint>

#include "dgrpc/common.h"

namespace dgrpc {

/// Tunables for RTT-based rate control. Only t_low_us has a recommended
/// value behind it; the rest are declared defaults.
struct CongestionKnobs {
  double t_low_us = 50;
  double t_high_us = 1000;
  double ewma_alpha = 0.46;
  double beta = 0.26;           // multiplicative decrease factor
  double delta_bps = 10e6;      // additive increase step
  double min_rtt_us = 2;        // gradient normalization
  double min_rate_bps = 15e6;
  uint32_t hai_threshold = 5;   // consecutive negative gradients before HAI
  double hai_multiplier = 5;
  double max_decrease = 0.5;    // one update cuts the rate by at most this fraction

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Which common-case optimizations are on. All default to on.
struct OptimizationFlags {
  bool congestion_control = true;
  bool timely_bypass = true;
  bool limiter_bypass = true;
  bool batched_timestamps = true;
  bool preallocated_responses = true;
  bool zero_copy_rx = true;
};

/// Per-session Timely state.
///
/// Update rule for one RTT sample (rates in bit/s, times in us):
///
///   bypass: if timely_bypass and the session is uncongested and
///           rtt < t_low, nothing changes.
///   diff      = rtt - prev_rtt           (prev_rtt = rtt on the first sample)
///   avg_diff  = (1 - alpha) * avg_diff + alpha * diff
///   gradient  = avg_diff / min_rtt
///   w         = min(1, (now - last_update) / max(rtt, min_rtt))
///               (w = 1 on the first sample)
///   rtt < t_low       : rate + w * delta
///   rtt > t_high      : rate * (1 - w * beta * (1 - t_high / rtt))
///   gradient <= 0     : rate + w * n * delta, n = hai_multiplier after
///                       hai_threshold consecutive negative diffs, else 1
///   otherwise         : rate * (1 - w * beta * gradient)
///   rate = clamp(max(new, rate * (1 - max_decrease)), min_rate, link_rate)
class TimelyState {
 public:
  TimelyState(double link_rate_bps, const CongestionKnobs& knobs);

  double rate_bps() const { return rate_; }
  double link_rate_bps() const { return link_rate_; }
  double prev_rtt_us() const { return prev_rtt_; }
  double avg_rtt_diff_us() const { return avg_rtt_diff_; }
  Timestamp last_update() const { return last_update_; }
  uint64_t updates() const { return updates_; }
  uint64_t bypassed() const { return bypassed_; }

  bool uncongested() const { return rate_ >= link_rate_; }

  /// Returns true if the sample was bypassed (no state written).
  bool record_rtt_and_update(double rtt_us, Timestamp now, bool timely_bypass = true);

  /// Test hook: pin the rate.
  void set_rate(double bps);

 private:
  const CongestionKnobs* knobs_;
  double link_rate_;
  double rate_;
  double prev_rtt_ = 0;
  double avg_rtt_diff_ = 0;
  uint32_t neg_gradient_count_ = 0;
  Timestamp last_update_{0};
  uint64_t updates_ = 0;
  uint64_t bypassed_ = 0;
};

}  // namespace dgrpc
