#include "dgrpc/timely.h"

#include <algorithm>

namespace dgrpc {

void CongestionKnobs::validate() const {
  if (!(ewma_alpha > 0 && ewma_alpha <= 1)) throw ConfigError("ewma_alpha must be in (0, 1]");
  if (!(beta > 0 && beta < 1)) throw ConfigError("beta must be in (0, 1)");
  if (!(t_low_us < t_high_us)) throw ConfigError("t_low must be below t_high");
  if (!(min_rtt_us > 0)) throw ConfigError("min_rtt must be positive");
  if (!(delta_bps > 0)) throw ConfigError("delta must be positive");
  if (!(min_rate_bps > 0)) throw ConfigError("min_rate must be positive");
  if (!(max_decrease > 0 && max_decrease <= 1)) throw ConfigError("max_decrease must be in (0, 1]");
}

TimelyState::TimelyState(double link_rate_bps, const CongestionKnobs& knobs)
    : knobs_(&knobs), link_rate_(link_rate_bps), rate_(link_rate_bps) {
  if (!(link_rate_bps >= knobs.min_rate_bps)) throw ConfigError("link rate below min_rate");
}

void TimelyState::set_rate(double bps) {
  rate_ = std::clamp(bps, knobs_->min_rate_bps, link_rate_);
}

bool TimelyState::record_rtt_and_update(double rtt_us, Timestamp now, bool timely_bypass) {
  const CongestionKnobs& k = *knobs_;
  if (timely_bypass && uncongested() && rtt_us < k.t_low_us) {
    bypassed_++;
    return true;
  }

  if (prev_rtt_ == 0) prev_rtt_ = rtt_us;
  const double diff = rtt_us - prev_rtt_;
  neg_gradient_count_ = diff < 0 ? neg_gradient_count_ + 1 : 0;
  avg_rtt_diff_ = (1 - k.ewma_alpha) * avg_rtt_diff_ + k.ewma_alpha * diff;
  const double gradient = avg_rtt_diff_ / k.min_rtt_us;

  // Samples arrive per packet; weighting by the time since the last update
  // keeps a burst of samples from compounding into one huge step.
  double w = 1;
  if (updates_ > 0) {
    w = std::min(1.0, to_usec(now - last_update_) / std::max(rtt_us, k.min_rtt_us));
    w = std::max(w, 0.0);
  }

  double next;
  if (rtt_us < k.t_low_us) {
    next = rate_ + w * k.delta_bps;
  } else if (rtt_us > k.t_high_us) {
    next = rate_ * (1 - w * k.beta * (1 - k.t_high_us / rtt_us));
  } else if (gradient <= 0) {
    const double n = neg_gradient_count_ >= k.hai_threshold ? k.hai_multiplier : 1.0;
    next = rate_ + w * n * k.delta_bps;
  } else {
    next = rate_ * (1 - w * k.beta * gradient);
  }

  next = std::max(next, rate_ * (1 - k.max_decrease));
  rate_ = std::clamp(next, k.min_rate_bps, link_rate_);
  prev_rtt_ = rtt_us;
  last_update_ = now;
  updates_++;
  return false;
}

}  // namespace dgrpc
