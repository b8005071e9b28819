#pragma once

#include <chrono>

#include "dgrpc/common.h"

namespace dgrpc {

/// Time source for an endpoint. charge() records CPU work done by the
/// endpoint; a virtual clock advances by it, the real clock ignores it.
class EndpointClock {
 public:
  virtual ~EndpointClock() = default;
  virtual Timestamp now() const = 0;
  virtual void charge(Duration d) = 0;
  virtual bool is_virtual() const = 0;
};

class RealClock final : public EndpointClock {
 public:
  Timestamp now() const override {
    return std::chrono::duration_cast<Duration>(
        std::chrono::steady_clock::now().time_since_epoch());
  }
  void charge(Duration) override {}
  bool is_virtual() const override { return false; }
};

/// Clock of a simulated host: the scheduler sets the poll start time and
/// reads back how much CPU time the endpoint consumed.
class VirtualClock final : public EndpointClock {
 public:
  void begin(Timestamp t) {
    base_ = t;
    used_ = Duration::zero();
  }
  Duration used() const { return used_; }

  Timestamp now() const override { return base_ + used_; }
  void charge(Duration d) override { used_ += d; }
  bool is_virtual() const override { return true; }

 private:
  Timestamp base_{0};
  Duration used_{0};
};

}  // namespace dgrpc
