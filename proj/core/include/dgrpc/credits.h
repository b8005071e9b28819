#pragma once

#include <cstdint>
#include <stdexcept>

namespace dgrpc {

/// Per-session packet credits. A client session starts with `budget`
/// credits; sending a packet consumes one and receiving one replenishes
/// one. The counter never leaves [0, budget].
class CreditCounter {
 public:
  explicit CreditCounter(uint32_t budget = 0) : budget_(budget), available_(budget) {}

  uint32_t budget() const { return budget_; }
  uint32_t available() const { return available_; }
  uint32_t in_flight() const { return budget_ - available_; }

  /// Returns false when no credit is left; the caller defers transmission.
  bool try_consume() {
    if (available_ == 0) return false;
    available_--;
    consumed_++;
    return true;
  }

  void replenish() { reclaim(1); }

  /// Returns `n` credits, e.g. after rolling back unacknowledged sends.
  void reclaim(uint32_t n) {
    if (n > in_flight()) throw std::logic_error("credit counter would exceed its budget");
    available_ += n;
    replenished_ += n;
  }

  uint64_t consumed_total() const { return consumed_; }
  uint64_t replenished_total() const { return replenished_; }

 private:
  uint32_t budget_;
  uint32_t available_;
  uint64_t consumed_ = 0;
  uint64_t replenished_ = 0;
};

}  // namespace dgrpc
