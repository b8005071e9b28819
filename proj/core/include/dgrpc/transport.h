#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dgrpc/common.h"
#include "dgrpc/msgbuf.h"
#include "dgrpc/packet_header.h"

namespace dgrpc {

/// Identifies one endpoint on the medium. For UDP, host is the IPv4 address
/// in host byte order and port the UDP port; in the simulator, host is the
/// simulated host index.
struct EndpointAddr {
  uint32_t host = 0;
  uint16_t port = 0;
  auto operator<=>(const EndpointAddr&) const = default;
};

/// One outgoing datagram. `payload` may point into an application msgbuf;
/// when it does, `owner` names that msgbuf so the transport can account for
/// the reference until the bytes have been read out.
struct TxPacket {
  EndpointAddr dest;
  HeaderBytes header{};
  std::span<const std::byte> payload;
  const MsgBuf* owner = nullptr;
};

/// A received datagram borrowed from the transport's receive queue. `bytes`
/// stays valid until the descriptor is handed back via release_rx().
struct RxPacket {
  EndpointAddr src;
  std::span<const std::byte> bytes;
  uint32_t desc = 0;
};

struct ControlMsg {
  EndpointAddr src;
  std::vector<std::byte> bytes;
};

/// Fixed ring of receive buffers. A datagram arriving while no descriptor is
/// free is dropped and counted; lent descriptors are not reused until
/// returned.
class RxQueue {
 public:
  RxQueue(size_t capacity, size_t buf_size);

  size_t capacity() const { return capacity_; }
  size_t buf_size() const { return buf_size_; }
  size_t free_count() const { return free_.size(); }
  size_t ready_count() const { return ready_.size(); }
  uint64_t drops() const { return drops_; }
  uint64_t delivered() const { return delivered_; }

  /// Copies `bytes` into a free buffer. Returns false (and counts a drop) if
  /// none is free or the datagram does not fit.
  bool deliver(EndpointAddr src, std::span<const std::byte> bytes);

  /// Lends up to `max` ready packets to the caller, appending to `out`.
  size_t take(size_t max, std::vector<RxPacket>& out);

  /// Throws std::logic_error if `desc` is not currently lent out.
  void release(uint32_t desc);

 private:
  struct Slot {
    EndpointAddr src;
    uint32_t len = 0;
    bool lent = false;
  };

  struct FreeDeleter {
    void operator()(std::byte* p) const { std::free(p); }
  };

  size_t capacity_;
  size_t buf_size_;
  std::unique_ptr<std::byte[], FreeDeleter> mem_;
  std::vector<Slot> slots_;
  std::vector<uint32_t> free_;
  std::deque<uint32_t> ready_;
  uint64_t drops_ = 0;
  uint64_t delivered_ = 0;
};

/// Unreliable datagram transport bound to one endpoint thread.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual EndpointAddr local_addr() const = 0;
  virtual size_t mtu_data() const = 0;
  virtual size_t rx_queue_size() const = 0;

  /// Hands packets to the medium. No delivery guarantee. Throws ConfigError
  /// for an unresolvable destination.
  virtual size_t tx_burst(std::span<const TxPacket> pkts) = 0;

  /// Appends up to `max` received packets to `out`.
  virtual size_t rx_burst(size_t max, std::vector<RxPacket>& out) = 0;
  virtual void release_rx(uint32_t desc) = 0;

  /// Returns once no transmit queue entry references any msgbuf.
  virtual void flush_tx() = 0;

  /// Reliable management channel, separate from the datagram path.
  virtual void send_control(EndpointAddr dest, std::span<const std::byte> bytes) = 0;
  virtual bool poll_control(ControlMsg& out) = 0;

  /// Called when the endpoint gets work from outside its event loop, so a
  /// scheduler can arrange a poll. Real transports ignore it.
  virtual void wake() {}

  virtual uint64_t rx_drops() const = 0;
};

/// Builds the wire image (header followed by payload) of a packet.
std::vector<std::byte> materialize(const TxPacket& p);

}  // namespace dgrpc
